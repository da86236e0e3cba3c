#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nightlift/tensor.hpp"

namespace nightlift {

// Single-file archive: magic, JSON header (kind + metadata + array manifest),
// then raw little-endian doubles. Writes are atomic (temp file + rename).
struct Checkpoint {
  std::string kind;
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor* find(const std::string& name) const;
  Tensor require(const std::string& name) const;  // DataError if absent
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nightlift
