#pragma once

#include <string>
#include <vector>

#include "nightlift/boxes.hpp"

namespace nightlift {

// One dataset entry: an image path plus its ground-truth boxes. Written as
// JSON lines: {"image": path, "boxes": [[x1,y1,x2,y2,class], ...]} with an
// optional "day_image" for paired night/day data.
struct ManifestRecord {
  std::string image;
  BoxSet boxes;           // classes inline, no scores
  std::string day_image;  // optional paired daytime reference
};

std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::vector<ManifestRecord>& records, const std::string& path);

// Resolves a record's image path against the manifest's own directory
// (absolute record paths pass through).
std::string resolve_manifest_path(const std::string& manifest_path,
                                  const std::string& record_path);

// Detector output for one image, exchanged as JSON lines:
// {"image_id": ..., "boxes": [[x1,y1,x2,y2], ...], "scores": [...],
//  "classes": [...]} ("classes" may be omitted and defaults to 0).
struct PredictionRecord {
  std::string image_id;
  BoxSet detections;  // scores required
};

std::vector<PredictionRecord> read_predictions(const std::string& path);
void write_predictions(const std::vector<PredictionRecord>& records, const std::string& path);

}  // namespace nightlift
