#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "nightlift/image.hpp"
#include "nightlift/rng.hpp"

namespace nightlift {

// Ordered set of style reference images. Index order is load order; when
// loaded from a directory, lexicographic filename order defines indices.
struct StylePool {
  std::vector<Image> refs;

  int count() const { return static_cast<int>(refs.size()); }
  const Image& ref(int idx) const;
  void validate() const;  // DataError if empty

  // Reads every .png/.jpg/.jpeg in `dir`, sorted by filename.
  static StylePool from_directory(const std::string& dir);
};

// One sampled augmentation recipe: which style ops each branch applies, and
// the pixel-wise convex weights used to fuse the branches.
struct MixPlan {
  std::vector<std::vector<int>> chains;  // per branch: 1..max_chain_len style indices
  int height = 0;
  int width = 0;
  // Branch-major planes: coeffs[(m*height + y)*width + x]. Nonnegative,
  // summing to 1 over m at every pixel.
  std::vector<double> coeffs;
  std::uint64_t seed = 0;

  double coeff_at(int m, int y, int x) const {
    return coeffs[(static_cast<std::size_t>(m) * height + y) * width + x];
  }
};

struct StyleMixConfig {
  double alpha = 1.0;     // Dirichlet concentration for the fusion weights
  int pool_size = 0;      // expected style count; 0 = accept whatever the pool has
  int chains = 3;         // number of augmentation branches
  int max_chain_len = 2;  // chain lengths are drawn uniformly from {1..max_chain_len}
  bool per_pixel = false; // draw one weight vector per pixel instead of per image
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError on violation
};

// Pluggable style-transfer backend.
class Stylizer {
 public:
  virtual ~Stylizer() = default;
  virtual Image stylize(const Image& content, const Image& style) const = 0;
  virtual std::string name() const = 0;
};

// Default backend: global color-statistics transfer. Matches per-channel
// mean/std to the style image in a decorrelated (opponent) color space.
// Deterministic and idempotent; constant content channels map to the style
// mean. Output keeps the content's id and dimensions and is not clamped.
class StatsStylizer : public Stylizer {
 public:
  Image stylize(const Image& content, const Image& style) const override;
  std::string name() const override { return "stats"; }
};

// File adapter for externally pre-stylized images. Looks up
//   <dir>/<content_id>__<style_idx>.png
// where style_idx is the style's position in the pool given at construction.
// The returned image's id is the lookup key, so chained applications compose
// to <content_id>__<i>__<j>.png.
class DirectoryStylizer : public Stylizer {
 public:
  DirectoryStylizer(std::string dir, const StylePool& pool);
  Image stylize(const Image& content, const Image& style) const override;
  std::string name() const override { return "directory"; }

 private:
  std::string dir_;
  std::unordered_map<std::string, int> index_by_id_;
};

// Statistics transfer with the built-in backend (see StatsStylizer).
Image stylize(const Image& content, const Image& style);

// Draws chain contents/lengths and the Dirichlet fusion weights for one
// image of the given size. Deterministic in `seed`; chains are drawn before
// coefficients. Weights are one draw broadcast to every pixel unless
// cfg.per_pixel is set.
MixPlan sample_mix_plan(const StyleMixConfig& cfg, const StylePool& pool,
                        int height, int width, std::uint64_t seed);

// Sequential stylization: content -> pool[chain[0]] -> pool[chain[1]] -> ...
// An empty chain returns the content unchanged. Null stylizer = built-in.
Image apply_chain(const Image& content, const std::vector<int>& chain,
                  const StylePool& pool, const Stylizer* stylizer = nullptr);

// Pixel-wise convex combination of the branch images under the plan's
// weights: out(y,x,c) = sum_m coeffs[m,y,x] * branches[m](y,x,c).
Image fuse(const MixPlan& plan, const std::vector<Image>& branches);

struct GeneratedPair {
  Image mn1;      // first synthetic night rendering of the day image
  Image mn2;      // second, independently sampled rendering
  Image target;   // the day image itself (pixel-wise ground truth)
  MixPlan plan1;
  MixPlan plan2;
};

// Samples two independent plans (sub-seeds derived from `seed`), runs both on
// the same day image, and returns the pair plus the untouched target.
GeneratedPair generate_pair(const Image& day, const StyleMixConfig& cfg,
                            const StylePool& pool, std::uint64_t seed,
                            const Stylizer* stylizer = nullptr);

}  // namespace nightlift
