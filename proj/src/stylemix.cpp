#include "nightlift/stylemix.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "nightlift/errors.hpp"
#include "nightlift/image_io.hpp"

namespace nightlift {
namespace {

namespace fs = std::filesystem;

constexpr double kStdFloor = 1e-8;  // below this a channel counts as constant

struct ChannelStats {
  std::vector<double> mean, stddev;
};

// Orthonormal opponent basis for RGB; for gray images the identity is used.
// Rows: (r+g+b)/sqrt3, (r-b)/sqrt2, (r-2g+b)/sqrt6. Orthonormal, so the
// inverse is the transpose.
void to_opponent(double r, double g, double b, double* o) {
  static const double s3 = std::sqrt(3.0), s2 = std::sqrt(2.0), s6 = std::sqrt(6.0);
  o[0] = (r + g + b) / s3;
  o[1] = (r - b) / s2;
  o[2] = (r - 2.0 * g + b) / s6;
}

void from_opponent(const double* o, double* rgb) {
  static const double s3 = std::sqrt(3.0), s2 = std::sqrt(2.0), s6 = std::sqrt(6.0);
  rgb[0] = o[0] / s3 + o[1] / s2 + o[2] / s6;
  rgb[1] = o[0] / s3 - 2.0 * o[2] / s6;
  rgb[2] = o[0] / s3 - o[1] / s2 + o[2] / s6;
}

std::vector<double> image_to_transfer_space(const Image& im) {
  std::vector<double> out(im.data.size());
  if (im.channels == 1) {
    out = im.data;
    return out;
  }
  const std::size_t pixels = static_cast<std::size_t>(im.height) * im.width;
  for (std::size_t p = 0; p < pixels; ++p) {
    to_opponent(im.data[p * 3], im.data[p * 3 + 1], im.data[p * 3 + 2], &out[p * 3]);
  }
  return out;
}

ChannelStats compute_stats(const std::vector<double>& planes, int channels) {
  const std::size_t pixels = planes.size() / channels;
  ChannelStats st;
  st.mean.assign(channels, 0.0);
  st.stddev.assign(channels, 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int c = 0; c < channels; ++c) st.mean[c] += planes[p * channels + c];
  }
  for (int c = 0; c < channels; ++c) st.mean[c] /= static_cast<double>(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int c = 0; c < channels; ++c) {
      const double d = planes[p * channels + c] - st.mean[c];
      st.stddev[c] += d * d;
    }
  }
  for (int c = 0; c < channels; ++c) {
    st.stddev[c] = std::sqrt(st.stddev[c] / static_cast<double>(pixels));
  }
  return st;
}

const Stylizer& builtin_stylizer() {
  static const StatsStylizer s;
  return s;
}

}  // namespace

const Image& StylePool::ref(int idx) const {
  if (idx < 0 || idx >= count()) {
    throw std::invalid_argument("style index " + std::to_string(idx) +
                                " out of range [0, " + std::to_string(count()) + ")");
  }
  return refs[static_cast<std::size_t>(idx)];
}

void StylePool::validate() const {
  if (refs.empty()) throw DataError("style pool is empty");
}

StylePool StylePool::from_directory(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("style pool directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  StylePool pool;
  for (const auto& f : files) pool.refs.push_back(load_image(f.string()));
  pool.validate();
  return pool;
}

void StyleMixConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("stylemix alpha must be > 0");
  if (chains < 1) throw ConfigError("stylemix chains must be >= 1");
  if (max_chain_len < 1) throw ConfigError("stylemix max_chain_len must be >= 1");
  if (pool_size < 0) throw ConfigError("stylemix pool_size must be >= 0");
}

Image StatsStylizer::stylize(const Image& content, const Image& style) const {
  if (content.channels != style.channels) {
    throw std::invalid_argument("stylize: channel mismatch (content " +
                                std::to_string(content.channels) + ", style " +
                                std::to_string(style.channels) + ")");
  }
  const int C = content.channels;
  std::vector<double> cplanes = image_to_transfer_space(content);
  const std::vector<double> splanes = image_to_transfer_space(style);
  const ChannelStats cs = compute_stats(cplanes, C);
  const ChannelStats ss = compute_stats(splanes, C);

  const std::size_t pixels = cplanes.size() / C;
  for (int c = 0; c < C; ++c) {
    if (cs.stddev[c] < kStdFloor) {
      for (std::size_t p = 0; p < pixels; ++p) cplanes[p * C + c] = ss.mean[c];
    } else {
      const double scale = ss.stddev[c] / cs.stddev[c];
      const double shift = ss.mean[c] - cs.mean[c] * scale;
      for (std::size_t p = 0; p < pixels; ++p) {
        cplanes[p * C + c] = cplanes[p * C + c] * scale + shift;
      }
    }
  }

  Image out(content.height, content.width, C);
  out.id = content.id;
  if (C == 1) {
    out.data = std::move(cplanes);
  } else {
    for (std::size_t p = 0; p < pixels; ++p) {
      from_opponent(&cplanes[p * 3], &out.data[p * 3]);
    }
  }
  return out;
}

DirectoryStylizer::DirectoryStylizer(std::string dir, const StylePool& pool)
    : dir_(std::move(dir)) {
  pool.validate();
  for (int i = 0; i < pool.count(); ++i) {
    const std::string& id = pool.refs[static_cast<std::size_t>(i)].id;
    if (id.empty()) throw DataError("style reference " + std::to_string(i) + " has no id");
    if (!index_by_id_.emplace(id, i).second) {
      throw DataError("duplicate style reference id: " + id);
    }
  }
}

Image DirectoryStylizer::stylize(const Image& content, const Image& style) const {
  if (content.channels != style.channels) {
    throw std::invalid_argument("stylize: channel mismatch");
  }
  const auto it = index_by_id_.find(style.id);
  if (it == index_by_id_.end()) {
    throw DataError("style image '" + style.id + "' is not in the stylizer's pool");
  }
  if (content.id.empty()) throw DataError("content image has no id for pre-stylized lookup");
  const std::string key = content.id + "__" + std::to_string(it->second);
  const fs::path path = fs::path(dir_) / (key + ".png");
  if (!fs::exists(path)) throw DataError("pre-stylized image not found: " + path.string());
  Image out = load_image(path.string());
  if (out.height != content.height || out.width != content.width ||
      out.channels != content.channels) {
    throw DataError("pre-stylized image " + path.string() + " does not match content shape");
  }
  out.id = key;
  return out;
}

Image stylize(const Image& content, const Image& style) {
  return builtin_stylizer().stylize(content, style);
}

MixPlan sample_mix_plan(const StyleMixConfig& cfg, const StylePool& pool,
                        int height, int width, std::uint64_t seed) {
  cfg.validate();
  pool.validate();
  if (cfg.pool_size > 0 && cfg.pool_size != pool.count()) {
    throw ConfigError("style pool has " + std::to_string(pool.count()) +
                      " references, config expects " + std::to_string(cfg.pool_size));
  }
  if (height < 1 || width < 1) throw std::invalid_argument("mix plan needs positive dimensions");

  Rng rng(seed);
  MixPlan plan;
  plan.seed = seed;
  plan.height = height;
  plan.width = width;
  plan.chains.resize(static_cast<std::size_t>(cfg.chains));
  for (auto& chain : plan.chains) {
    const int len = static_cast<int>(rng.uniform_int(1, cfg.max_chain_len));
    chain.resize(static_cast<std::size_t>(len));
    for (int& idx : chain) idx = static_cast<int>(rng.uniform_int(0, pool.count() - 1));
  }

  const std::size_t plane = static_cast<std::size_t>(height) * width;
  plan.coeffs.resize(static_cast<std::size_t>(cfg.chains) * plane);
  if (cfg.per_pixel) {
    std::vector<double> w;
    for (std::size_t p = 0; p < plane; ++p) {
      w = rng.dirichlet(cfg.chains, cfg.alpha);
      for (int m = 0; m < cfg.chains; ++m) {
        plan.coeffs[static_cast<std::size_t>(m) * plane + p] = w[static_cast<std::size_t>(m)];
      }
    }
  } else {
    const std::vector<double> w = rng.dirichlet(cfg.chains, cfg.alpha);
    for (int m = 0; m < cfg.chains; ++m) {
      std::fill_n(plan.coeffs.begin() + static_cast<std::ptrdiff_t>(m * plane), plane,
                  w[static_cast<std::size_t>(m)]);
    }
  }
  return plan;
}

Image apply_chain(const Image& content, const std::vector<int>& chain,
                  const StylePool& pool, const Stylizer* stylizer) {
  const Stylizer& s = stylizer ? *stylizer : builtin_stylizer();
  Image cur = content;
  for (const int idx : chain) cur = s.stylize(cur, pool.ref(idx));
  return cur;
}

Image fuse(const MixPlan& plan, const std::vector<Image>& branches) {
  if (branches.size() != plan.chains.size()) {
    throw ShapeError("fuse: got " + std::to_string(branches.size()) + " branches for " +
                     std::to_string(plan.chains.size()) + " chains");
  }
  if (branches.empty()) throw ShapeError("fuse: no branches");
  for (const Image& b : branches) {
    if (b.height != plan.height || b.width != plan.width) {
      throw ShapeError("fuse: branch does not match the plan's coefficient grid");
    }
    require_same_shape(branches.front(), b, "fuse branches");
  }

  const int C = branches.front().channels;
  Image out(plan.height, plan.width, C);
  const std::size_t plane = static_cast<std::size_t>(plan.height) * plan.width;
  for (std::size_t m = 0; m < branches.size(); ++m) {
    const std::vector<double>& src = branches[m].data;
    const double* w = &plan.coeffs[m * plane];
    for (std::size_t p = 0; p < plane; ++p) {
      const double wm = w[p];
      for (int c = 0; c < C; ++c) out.data[p * C + c] += wm * src[p * C + c];
    }
  }
  return out;
}

GeneratedPair generate_pair(const Image& day, const StyleMixConfig& cfg,
                            const StylePool& pool, std::uint64_t seed,
                            const Stylizer* stylizer) {
  GeneratedPair pair;
  pair.plan1 = sample_mix_plan(cfg, pool, day.height, day.width, derive_seed(seed, 1));
  pair.plan2 = sample_mix_plan(cfg, pool, day.height, day.width, derive_seed(seed, 2));

  const auto run_plan = [&](const MixPlan& plan) {
    std::vector<Image> branches;
    branches.reserve(plan.chains.size());
    for (const auto& chain : plan.chains) {
      branches.push_back(apply_chain(day, chain, pool, stylizer));
    }
    return fuse(plan, branches);
  };
  pair.mn1 = run_plan(pair.plan1);
  pair.mn2 = run_plan(pair.plan2);
  pair.mn1.id = day.id.empty() ? std::string("mn1") : day.id + "__mn1";
  pair.mn2.id = day.id.empty() ? std::string("mn2") : day.id + "__mn2";
  pair.target = day;
  return pair;
}

}  // namespace nightlift
