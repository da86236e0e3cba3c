#include "nightlift/kpn.hpp"

#include <cmath>
#include <string>

#include "nightlift/errors.hpp"

namespace nightlift {

namespace {

int channels_at(const KpnConfig& cfg, int level) { return cfg.base_channels << level; }

// Replicate-pad a (C, H, W) tensor on the bottom/right to the given dims.
Tensor pad_bottom_right(const Tensor& x, int Hp, int Wp) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H == Hp && W == Wp) return x;
  Tensor y({C, Hp, Wp});
  for (int c = 0; c < C; ++c) {
    for (int yy = 0; yy < Hp; ++yy) {
      const int sy = yy < H ? yy : H - 1;
      for (int xx = 0; xx < Wp; ++xx) {
        const int sx = xx < W ? xx : W - 1;
        y.data[(static_cast<std::size_t>(c) * Hp + yy) * Wp + xx] =
            x.data[(static_cast<std::size_t>(c) * H + sy) * W + sx];
      }
    }
  }
  return y;
}

void check_finite(const Tensor& t, const char* layer) {
  if (!t.all_finite()) {
    throw NumericError(std::string("kpn: non-finite activation after ") + layer);
  }
}

}  // namespace

void KpnConfig::validate() const {
  if (k < 1 || k % 2 == 0) throw ConfigError("kpn: k must be odd and >= 1");
  if (depth < 1) throw ConfigError("kpn: depth must be >= 1");
  if (base_channels < 1) throw ConfigError("kpn: base_channels must be >= 1");
  if (in_channels != 1 && in_channels != 3) throw ConfigError("kpn: in_channels must be 1 or 3");
}

KpnModel::KpnModel(const KpnConfig& cfg) : config_(cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x6b706e));

  stem_a_ = nn::Conv2d(cfg.in_channels, cfg.base_channels, 3, 1);
  stem_b_ = nn::Conv2d(cfg.base_channels, cfg.base_channels, 3, 1);
  stem_a_.init_he(rng);
  stem_b_.init_he(rng);
  for (int l = 1; l <= cfg.depth; ++l) {
    down_.emplace_back(channels_at(cfg, l - 1), channels_at(cfg, l), 3, 2);
    enc_.emplace_back(channels_at(cfg, l), channels_at(cfg, l), 3, 1);
    down_.back().init_he(rng);
    enc_.back().init_he(rng);
  }
  for (int l = 0; l < cfg.depth; ++l) {
    up_.emplace_back(channels_at(cfg, l + 1), channels_at(cfg, l), 3, 1);
    fuse_.emplace_back(2 * channels_at(cfg, l), channels_at(cfg, l), 3, 1);
    up_.back().init_he(rng);
    fuse_.back().init_he(rng);
  }
  const int groups = cfg.per_channel_kernels ? cfg.in_channels : 1;
  head_ = nn::Conv2d(cfg.base_channels, cfg.k * cfg.k * groups, 1, 1);
  // Small head weights + delta bias put the mean predicted kernel near the
  // center-tap identity, so training starts from PSNR(night, day).
  const double head_std = 1e-3;
  for (auto& w : head_.weight.data) w = rng.normal(0.0, head_std);
  head_.bias.fill(0.0);
  const int center_tap = (cfg.k / 2) * cfg.k + cfg.k / 2;
  for (int g = 0; g < groups; ++g) {
    head_.bias[static_cast<std::size_t>(g * cfg.k * cfg.k + center_tap)] = 1.0;
  }

  // Record an empirical bound on predicted kernel magnitudes over a few probe
  // images; tests assert fresh models stay within it.
  double max_abs = 0.0;
  for (int probe = 0; probe < 3; ++probe) {
    Rng prng(derive_seed(cfg.seed, 0x70726f6265, probe));
    const int side = 1 << cfg.depth;
    const int dim = std::max(16, side);
    Image img(dim, dim, cfg.in_channels);
    for (auto& v : img.data) v = prng.uniform();
    const KernelField kf = predict_kernels(img);
    for (double v : kf.data) max_abs = std::max(max_abs, std::fabs(v));
  }
  init_kernel_bound_ = 10.0 * max_abs + 0.1;
}

KernelField KpnModel::run(const Image& image, Trace* trace) const {
  if (image.empty()) throw ShapeError("kpn: empty image");
  if (image.channels != config_.in_channels) {
    throw ShapeError("kpn: image has " + std::to_string(image.channels) +
                     " channels, model expects " + std::to_string(config_.in_channels));
  }
  const int H = image.height, W = image.width;
  const int mult = 1 << config_.depth;
  const int Hp = (H + mult - 1) / mult * mult;
  const int Wp = (W + mult - 1) / mult * mult;

  Tensor x = pad_bottom_right(image_to_tensor(image), Hp, Wp);
  Trace local;
  Trace& tr = trace ? *trace : local;
  tr.input = x;
  tr.out_height = H;
  tr.out_width = W;
  tr.down_z.resize(down_.size());
  tr.enc_z.resize(down_.size());
  tr.enc_out.resize(down_.size());
  tr.up_in.resize(down_.size());
  tr.upsampled.resize(down_.size());
  tr.up_z.resize(down_.size());
  tr.fused_in.resize(down_.size());
  tr.fuse_z.resize(down_.size());
  tr.dec_out.resize(down_.size());

  tr.stem_a_z = stem_a_.forward(tr.input);
  tr.stem_b_z = stem_b_.forward(nn::relu(tr.stem_a_z));
  tr.e0 = nn::relu(tr.stem_b_z);
  check_finite(tr.e0, "stem");

  Tensor cur = tr.e0;
  for (std::size_t l = 0; l < down_.size(); ++l) {
    tr.down_z[l] = down_[l].forward(cur);
    tr.enc_z[l] = enc_[l].forward(nn::relu(tr.down_z[l]));
    tr.enc_out[l] = nn::relu(tr.enc_z[l]);
    cur = tr.enc_out[l];
    check_finite(cur, ("enc" + std::to_string(l + 1)).c_str());
  }

  for (int l = static_cast<int>(down_.size()) - 1; l >= 0; --l) {
    tr.up_in[l] = cur;
    tr.upsampled[l] = nn::upsample2_nearest(cur);
    tr.up_z[l] = up_[l].forward(tr.upsampled[l]);
    const Tensor skip = l == 0 ? tr.e0 : tr.enc_out[l - 1];
    tr.fused_in[l] = nn::concat_channels(nn::relu(tr.up_z[l]), skip);
    tr.fuse_z[l] = fuse_[l].forward(tr.fused_in[l]);
    tr.dec_out[l] = nn::relu(tr.fuse_z[l]);
    cur = tr.dec_out[l];
    check_finite(cur, ("dec" + std::to_string(l)).c_str());
  }

  tr.head_in = cur;
  const Tensor head_out = head_.forward(cur);
  check_finite(head_out, "head");

  const int groups = config_.per_channel_kernels ? config_.in_channels : 1;
  const int kk = config_.k * config_.k;
  KernelField field(config_.k, H, W, groups);
  for (int g = 0; g < groups; ++g) {
    for (int t = 0; t < kk; ++t) {
      const double* plane =
          head_out.data.data() + static_cast<std::size_t>(g * kk + t) * Hp * Wp;
      for (int y = 0; y < H; ++y) {
        for (int x2 = 0; x2 < W; ++x2) {
          field.data[(static_cast<std::size_t>(y) * W + x2) * (groups * kk) +
                     static_cast<std::size_t>(g) * kk + t] =
              plane[static_cast<std::size_t>(y) * Wp + x2];
        }
      }
    }
  }
  return field;
}

KernelField KpnModel::predict_kernels(const Image& image) const { return run(image, nullptr); }

KernelField KpnModel::predict_kernels_traced(const Image& image, Trace& trace) const {
  return run(image, &trace);
}

void KpnModel::backward_from_kernels(const Trace& trace, const KernelField& grad_kernels) {
  const int groups = config_.per_channel_kernels ? config_.in_channels : 1;
  const int kk = config_.k * config_.k;
  const int Hp = trace.input.dim(1), Wp = trace.input.dim(2);
  const int H = trace.out_height, W = trace.out_width;

  // Undo the crop: gradients land on the top-left HxW of the padded canvas.
  Tensor dhead({groups * kk, Hp, Wp});
  for (int g = 0; g < groups; ++g) {
    for (int t = 0; t < kk; ++t) {
      double* plane = dhead.data.data() + static_cast<std::size_t>(g * kk + t) * Hp * Wp;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          plane[static_cast<std::size_t>(y) * Wp + x] =
              grad_kernels.data[(static_cast<std::size_t>(y) * W + x) * (groups * kk) +
                                static_cast<std::size_t>(g) * kk + t];
        }
      }
    }
  }

  Tensor d = head_.backward(trace.head_in, dhead);

  // skip_grads[l] = gradient flowing into the skip consumed at decoder step l
  // (the skip is e0 for l == 0, enc_out[l-1] otherwise).
  const std::size_t depth = down_.size();
  std::vector<Tensor> skip_grads(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    const Tensor dfuse_z = nn::relu_backward(trace.fuse_z[l], d);
    const Tensor dfused_in = fuse_[l].backward(trace.fused_in[l], dfuse_z);
    Tensor dcat_a;
    nn::split_channels(dfused_in, up_[l].out_ch, &dcat_a, &skip_grads[l]);
    const Tensor dup_z = nn::relu_backward(trace.up_z[l], dcat_a);
    const Tensor dupsampled = up_[l].backward(trace.upsampled[l], dup_z);
    d = nn::upsample2_nearest_backward(dupsampled);
  }

  // d is now dL/d enc_out[depth-1]; walk the encoder back down to the stem.
  for (int l = static_cast<int>(depth) - 1; l >= 0; --l) {
    if (static_cast<std::size_t>(l) + 1 < depth) {
      const Tensor& sg = skip_grads[static_cast<std::size_t>(l) + 1];
      for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += sg.data[i];
    }
    const Tensor denc_z = nn::relu_backward(trace.enc_z[l], d);
    const Tensor denc_in = enc_[l].backward(nn::relu(trace.down_z[l]), denc_z);
    const Tensor ddown_z = nn::relu_backward(trace.down_z[l], denc_in);
    d = down_[l].backward(l == 0 ? trace.e0 : trace.enc_out[l - 1], ddown_z);
  }

  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += skip_grads[0].data[i];
  const Tensor dstem_b_z = nn::relu_backward(trace.stem_b_z, d);
  const Tensor dstem_b_in = stem_b_.backward(nn::relu(trace.stem_a_z), dstem_b_z);
  const Tensor dstem_a_z = nn::relu_backward(trace.stem_a_z, dstem_b_in);
  stem_a_.backward(trace.input, dstem_a_z);  // input gradient discarded
}

Image KpnModel::translate(const Image& night) const {
  const KernelField kernels = predict_kernels(night);
  Image out = apply_pixelwise_filter(night, kernels, PaddingMode::kReplicate);
  out.id = night.id;
  return out;
}

std::vector<Tensor*> KpnModel::parameters() {
  std::vector<Tensor*> params, grads;
  stem_a_.collect(params, grads);
  stem_b_.collect(params, grads);
  for (auto& c : down_) c.collect(params, grads);
  for (auto& c : enc_) c.collect(params, grads);
  for (auto& c : up_) c.collect(params, grads);
  for (auto& c : fuse_) c.collect(params, grads);
  head_.collect(params, grads);
  return params;
}

std::vector<Tensor*> KpnModel::gradients() {
  std::vector<Tensor*> params, grads;
  stem_a_.collect(params, grads);
  stem_b_.collect(params, grads);
  for (auto& c : down_) c.collect(params, grads);
  for (auto& c : enc_) c.collect(params, grads);
  for (auto& c : up_) c.collect(params, grads);
  for (auto& c : fuse_) c.collect(params, grads);
  head_.collect(params, grads);
  return grads;
}

void KpnModel::zero_grad() {
  stem_a_.zero_grad();
  stem_b_.zero_grad();
  for (auto& c : down_) c.zero_grad();
  for (auto& c : enc_) c.zero_grad();
  for (auto& c : up_) c.zero_grad();
  for (auto& c : fuse_) c.zero_grad();
  head_.zero_grad();
}

Checkpoint KpnModel::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "kpn";
  ckpt.meta = {{"k", config_.k},
               {"base_channels", config_.base_channels},
               {"depth", config_.depth},
               {"per_channel_kernels", config_.per_channel_kernels},
               {"in_channels", config_.in_channels},
               {"seed", config_.seed},
               {"init_kernel_bound", init_kernel_bound_}};
  auto put = [&](const std::string& name, const nn::Conv2d& c) {
    ckpt.arrays.emplace_back(name + ".weight", c.weight);
    ckpt.arrays.emplace_back(name + ".bias", c.bias);
  };
  put("stem_a", stem_a_);
  put("stem_b", stem_b_);
  for (std::size_t l = 0; l < down_.size(); ++l) {
    put("down" + std::to_string(l), down_[l]);
    put("enc" + std::to_string(l), enc_[l]);
  }
  for (std::size_t l = 0; l < up_.size(); ++l) {
    put("up" + std::to_string(l), up_[l]);
    put("fuse" + std::to_string(l), fuse_[l]);
  }
  put("head", head_);
  return ckpt;
}

KpnModel KpnModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "kpn") throw DataError("checkpoint kind is '" + ckpt.kind + "', expected 'kpn'");
  KpnConfig cfg;
  cfg.k = ckpt.meta.at("k").get<int>();
  cfg.base_channels = ckpt.meta.at("base_channels").get<int>();
  cfg.depth = ckpt.meta.at("depth").get<int>();
  cfg.per_channel_kernels = ckpt.meta.at("per_channel_kernels").get<bool>();
  cfg.in_channels = ckpt.meta.at("in_channels").get<int>();
  cfg.seed = ckpt.meta.at("seed").get<std::uint64_t>();
  cfg.validate();

  KpnModel model(cfg);
  model.init_kernel_bound_ = ckpt.meta.value("init_kernel_bound", 0.0);
  auto get = [&](const std::string& name, nn::Conv2d& c) {
    Tensor w = ckpt.require(name + ".weight");
    Tensor b = ckpt.require(name + ".bias");
    if (!w.same_shape(c.weight) || !b.same_shape(c.bias)) {
      throw DataError("checkpoint: shape mismatch for layer " + name);
    }
    c.weight = std::move(w);
    c.bias = std::move(b);
  };
  get("stem_a", model.stem_a_);
  get("stem_b", model.stem_b_);
  for (std::size_t l = 0; l < model.down_.size(); ++l) {
    get("down" + std::to_string(l), model.down_[l]);
    get("enc" + std::to_string(l), model.enc_[l]);
  }
  for (std::size_t l = 0; l < model.up_.size(); ++l) {
    get("up" + std::to_string(l), model.up_[l]);
    get("fuse" + std::to_string(l), model.fuse_[l]);
  }
  get("head", model.head_);
  return model;
}

void KpnModel::save(const std::string& path) const { save_checkpoint(to_checkpoint(), path); }

KpnModel KpnModel::load(const std::string& path) {
  return from_checkpoint(load_checkpoint(path));
}

}  // namespace nightlift
