#include "nightlift/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include "nightlift/errors.hpp"
#include "nightlift/filtering.hpp"
#include "nightlift/image_io.hpp"
#include "nightlift/manifest.hpp"

#include <nlohmann/json.hpp>

namespace nightlift {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config parsing -------------------------------------------------------

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as an integer");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as an unsigned integer");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a boolean");
}

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// ---- training data plumbing -----------------------------------------------

struct PairJob {
  Image mn1, mn2;          // clamped synthetic night branches
  std::size_t day_index = 0;
};

// Bounded look-ahead producer: workers claim job indices, results are handed
// to the consumer strictly in index order, so the training stream is
// deterministic no matter how many workers run.
class PairFeeder {
 public:
  PairFeeder(const TrainConfig& cfg, const std::vector<Image>& days, const StylePool& pool,
             std::vector<std::size_t> schedule, int epoch)
      : cfg_(cfg),
        days_(days),
        pool_(pool),
        schedule_(std::move(schedule)),
        epoch_(epoch),
        capacity_(static_cast<std::size_t>(cfg.queue_capacity)),
        slots_(capacity_) {
    const int n = std::max(1, cfg_.workers);
    threads_.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      threads_.emplace_back([this] { work(); });
    }
  }

  ~PairFeeder() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_producer_.notify_all();
    cv_consumer_.notify_all();
    for (auto& t : threads_) t.join();
  }

  PairJob next() {
    std::unique_lock<std::mutex> lock(mu_);
    const std::size_t want = consumed_;
    cv_consumer_.wait(lock, [&] { return error_ || slots_[want % capacity_].has_value(); });
    if (error_) std::rethrow_exception(error_);
    PairJob job = std::move(*slots_[want % capacity_]);
    slots_[want % capacity_].reset();
    ++consumed_;
    cv_producer_.notify_all();
    return job;
  }

 private:
  void work() {
    for (;;) {
      std::size_t j = 0;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_producer_.wait(lock, [&] {
          return stop_ || (next_job_ < schedule_.size() && next_job_ - consumed_ < capacity_);
        });
        if (stop_ || next_job_ >= schedule_.size()) return;
        j = next_job_++;
      }
      try {
        PairJob job = make_job(j);
        std::lock_guard<std::mutex> lock(mu_);
        slots_[j % capacity_] = std::move(job);
        cv_consumer_.notify_all();
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu_);
        if (!error_) error_ = std::current_exception();
        stop_ = true;
        cv_consumer_.notify_all();
        cv_producer_.notify_all();
        return;
      }
    }
  }

  PairJob make_job(std::size_t j) {
    const std::size_t di = schedule_[j];
    const std::uint64_t seed =
        derive_seed(cfg_.seed, 0x70616972, static_cast<std::uint64_t>(epoch_), j);
    GeneratedPair gp = generate_pair(days_[di], cfg_.stylemix, pool_, seed);
    PairJob job;
    job.mn1 = clamp_to_unit(gp.mn1);
    job.mn2 = clamp_to_unit(gp.mn2);
    job.day_index = di;
    return job;
  }

  const TrainConfig& cfg_;
  const std::vector<Image>& days_;
  const StylePool& pool_;
  const std::vector<std::size_t> schedule_;
  const int epoch_;
  const std::size_t capacity_;

  std::mutex mu_;
  std::condition_variable cv_producer_, cv_consumer_;
  std::vector<std::optional<PairJob>> slots_;
  std::size_t next_job_ = 0;
  std::size_t consumed_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
  std::vector<std::thread> threads_;
};

std::string epoch_checkpoint_name(int epoch) {
  std::ostringstream os;
  os << "kpn_epoch_";
  os.width(4);
  os.fill('0');
  os << epoch;
  os << ".ckpt";
  return os.str();
}

// Training state = model parameters + optimizer velocity + progress counter.
void save_train_state(const KpnModel& kpn, const std::vector<Tensor>& velocity, int next_epoch,
                      const TrainConfig& cfg, const std::string& path) {
  Checkpoint st;
  st.kind = "kpn-train-state";
  st.meta = {{"next_epoch", next_epoch},
             {"k", cfg.kpn.k},
             {"base_channels", cfg.kpn.base_channels},
             {"depth", cfg.kpn.depth},
             {"per_channel_kernels", cfg.kpn.per_channel_kernels},
             {"in_channels", cfg.kpn.in_channels}};
  const auto params = const_cast<KpnModel&>(kpn).parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.arrays.emplace_back("param." + std::to_string(i), *params[i]);
  }
  for (std::size_t i = 0; i < velocity.size(); ++i) {
    st.arrays.emplace_back("vel." + std::to_string(i), velocity[i]);
  }
  save_checkpoint(st, path);
}

int load_train_state(KpnModel& kpn, std::vector<Tensor>& velocity, const TrainConfig& cfg,
                     const std::string& path) {
  const Checkpoint st = load_checkpoint(path);
  if (st.kind != "kpn-train-state") {
    throw DataError("'" + path + "' is not a training-state checkpoint");
  }
  const auto meta_int = [&](const char* key) { return st.meta.at(key).get<int>(); };
  if (meta_int("k") != cfg.kpn.k || meta_int("base_channels") != cfg.kpn.base_channels ||
      meta_int("depth") != cfg.kpn.depth || meta_int("in_channels") != cfg.kpn.in_channels ||
      st.meta.at("per_channel_kernels").get<bool>() != cfg.kpn.per_channel_kernels) {
    throw ConfigError("resume: translator architecture in '" + path +
                      "' does not match the current config");
  }
  const auto params = kpn.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = st.require("param." + std::to_string(i));
    if (!t.same_shape(*params[i])) throw DataError("resume: parameter shape drift");
    *params[i] = std::move(t);
  }
  velocity.clear();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor* v = st.find("vel." + std::to_string(i));
    if (!v) break;
    velocity.push_back(*v);
  }
  return meta_int("next_epoch");
}

}  // namespace

// ---- contrast --------------------------------------------------------------

void ContrastConfig::validate() const {
  if (gamma_mode) {
    if (!(gamma > 0.0 && gamma <= 1.0)) {
      throw ConfigError("contrast: gamma must be in (0,1]");
    }
    return;
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("contrast: threshold must be in (0,1)");
  }
  if (!(gain >= 1.0)) throw ConfigError("contrast: gain must be >= 1");
  if (threshold * gain > 1.0 + 1e-12) {
    throw ConfigError("contrast: threshold*gain must be <= 1 to keep the map monotone");
  }
}

Image contrast_enhance(const Image& image, const ContrastConfig& cfg) {
  if (!cfg.enabled) return image;
  cfg.validate();
  for (const double v : image.data) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DataError("contrast_enhance: input pixels must lie in [0,1]");
    }
  }
  Image out = image;
  if (cfg.gamma_mode) {
    for (double& v : out.data) v = std::pow(v, cfg.gamma);
    return out;
  }
  const double knee = cfg.gain * cfg.threshold;
  const double upper_slope = (1.0 - knee) / (1.0 - cfg.threshold);
  for (double& v : out.data) {
    v = v < cfg.threshold ? cfg.gain * v : knee + (v - cfg.threshold) * upper_slope;
  }
  return out;
}

// ---- config ----------------------------------------------------------------

void TrainConfig::validate() const {
  if (kpn_lr < 0.0) throw ConfigError("kpn_lr must be >= 0");
  if (kpn_epochs < 1) throw ConfigError("kpn_epochs must be >= 1");
  if (pairs_per_epoch < 2) throw ConfigError("pairs_per_epoch must be >= 2");
  if (batch_pairs < 1) throw ConfigError("batch_pairs must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (!(det_lr > 0.0)) throw ConfigError("det_lr must be > 0");
  if (det_epochs < 0) throw ConfigError("det_epochs must be >= 0");
  if (det_lr_decay_every < 0) throw ConfigError("det_lr_decay_every must be >= 0");
  if (!(det_lr_decay > 0.0 && det_lr_decay <= 1.0)) {
    throw ConfigError("det_lr_decay must be in (0,1]");
  }
  if (det_batch < 1) throw ConfigError("det_batch must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (queue_capacity < 1) throw ConfigError("queue_capacity must be >= 1");
  weights.validate();
  stylemix.validate();
  kpn.validate();
  detector.validate();
  eval.validate();
  contrast.validate();
}

void TrainConfig::reseed(std::uint64_t s) {
  seed = s;
  stylemix.seed = derive_seed(s, 1);
  kpn.seed = derive_seed(s, 2);
  detector.seed = derive_seed(s, 3);
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "kpn_lr") cfg.kpn_lr = parse_double(key, value);
  else if (key == "kpn_epochs") cfg.kpn_epochs = parse_int(key, value);
  else if (key == "pairs_per_epoch") cfg.pairs_per_epoch = parse_int(key, value);
  else if (key == "batch_pairs") cfg.batch_pairs = parse_int(key, value);
  else if (key == "momentum") cfg.momentum = parse_double(key, value);
  else if (key == "det_lr") cfg.det_lr = parse_double(key, value);
  else if (key == "det_epochs") cfg.det_epochs = parse_int(key, value);
  else if (key == "det_lr_decay_every") cfg.det_lr_decay_every = parse_int(key, value);
  else if (key == "det_lr_decay") cfg.det_lr_decay = parse_double(key, value);
  else if (key == "det_batch") cfg.det_batch = parse_int(key, value);
  else if (key == "workers") cfg.workers = parse_int(key, value);
  else if (key == "queue_capacity") cfg.queue_capacity = parse_int(key, value);
  else if (key == "lambda") cfg.weights.lambda = parse_double(key, value);
  else if (key == "seed") cfg.reseed(parse_u64(key, value));
  else if (key == "stylemix.alpha") cfg.stylemix.alpha = parse_double(key, value);
  else if (key == "stylemix.pool_size") cfg.stylemix.pool_size = parse_int(key, value);
  else if (key == "stylemix.chains") cfg.stylemix.chains = parse_int(key, value);
  else if (key == "stylemix.max_chain_len") cfg.stylemix.max_chain_len = parse_int(key, value);
  else if (key == "stylemix.per_pixel") cfg.stylemix.per_pixel = parse_bool(key, value);
  else if (key == "kpn.k") cfg.kpn.k = parse_int(key, value);
  else if (key == "kpn.base_channels") cfg.kpn.base_channels = parse_int(key, value);
  else if (key == "kpn.depth") cfg.kpn.depth = parse_int(key, value);
  else if (key == "kpn.per_channel_kernels") cfg.kpn.per_channel_kernels = parse_bool(key, value);
  else if (key == "kpn.in_channels") cfg.kpn.in_channels = parse_int(key, value);
  else if (key == "detector.in_channels") cfg.detector.in_channels = parse_int(key, value);
  else if (key == "detector.base_channels") cfg.detector.base_channels = parse_int(key, value);
  else if (key == "detector.anchor_size") cfg.detector.anchor_size = parse_double(key, value);
  else if (key == "detector.pos_iou") cfg.detector.pos_iou = parse_double(key, value);
  else if (key == "detector.neg_iou") cfg.detector.neg_iou = parse_double(key, value);
  else if (key == "detector.score_threshold") cfg.detector.score_threshold = parse_double(key, value);
  else if (key == "detector.nms_iou") cfg.detector.nms_iou = parse_double(key, value);
  else if (key == "detector.max_detections") cfg.detector.max_detections = parse_int(key, value);
  else if (key == "eval.iou_threshold") cfg.eval.iou_threshold = parse_double(key, value);
  else if (key == "eval.score_threshold") cfg.eval.score_threshold = parse_double(key, value);
  else if (key == "eval.eleven_point") cfg.eval.eleven_point = parse_bool(key, value);
  else if (key == "contrast.enabled") cfg.contrast.enabled = parse_bool(key, value);
  else if (key == "contrast.threshold") cfg.contrast.threshold = parse_double(key, value);
  else if (key == "contrast.gain") cfg.contrast.gain = parse_double(key, value);
  else if (key == "contrast.gamma_mode") cfg.contrast.gamma_mode = parse_bool(key, value);
  else if (key == "contrast.gamma") cfg.contrast.gamma = parse_double(key, value);
  else throw ConfigError("unknown config key: '" + key + "'");
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  TrainConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    set_config_value(cfg, key, value);
  }
  return cfg;
}

void apply_config_overrides(TrainConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= ov.size()) {
      throw ConfigError("override '" + ov + "' is not key=value");
    }
    set_config_value(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
}

// ---- stage 2: translator training -------------------------------------------

TrainKpnResult train_kpn(const TrainConfig& cfg, const std::string& day_manifest_path,
                         const StylePool& pool, const std::string& detector_checkpoint,
                         const std::string& out_dir, bool resume) {
  cfg.validate();
  pool.validate();

  const std::vector<ManifestRecord> records = read_manifest(day_manifest_path);
  if (records.empty()) throw DataError("train_kpn: day manifest is empty");

  std::vector<Image> days;
  std::vector<BoxSet> gts;
  days.reserve(records.size());
  gts.reserve(records.size());
  for (const auto& rec : records) {
    Image im = load_image(resolve_manifest_path(day_manifest_path, rec.image));
    if (im.channels != cfg.kpn.in_channels) {
      throw ConfigError("train_kpn: image '" + rec.image + "' has " +
                        std::to_string(im.channels) + " channels, translator expects " +
                        std::to_string(cfg.kpn.in_channels));
    }
    days.push_back(std::move(im));
    gts.push_back(rec.boxes);
  }

  TinyDetector det = TinyDetector::load(detector_checkpoint);
  det.set_frozen(true);
  const std::string digest_before = det.digest();
  const bool use_det = cfg.weights.lambda > 0.0;

  fs::create_directories(fs::path(out_dir) / "checkpoints");
  fs::create_directories(fs::path(out_dir) / "logs");
  const std::string log_path = (fs::path(out_dir) / "logs" / "train_kpn.jsonl").string();
  const std::string state_path = (fs::path(out_dir) / "checkpoints" / "train_state.ckpt").string();
  const std::string latest_path = (fs::path(out_dir) / "checkpoints" / "kpn_latest.ckpt").string();
  const std::string final_path = (fs::path(out_dir) / "checkpoints" / "kpn_final.ckpt").string();

  KpnModel kpn(cfg.kpn);
  std::vector<Tensor> velocity;
  int start_epoch = 0;
  std::string last_good;
  if (resume && fs::exists(state_path)) {
    start_epoch = load_train_state(kpn, velocity, cfg, state_path);
    last_good = latest_path;
  }

  nn::SgdOptimizer opt(cfg.kpn_lr, cfg.momentum);
  opt.velocity() = std::move(velocity);
  const std::vector<Tensor*> params = kpn.parameters();
  const std::vector<Tensor*> grads = kpn.gradients();

  // Anchor targets are cached from the daytime ground truth; every branch of
  // the same scene shares them.
  std::vector<AnchorTargets> targets;
  if (use_det) {
    targets.reserve(days.size());
    for (std::size_t i = 0; i < days.size(); ++i) {
      targets.push_back(det.match_targets(days[i].height, days[i].width, gts[i]));
    }
  }

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("train_kpn: cannot open log " + log_path);

  const int steps = std::max(1, cfg.pairs_per_epoch / (2 * cfg.batch_pairs));
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_pairs);

  TrainKpnResult result;
  result.log_path = log_path;
  result.state_checkpoint = state_path;
  result.detector_digest = digest_before;

  const auto abort_numeric = [&](const std::string& why) -> NumericError {
    return NumericError("train_kpn: " + why + "; last good checkpoint: " +
                        (last_good.empty() ? std::string("none") : last_good));
  };

  for (int epoch = start_epoch; epoch < cfg.kpn_epochs; ++epoch) {
    // Seeded per-epoch schedule over the day images, cycling when an epoch
    // wants more samples than the manifest holds.
    std::vector<std::size_t> perm(days.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, 0x736866, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
    }
    std::vector<std::size_t> schedule(static_cast<std::size_t>(steps) * cfg.batch_pairs);
    for (std::size_t j = 0; j < schedule.size(); ++j) schedule[j] = perm[j % perm.size()];

    PairFeeder feeder(cfg, days, pool, std::move(schedule), epoch);

    for (int step = 0; step < steps; ++step) {
      kpn.zero_grad();
      double sum_pix = 0.0, sum_pix_cons = 0.0, sum_det = 0.0, sum_det_cons = 0.0;
      bool any_no_positives = false;

      for (int b = 0; b < cfg.batch_pairs; ++b) {
        PairJob job;
        try {
          job = feeder.next();
        } catch (const NumericError& e) {
          throw abort_numeric(e.what());
        }
        const Image& day = days[job.day_index];

        KpnModel::Trace trace1, trace2;
        KernelField k1, k2;
        Image out1, out2;
        try {
          k1 = kpn.predict_kernels_traced(job.mn1, trace1);
          k2 = kpn.predict_kernels_traced(job.mn2, trace2);
          out1 = apply_pixelwise_filter(job.mn1, k1, PaddingMode::kReplicate);
          out2 = apply_pixelwise_filter(job.mn2, k2, PaddingMode::kReplicate);
        } catch (const NumericError& e) {
          throw abort_numeric(e.what());
        }
        if (!all_finite(out1) || !all_finite(out2)) {
          throw abort_numeric("translated image became non-finite");
        }

        // Both branches are supervised; their pixel losses are averaged.
        sum_pix += 0.5 * (l_pix(out1, day) + l_pix(out2, day));
        sum_pix_cons += l_pix_cons(out1, out2);

        Image g1 = l_pix_backward(out1, day);
        Image g2 = l_pix_backward(out2, day);
        const Image gc = l_pix_backward(out1, out2);
        for (std::size_t i = 0; i < g1.data.size(); ++i) {
          g1.data[i] = inv_batch * (0.5 * g1.data[i] + gc.data[i]);
          g2.data[i] = inv_batch * (0.5 * g2.data[i] - gc.data[i]);
        }

        if (use_det) {
          const AnchorTargets& tgt = targets[job.day_index];
          const Image det_in1 = clamp_to_unit(out1);
          const Image det_in2 = clamp_to_unit(out2);
          const HeadOutputs h1 = det.forward_heads(det_in1);
          const HeadOutputs h2 = det.forward_heads(det_in2);

          const DetLossParts p1 = l_det_parts(h1, tgt);
          const DetLossParts p2 = l_det_parts(h2, tgt);
          any_no_positives = any_no_positives || p1.no_positives || p2.no_positives;
          sum_det += 0.5 * (p1.total() + p2.total());
          sum_det_cons += l_det_cons(h1, h2);

          HeadOutputs gh1 = l_det_backward(h1, tgt);
          HeadOutputs gh2 = l_det_backward(h2, tgt);
          HeadOutputs gc1, gc2;
          l_det_cons_backward(h1, h2, &gc1, &gc2);
          const double w = cfg.weights.lambda * inv_batch;
          for (std::size_t i = 0; i < gh1.objectness.size(); ++i) {
            gh1.objectness[i] = w * (0.5 * gh1.objectness[i] + gc1.objectness[i]);
            gh2.objectness[i] = w * (0.5 * gh2.objectness[i] + gc2.objectness[i]);
          }
          for (std::size_t i = 0; i < gh1.box_delta.size(); ++i) {
            gh1.box_delta[i] = w * (0.5 * gh1.box_delta[i] + gc1.box_delta[i]);
            gh2.box_delta[i] = w * (0.5 * gh2.box_delta[i] + gc2.box_delta[i]);
          }

          const Image gi1 = det.input_gradient(det_in1, gh1);
          const Image gi2 = det.input_gradient(det_in2, gh2);
          // The clamp before the detector gates its gradient to pixels
          // inside [0,1].
          for (std::size_t i = 0; i < g1.data.size(); ++i) {
            if (out1.data[i] >= 0.0 && out1.data[i] <= 1.0) g1.data[i] += gi1.data[i];
            if (out2.data[i] >= 0.0 && out2.data[i] <= 1.0) g2.data[i] += gi2.data[i];
          }
        }

        KernelField dk1(k1.k, k1.height, k1.width, k1.groups);
        KernelField dk2(k2.k, k2.height, k2.width, k2.groups);
        filter_gradients(job.mn1, k1, g1, PaddingMode::kReplicate, nullptr, &dk1);
        filter_gradients(job.mn2, k2, g2, PaddingMode::kReplicate, nullptr, &dk2);
        kpn.backward_from_kernels(trace1, dk1);
        kpn.backward_from_kernels(trace2, dk2);
      }

      LossReport report =
          total_loss(sum_pix * inv_batch, sum_pix_cons * inv_batch, sum_det * inv_batch,
                     sum_det_cons * inv_batch, cfg.weights, any_no_positives);
      if (!std::isfinite(report.total)) {
        throw abort_numeric("loss became non-finite at epoch " + std::to_string(epoch) +
                            " step " + std::to_string(step));
      }
      opt.step(params, grads);

      const json line = {{"epoch", epoch},
                         {"step", step},
                         {"l_pix", report.l_pix},
                         {"l_pix_cons", report.l_pix_cons},
                         {"l_det", report.l_det},
                         {"l_det_cons", report.l_det_cons},
                         {"total", report.total},
                         {"no_positive_anchors", report.no_positive_anchors}};
      log << line.dump() << "\n";
      result.step_reports.push_back(report);
      ++result.steps_run;
    }
    log.flush();

    const std::string epoch_path =
        (fs::path(out_dir) / "checkpoints" / epoch_checkpoint_name(epoch)).string();
    kpn.save(epoch_path);
    kpn.save(latest_path);
    save_train_state(kpn, opt.velocity(), epoch + 1, cfg, state_path);
    last_good = epoch_path;
    ++result.epochs_run;
  }

  kpn.save(final_path);
  result.final_checkpoint = final_path;

  if (det.digest() != digest_before) {
    throw std::logic_error("train_kpn: frozen detector parameters drifted");
  }
  return result;
}

// ---- inference ---------------------------------------------------------------

Image translate_for_io(const KpnModel& kpn, const Image& night, const ContrastConfig& contrast) {
  const Image pre = contrast_enhance(night, contrast);
  Image out = kpn.translate(pre);
  if (!all_finite(out)) throw NumericError("translate: non-finite output for '" + night.id + "'");
  Image clamped = clamp_to_unit(out);
  clamped.id = night.id;
  return clamped;
}

std::vector<InferenceRecord> infer_night(const std::vector<Image>& images, const KpnModel& kpn,
                                         const Detector& detector,
                                         const ContrastConfig& contrast) {
  std::vector<InferenceRecord> out;
  out.reserve(images.size());
  for (const Image& im : images) {
    InferenceRecord rec;
    rec.translated = translate_for_io(kpn, im, contrast);
    rec.detections = detector.detect(rec.translated);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace nightlift
