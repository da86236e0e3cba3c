// nightlift command-line tool: dataset generation, the two training stages,
// translation/detection inference, mAP evaluation, and the selfcheck suite.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nightlift/detector.hpp"
#include "nightlift/errors.hpp"
#include "nightlift/image_io.hpp"
#include "nightlift/kpn.hpp"
#include "nightlift/manifest.hpp"
#include "nightlift/map_eval.hpp"
#include "nightlift/pipeline.hpp"
#include "nightlift/rng.hpp"
#include "nightlift/selfcheck.hpp"
#include "nightlift/stylemix.hpp"
#include "nightlift/toydata.hpp"
#include "nightlift/version.hpp"

namespace fs = std::filesystem;
using namespace nightlift;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("NIGHTLIFT_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (errno != 0 || end == raw || *end != '\0') {
    throw ConfigError(std::string("NIGHTLIFT_SEED is not an unsigned integer: ") + raw);
  }
  return static_cast<std::uint64_t>(v);
}

std::uint64_t auto_seed() {
  std::random_device rd;
  const auto now = std::chrono::steady_clock::now().time_since_epoch().count();
  std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  s ^= static_cast<std::uint64_t>(now);
  return derive_seed(s, 0x73656564);
}

// Seed precedence: --seed flag, then NIGHTLIFT_SEED, then an auto-picked seed
// (printed so the run can be reproduced).
std::uint64_t resolve_seed(bool flag_given, std::uint64_t flag_value) {
  if (flag_given) return flag_value;
  if (const auto env = env_seed()) return *env;
  const std::uint64_t s = auto_seed();
  std::cout << "seed " << s << " (auto-selected; pass --seed to reproduce)\n";
  return s;
}

bool config_file_has_seed(const std::string& path) {
  std::ifstream in(path);
  if (!in) return false;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    const std::size_t last = key.find_last_not_of(" \t");
    key.erase(last == std::string::npos ? 0 : last + 1);
    if (key == "seed") return true;
  }
  return false;
}

// Shared by the training subcommands. Master-seed precedence: --seed flag,
// then `--set seed=`, then the config file, then NIGHTLIFT_SEED, then an
// auto-picked seed. Sub-seed overrides (--set kpn.seed=...) are applied after
// any flag reseed, so they always win for their own stream.
TrainConfig build_train_config(const std::string& config_path,
                               const std::vector<std::string>& sets, bool seed_flag_given,
                               std::uint64_t seed_flag) {
  bool seeded = seed_flag_given;
  TrainConfig cfg;
  if (!config_path.empty()) {
    cfg = load_train_config(config_path);
    seeded = seeded || config_file_has_seed(config_path);
  }
  bool sets_have_seed = false;
  for (const auto& kv : sets) {
    if (kv.rfind("seed=", 0) == 0) sets_have_seed = true;
  }
  if (seed_flag_given && sets_have_seed) {
    throw ConfigError("seed given both via --seed and --set seed=...; pick one");
  }
  seeded = seeded || sets_have_seed;
  if (seed_flag_given) cfg.reseed(seed_flag);
  apply_config_overrides(cfg, sets);
  if (!seeded) {
    if (const auto env = env_seed()) {
      cfg.reseed(*env);
    } else {
      const std::uint64_t s = auto_seed();
      std::cout << "seed " << s << " (auto-selected; pass --seed to reproduce)\n";
      cfg.reseed(s);
    }
  }
  cfg.validate();
  return cfg;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// --input accepts a manifest file, a directory of images (lexicographic
// order), or a single image file.
std::vector<Image> load_input_images(const std::string& src) {
  std::vector<Image> images;
  if (fs::is_directory(src)) {
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(src)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) images.push_back(load_image(p.string()));
    return images;
  }
  if (!fs::exists(src)) throw DataError("input not found: " + src);
  if (is_image_file(src)) {
    images.push_back(load_image(src));
    return images;
  }
  for (const auto& rec : read_manifest(src)) {
    images.push_back(load_image(resolve_manifest_path(src, rec.image)));
  }
  return images;
}

std::vector<DetectorTrainSample> load_train_samples(const std::string& manifest_path) {
  std::vector<DetectorTrainSample> samples;
  for (const auto& rec : read_manifest(manifest_path)) {
    DetectorTrainSample s;
    s.image = load_image(resolve_manifest_path(manifest_path, rec.image));
    s.gt = rec.boxes;
    samples.push_back(std::move(s));
  }
  return samples;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

void write_json_file(const nlohmann::json& j, const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("short write: " + path);
}

int cmd_make_toy_data(const std::string& out_dir, int n, int size, bool seed_given,
                      std::uint64_t seed_flag) {
  const std::uint64_t seed = resolve_seed(seed_given, seed_flag);
  const ToyDataResult res = make_toy_data(out_dir, n, seed, size);
  std::cout << "toy dataset in " << res.root << "\n"
            << "  day-train manifest:  " << res.day_train_manifest << " (" << res.n_train
            << " images)\n"
            << "  day-test manifest:   " << res.day_test_manifest << " (" << res.n_test
            << " images)\n"
            << "  night-test manifest: " << res.night_test_manifest << " (paired)\n"
            << "  style references:    " << res.style_dir << "\n"
            << "  degradation params:  " << res.params_path << "\n";
  return 0;
}

int cmd_stylemix(const std::string& day_manifest, const std::string& style_dir,
                 const std::string& out_dir, int n, const std::string& config_path,
                 const std::vector<std::string>& sets, bool seed_given,
                 std::uint64_t seed_flag) {
  const TrainConfig cfg = build_train_config(config_path, sets, seed_given, seed_flag);
  const StylePool pool = StylePool::from_directory(style_dir);
  const auto records = read_manifest(day_manifest);
  fs::create_directories(out_dir);
  const std::size_t limit =
      n < 0 ? records.size() : std::min<std::size_t>(records.size(), static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < limit; ++i) {
    const Image day = load_image(resolve_manifest_path(day_manifest, records[i].image));
    // Same derivation as epoch 0 of train-kpn, so this previews the exact
    // pairs that training would consume.
    const std::uint64_t pair_seed = derive_seed(cfg.seed, 0x70616972, 0, i);
    const GeneratedPair pair = generate_pair(day, cfg.stylemix, pool, pair_seed);
    save_image(clamp_to_unit(pair.mn1), (fs::path(out_dir) / (pair.mn1.id + ".png")).string());
    save_image(clamp_to_unit(pair.mn2), (fs::path(out_dir) / (pair.mn2.id + ".png")).string());
    std::cout << day.id << ": chains1=";
    for (std::size_t m = 0; m < pair.plan1.chains.size(); ++m) {
      std::cout << (m ? "/" : "");
      for (std::size_t t = 0; t < pair.plan1.chains[m].size(); ++t) {
        std::cout << (t ? "-" : "") << pair.plan1.chains[m][t];
      }
    }
    std::cout << " chains2=";
    for (std::size_t m = 0; m < pair.plan2.chains.size(); ++m) {
      std::cout << (m ? "/" : "");
      for (std::size_t t = 0; t < pair.plan2.chains[m].size(); ++t) {
        std::cout << (t ? "-" : "") << pair.plan2.chains[m][t];
      }
    }
    std::cout << "\n";
  }
  std::cout << limit << " pair(s) written to " << out_dir << "\n";
  return 0;
}

int cmd_train_detector(const std::string& day_manifest, const std::string& out_dir,
                       const std::string& config_path, const std::vector<std::string>& sets,
                       bool seed_given, std::uint64_t seed_flag) {
  const TrainConfig cfg = build_train_config(config_path, sets, seed_given, seed_flag);
  const auto samples = load_train_samples(day_manifest);
  fs::create_directories(fs::path(out_dir) / "checkpoints");
  fs::create_directories(fs::path(out_dir) / "logs");

  TinyDetector det(cfg.detector);
  DetectorTrainConfig tc;
  tc.epochs = cfg.det_epochs;
  tc.batch_size = cfg.det_batch;
  tc.lr = cfg.det_lr;
  tc.momentum = cfg.momentum;
  tc.lr_decay_every = cfg.det_lr_decay_every;
  tc.lr_decay = cfg.det_lr_decay;
  tc.seed = cfg.detector.seed;
  tc.log_path = (fs::path(out_dir) / "logs" / "detector_train.jsonl").string();
  const DetectorTrainStats stats = tiny_detector_train(det, samples, tc);

  det.set_frozen(true);
  const std::string ckpt = (fs::path(out_dir) / "checkpoints" / "detector.ckpt").string();
  det.save(ckpt);
  std::cout << "trained on " << samples.size() << " images for " << tc.epochs << " epoch(s)\n";
  if (!stats.epoch_loss.empty()) {
    std::cout << "  first-epoch loss " << stats.epoch_loss.front() << ", last "
              << stats.epoch_loss.back() << "\n";
  }
  std::cout << "  checkpoint " << ckpt << "\n  digest " << det.digest() << "\n";
  return 0;
}

int cmd_train_kpn(const std::string& day_manifest, const std::string& style_dir,
                  const std::string& detector_ckpt, const std::string& out_dir,
                  const std::string& config_path, const std::vector<std::string>& sets,
                  bool seed_given, std::uint64_t seed_flag, bool resume) {
  const TrainConfig cfg = build_train_config(config_path, sets, seed_given, seed_flag);
  const StylePool pool = StylePool::from_directory(style_dir);
  const TrainKpnResult res = train_kpn(cfg, day_manifest, pool, detector_ckpt, out_dir, resume);
  std::cout << "trained " << res.epochs_run << " epoch(s), " << res.steps_run << " step(s)\n";
  if (!res.step_reports.empty()) {
    std::cout << "  step-0 total loss " << res.step_reports.front().total << ", final "
              << res.step_reports.back().total << "\n";
  }
  std::cout << "  checkpoint " << res.final_checkpoint << "\n"
            << "  train state " << res.state_checkpoint << "\n"
            << "  log " << res.log_path << "\n"
            << "  detector digest " << res.detector_digest << " (unchanged)\n";
  return 0;
}

int cmd_translate(const std::string& input, const std::string& kpn_ckpt,
                  const std::string& out_dir, const ContrastConfig& contrast) {
  contrast.validate();
  const KpnModel kpn = KpnModel::load(kpn_ckpt);
  const std::vector<Image> images = load_input_images(input);
  const fs::path dir = fs::path(out_dir) / "translated";
  fs::create_directories(dir);
  for (const auto& img : images) {
    const Image out = translate_for_io(kpn, img, contrast);
    save_image(out, (dir / (out.id + ".png")).string());
  }
  std::cout << images.size() << " image(s) translated to " << dir.string() << "\n";
  return 0;
}

int cmd_detect(const std::string& input, const std::string& detector_ckpt,
               const std::string& kpn_ckpt, const std::string& out_dir,
               const ContrastConfig& contrast) {
  contrast.validate();
  const TinyDetector det = TinyDetector::load(detector_ckpt);
  const std::vector<Image> images = load_input_images(input);
  fs::create_directories(fs::path(out_dir) / "detections");

  std::vector<PredictionRecord> preds;
  if (!kpn_ckpt.empty()) {
    const KpnModel kpn = KpnModel::load(kpn_ckpt);
    const auto results = infer_night(images, kpn, det, contrast);
    const fs::path tdir = fs::path(out_dir) / "translated";
    fs::create_directories(tdir);
    for (const auto& r : results) {
      save_image(r.translated, (tdir / (r.translated.id + ".png")).string());
      preds.push_back({r.translated.id, r.detections});
    }
  } else {
    const auto sets = detect_batch(det, images);
    for (std::size_t i = 0; i < images.size(); ++i) preds.push_back({images[i].id, sets[i]});
  }

  const std::string pred_path = (fs::path(out_dir) / "detections" / "predictions.jsonl").string();
  write_predictions(preds, pred_path);
  std::size_t total = 0;
  for (const auto& p : preds) total += p.detections.size();
  std::cout << total << " detection(s) over " << preds.size() << " image(s) -> " << pred_path
            << "\n";
  return 0;
}

int cmd_eval_map(const std::string& pred_path, const std::string& gt_manifest,
                 const std::string& report_path, const EvalConfig& cfg) {
  cfg.validate();
  const auto records = read_manifest(gt_manifest);
  const auto pred_records = read_predictions(pred_path);

  std::map<std::string, std::size_t> index_by_id;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string id = stem_of(records[i].image);
    if (!index_by_id.emplace(id, i).second) {
      throw DataError("duplicate image id in ground truth: " + id);
    }
  }
  // Every prediction must refer to a ground-truth image; images without a
  // prediction record count as "no detections".
  std::vector<BoxSet> preds(records.size());
  std::string offenders;
  std::vector<bool> seen(records.size(), false);
  for (const auto& p : pred_records) {
    const auto it = index_by_id.find(p.image_id);
    if (it == index_by_id.end()) {
      offenders += offenders.empty() ? p.image_id : ", " + p.image_id;
      continue;
    }
    if (seen[it->second]) throw DataError("duplicate prediction record for image " + p.image_id);
    seen[it->second] = true;
    preds[it->second] = p.detections;
  }
  if (!offenders.empty()) {
    throw DataError("predictions reference unknown image ids: " + offenders);
  }
  std::vector<BoxSet> gts(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) gts[i] = records[i].boxes;

  const EvalResult res = evaluate_map(preds, gts, cfg);

  nlohmann::json report;
  report["map"] = res.map;
  report["iou_threshold"] = cfg.iou_threshold;
  report["score_threshold"] = cfg.score_threshold;
  report["images"] = records.size();
  report["total_gt"] = res.total_gt;
  report["total_detections"] = res.total_detections;
  nlohmann::json ap = nlohmann::json::object();
  for (const auto& [cls, v] : res.ap_per_class) ap[std::to_string(cls)] = v;
  report["ap_per_class"] = ap;
  nlohmann::json pr = nlohmann::json::object();
  for (const auto& [cls, samples] : res.pr_per_class) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [recall, precision] : samples) {
      arr.push_back(nlohmann::json::array({recall, precision}));
    }
    pr[std::to_string(cls)] = arr;
  }
  report["precision_recall"] = pr;
  write_json_file(report, report_path);
  std::cout << "mAP " << res.map << " over " << records.size() << " image(s), " << res.total_gt
            << " gt box(es), " << res.total_detections << " detection(s)\n"
            << "report " << report_path << "\n";
  return 0;
}

int cmd_selfcheck() {
  const SelfcheckReport report = run_selfcheck();
  std::size_t width = 0;
  for (const auto& e : report.entries) width = std::max(width, e.name.size());
  std::size_t passed = 0;
  for (const auto& e : report.entries) {
    std::cout << e.name << std::string(width - e.name.size() + 2, ' ')
              << (e.passed ? "pass" : "FAIL");
    if (!e.detail.empty()) std::cout << "  " << e.detail;
    std::cout << "\n";
    if (e.passed) ++passed;
  }
  std::cout << "selfcheck: " << passed << "/" << report.entries.size() << " checks passed\n";
  return report.all_passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nightlift: detail-preserving night-to-day image translation "
               "for object detection"};
  app.set_version_flag("--version", std::string(kVersionString));
  app.require_subcommand(1);

  int rc = 0;

  // make-toy-data
  std::string toy_out;
  int toy_n = 200;
  int toy_size = 64;
  std::uint64_t toy_seed = 0;
  auto* toy = app.add_subcommand("make-toy-data",
                                 "Generate a synthetic paired day/night detection dataset");
  toy->add_option("--out", toy_out, "output directory")->required();
  toy->add_option("--n", toy_n, "number of training scenes (default 200)");
  toy->add_option("--size", toy_size, "square image side in pixels (default 64)");
  auto* toy_seed_opt = toy->add_option("--seed", toy_seed, "RNG seed");
  toy->callback([&] { rc = cmd_make_toy_data(toy_out, toy_n, toy_size,
                                             toy_seed_opt->count() > 0, toy_seed); });

  // stylemix
  std::string smx_day, smx_styles, smx_out, smx_config;
  std::vector<std::string> smx_sets;
  int smx_n = 8;
  std::uint64_t smx_seed = 0;
  auto* smx = app.add_subcommand("stylemix",
                                 "Preview synthetic night pairs for day images");
  smx->add_option("--day", smx_day, "day-image manifest (JSON lines)")->required();
  smx->add_option("--styles", smx_styles, "directory of night style references")->required();
  smx->add_option("--out", smx_out, "output directory for the generated images")->required();
  smx->add_option("--n", smx_n, "number of day images to process (-1 = all, default 8)");
  smx->add_option("--config", smx_config, "key=value config file");
  smx->add_option("--set", smx_sets, "config override key=value (repeatable)");
  auto* smx_seed_opt = smx->add_option("--seed", smx_seed, "RNG seed");
  smx->callback([&] {
    rc = cmd_stylemix(smx_day, smx_styles, smx_out, smx_n, smx_config, smx_sets,
                      smx_seed_opt->count() > 0, smx_seed);
  });

  // train-detector
  std::string td_day, td_out, td_config;
  std::vector<std::string> td_sets;
  std::uint64_t td_seed = 0;
  auto* td = app.add_subcommand("train-detector", "Train the tiny day-domain detector");
  td->add_option("--day", td_day, "day-image manifest with ground-truth boxes")->required();
  td->add_option("--out", td_out, "output directory (checkpoints/, logs/)")->required();
  td->add_option("--config", td_config, "key=value config file");
  td->add_option("--set", td_sets, "config override key=value (repeatable)");
  auto* td_seed_opt = td->add_option("--seed", td_seed, "RNG seed");
  td->callback([&] {
    rc = cmd_train_detector(td_day, td_out, td_config, td_sets, td_seed_opt->count() > 0,
                            td_seed);
  });

  // train-kpn
  std::string tk_day, tk_styles, tk_det, tk_out, tk_config;
  std::vector<std::string> tk_sets;
  std::uint64_t tk_seed = 0;
  bool tk_resume = false;
  auto* tk = app.add_subcommand(
      "train-kpn", "Train the kernel-prediction translator against a frozen detector");
  tk->add_option("--day", tk_day, "day-image manifest")->required();
  tk->add_option("--styles", tk_styles, "directory of night style references")->required();
  tk->add_option("--detector", tk_det, "frozen detector checkpoint")->required();
  tk->add_option("--out", tk_out, "output directory (checkpoints/, logs/)")->required();
  tk->add_option("--config", tk_config, "key=value config file");
  tk->add_option("--set", tk_sets, "config override key=value (repeatable)");
  auto* tk_seed_opt = tk->add_option("--seed", tk_seed, "RNG seed");
  tk->add_flag("--resume", tk_resume, "continue from the training state in --out");
  tk->callback([&] {
    rc = cmd_train_kpn(tk_day, tk_styles, tk_det, tk_out, tk_config, tk_sets,
                       tk_seed_opt->count() > 0, tk_seed, tk_resume);
  });

  // Contrast flags shared by translate/detect.
  const auto add_contrast_flags = [](CLI::App* cmd, ContrastConfig* cc) {
    cmd->add_flag("--contrast", cc->enabled, "enable low-light contrast preprocessing");
    cmd->add_option("--contrast-threshold", cc->threshold,
                    "piecewise-linear knee (default 0.2)");
    cmd->add_option("--contrast-gain", cc->gain, "slope below the knee (default 1.5)");
    cmd->add_flag("--contrast-gamma-mode", cc->gamma_mode, "use a gamma curve instead");
    cmd->add_option("--contrast-gamma", cc->gamma, "gamma exponent (default 0.7)");
  };

  // translate
  std::string tr_input, tr_kpn, tr_out;
  ContrastConfig tr_contrast;
  auto* tr = app.add_subcommand("translate", "Translate night images to the day domain");
  tr->add_option("--input", tr_input, "manifest, image directory, or single image")->required();
  tr->add_option("--kpn", tr_kpn, "translator checkpoint")->required();
  tr->add_option("--out", tr_out, "output directory (translated/)")->required();
  add_contrast_flags(tr, &tr_contrast);
  tr->callback([&] { rc = cmd_translate(tr_input, tr_kpn, tr_out, tr_contrast); });

  // detect
  std::string de_input, de_det, de_kpn, de_out;
  ContrastConfig de_contrast;
  auto* de = app.add_subcommand("detect", "Run the detector, optionally translating first");
  de->add_option("--input", de_input, "manifest, image directory, or single image")->required();
  de->add_option("--detector", de_det, "detector checkpoint")->required();
  de->add_option("--kpn", de_kpn, "translator checkpoint (translate before detecting)");
  de->add_option("--out", de_out, "output directory (detections/, translated/)")->required();
  add_contrast_flags(de, &de_contrast);
  de->callback([&] { rc = cmd_detect(de_input, de_det, de_kpn, de_out, de_contrast); });

  // eval-map
  std::string ev_pred, ev_gt, ev_report = "eval_report.json";
  EvalConfig ev_cfg;
  auto* ev = app.add_subcommand("eval-map", "Score a prediction dump against ground truth");
  ev->add_option("--pred", ev_pred, "predictions JSON lines file")->required();
  ev->add_option("--gt", ev_gt, "ground-truth manifest")->required();
  ev->add_option("--report", ev_report, "JSON report path (default eval_report.json)");
  ev->add_option("--iou", ev_cfg.iou_threshold, "true-positive IoU threshold (default 0.5)");
  ev->add_option("--score-threshold", ev_cfg.score_threshold,
                 "discard detections below this score (default 0.05)");
  ev->add_flag("--eleven-point", ev_cfg.eleven_point, "11-point interpolated AP");
  ev->callback([&] { rc = cmd_eval_map(ev_pred, ev_gt, ev_report, ev_cfg); });

  // selfcheck
  auto* sc = app.add_subcommand("selfcheck", "Run the fast numeric invariant suite");
  sc->callback([&] { rc = cmd_selfcheck(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const StateError& e) {
    std::cerr << "state error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
