#include "nightlift/manifest.hpp"

#include <filesystem>
#include <fstream>

#include "nightlift/errors.hpp"

#include <nlohmann/json.hpp>

namespace nightlift {
namespace {

using nlohmann::json;

json parse_line(const std::string& line, const std::string& path, std::size_t lineno) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw DataError(path + ":" + std::to_string(lineno) + ": not a JSON object");
  }
  return j;
}

[[noreturn]] void bad_record(const std::string& path, std::size_t lineno,
                             const std::string& what) {
  throw DataError(path + ":" + std::to_string(lineno) + ": " + what);
}

}  // namespace

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);

  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = parse_line(line, path, lineno);

    ManifestRecord rec;
    if (!j.contains("image") || !j["image"].is_string()) {
      bad_record(path, lineno, "missing string field 'image'");
    }
    rec.image = j["image"].get<std::string>();
    if (j.contains("day_image")) {
      if (!j["day_image"].is_string()) bad_record(path, lineno, "'day_image' must be a string");
      rec.day_image = j["day_image"].get<std::string>();
    }
    if (j.contains("boxes")) {
      if (!j["boxes"].is_array()) bad_record(path, lineno, "'boxes' must be an array");
      for (const auto& row : j["boxes"]) {
        if (!row.is_array() || row.size() != 5) {
          bad_record(path, lineno, "each box must be [x1,y1,x2,y2,class]");
        }
        for (const auto& v : row) {
          if (!v.is_number()) bad_record(path, lineno, "box entries must be numbers");
        }
        const Box b{row[0].get<double>(), row[1].get<double>(), row[2].get<double>(),
                    row[3].get<double>()};
        const double cls = row[4].get<double>();
        if (cls < 0 || cls != static_cast<int>(cls)) {
          bad_record(path, lineno, "class must be a non-negative integer");
        }
        rec.boxes.push(b, static_cast<int>(cls));
      }
    }
    try {
      rec.boxes.validate("manifest boxes");
    } catch (const DataError& e) {
      bad_record(path, lineno, e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_manifest(const std::vector<ManifestRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path);
  for (const auto& rec : records) {
    rec.boxes.validate("manifest boxes for " + rec.image);
    json boxes = json::array();
    for (std::size_t i = 0; i < rec.boxes.size(); ++i) {
      const Box& b = rec.boxes.boxes[i];
      boxes.push_back({b.x1, b.y1, b.x2, b.y2, rec.boxes.classes[i]});
    }
    json j = {{"image", rec.image}, {"boxes", boxes}};
    if (!rec.day_image.empty()) j["day_image"] = rec.day_image;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("failed writing manifest: " + path);
}

std::string resolve_manifest_path(const std::string& manifest_path,
                                  const std::string& record_path) {
  const std::filesystem::path rec(record_path);
  if (rec.is_absolute()) return record_path;
  return (std::filesystem::path(manifest_path).parent_path() / rec).string();
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions: " + path);

  std::vector<PredictionRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = parse_line(line, path, lineno);

    PredictionRecord rec;
    if (!j.contains("image_id") || !j["image_id"].is_string()) {
      bad_record(path, lineno, "missing string field 'image_id'");
    }
    rec.image_id = j["image_id"].get<std::string>();
    if (!j.contains("boxes") || !j["boxes"].is_array() || !j.contains("scores") ||
        !j["scores"].is_array()) {
      bad_record(path, lineno, "missing 'boxes'/'scores' arrays");
    }
    const auto& boxes = j["boxes"];
    const auto& scores = j["scores"];
    if (boxes.size() != scores.size()) {
      bad_record(path, lineno, "'boxes' and 'scores' differ in length");
    }
    const bool has_classes = j.contains("classes");
    if (has_classes && (!j["classes"].is_array() || j["classes"].size() != boxes.size())) {
      bad_record(path, lineno, "'classes' must align with 'boxes'");
    }
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto& row = boxes[i];
      if (!row.is_array() || row.size() != 4) {
        bad_record(path, lineno, "each box must be [x1,y1,x2,y2]");
      }
      const Box b{row[0].get<double>(), row[1].get<double>(), row[2].get<double>(),
                  row[3].get<double>()};
      const int cls = has_classes ? j["classes"][i].get<int>() : 0;
      rec.detections.push(b, cls, scores[i].get<double>());
    }
    try {
      rec.detections.validate("predictions");
    } catch (const DataError& e) {
      bad_record(path, lineno, e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_predictions(const std::vector<PredictionRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write predictions: " + path);
  for (const auto& rec : records) {
    rec.detections.validate("predictions for " + rec.image_id);
    json boxes = json::array();
    json scores = json::array();
    json classes = json::array();
    for (std::size_t i = 0; i < rec.detections.size(); ++i) {
      const Box& b = rec.detections.boxes[i];
      boxes.push_back({b.x1, b.y1, b.x2, b.y2});
      scores.push_back(rec.detections.scores[i]);
      classes.push_back(rec.detections.classes[i]);
    }
    const json j = {
        {"image_id", rec.image_id}, {"boxes", boxes}, {"scores", scores}, {"classes", classes}};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("failed writing predictions: " + path);
}

}  // namespace nightlift
