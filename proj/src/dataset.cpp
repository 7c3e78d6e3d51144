#include "tst/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "tst/error.hpp"
#include "tst/image_io.hpp"

namespace tst {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json box_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }

Box box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw InvalidInput("bbox must be [x, y, w, h]");
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!(b.w >= 0 && b.h >= 0) || !std::isfinite(b.x) || !std::isfinite(b.y))
    throw InvalidInput("bbox has negative or non-finite extent");
  return b;
}

int class_index(const std::string& name, std::vector<std::string>& classes, bool extend) {
  auto it = std::find(classes.begin(), classes.end(), name);
  if (it != classes.end()) return static_cast<int>(it - classes.begin()) + 1;
  if (!extend) throw InvalidInput("unknown class '" + name + "'");
  classes.push_back(name);
  return static_cast<int>(classes.size());
}

const std::string& class_name(int id, const std::vector<std::string>& classes) {
  if (id < 1 || id > static_cast<int>(classes.size()))
    throw InvalidInput("class id " + std::to_string(id) + " has no name");
  return classes[id - 1];
}

}  // namespace

BinaryMask ground_truth_mask(const GroundTruthItem& item, int width, int height) {
  if (!item.polygon.empty()) return rasterize_polygon(item.polygon, width, height);
  const Box& b = item.aabb;
  const std::vector<Point2> poly{{b.x, b.y}, {b.x + b.w, b.y}, {b.x + b.w, b.y + b.h}, {b.x, b.y + b.h}};
  return rasterize_polygon(poly, width, height);
}

json annotation_to_json(const ImageAnnotation& ann, const std::vector<std::string>& classes) {
  json items = json::array();
  for (const auto& item : ann.items) {
    json j{{"class", class_name(item.class_id, classes)}, {"bbox", box_json(item.aabb)}};
    if (!item.polygon.empty()) {
      json poly = json::array();
      for (const auto& p : item.polygon) poly.push_back({p.x, p.y});
      j["polygon"] = std::move(poly);
    }
    items.push_back(std::move(j));
  }
  json out{{"image_id", ann.image_id}, {"items", std::move(items)}};
  if (ann.width > 0 && ann.height > 0) {
    out["width"] = ann.width;
    out["height"] = ann.height;
  }
  if (!ann.tags.empty()) out["tags"] = ann.tags;
  return out;
}

ImageAnnotation annotation_from_json(const json& j, std::vector<std::string>& classes, bool extend) {
  try {
    ImageAnnotation ann;
    ann.image_id = j.at("image_id").get<std::string>();
    ann.width = j.value("width", 0);
    ann.height = j.value("height", 0);
    ann.tags = j.value("tags", std::vector<std::string>{});
    for (const auto& ji : j.at("items")) {
      GroundTruthItem item;
      item.image_id = ann.image_id;
      item.class_id = class_index(ji.at("class").get<std::string>(), classes, extend);
      if (ji.contains("polygon")) {
        for (const auto& p : ji.at("polygon")) {
          if (!p.is_array() || p.size() != 2) throw InvalidInput("polygon vertices must be [x, y]");
          item.polygon.push_back({p[0].get<double>(), p[1].get<double>()});
        }
        if (item.polygon.size() < 3) throw InvalidInput("polygon needs at least 3 vertices");
      }
      if (ji.contains("bbox"))
        item.aabb = box_from(ji.at("bbox"));
      else if (!item.polygon.empty())
        item.aabb = envelope(item.polygon);
      else
        throw InvalidInput("item has neither bbox nor polygon");
      ann.items.push_back(std::move(item));
    }
    return ann;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed annotation: ") + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

DatasetIndex load_dataset_index(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  DatasetIndex index;
  index.root = root;
  if (fs::exists(root / "manifest.json")) {
    const json m = read_json(root / "manifest.json");
    try {
      index.classes = m.value("classes", std::vector<std::string>{});
      index.train = m.value("train", std::vector<std::string>{});
      index.test = m.value("test", std::vector<std::string>{});
    } catch (const json::exception& e) {
      throw InvalidInput(std::string("malformed manifest: ") + e.what());
    }
    if (!index.classes.empty()) return index;
  }
  const fs::path ann_dir = root / "annotations";
  if (!fs::is_directory(ann_dir)) throw IoError("no annotations directory in " + root.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(ann_dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  const bool have_split = !index.train.empty() || !index.test.empty();
  for (const auto& f : files) {
    const ImageAnnotation ann = annotation_from_json(read_json(f), index.classes, true);
    if (!have_split) index.train.push_back(ann.image_id);
  }
  return index;
}

fs::path find_image(const fs::path& root, const std::string& image_id) {
  for (const char* ext : {".png", ".pgm", ".pfm"}) {
    const fs::path p = root / "images" / (image_id + ext);
    if (fs::exists(p)) return p;
  }
  throw IoError("no image for '" + image_id + "' under " + (root / "images").string());
}

ImageAnnotation load_annotation(const DatasetIndex& index, const std::string& image_id) {
  std::vector<std::string> classes = index.classes;
  ImageAnnotation ann =
      annotation_from_json(read_json(index.root / "annotations" / (image_id + ".json")), classes, false);
  if (ann.width <= 0 || ann.height <= 0) {
    const ImageBuffer img = read_image(find_image(index.root, image_id));
    ann.width = img.width();
    ann.height = img.height();
  }
  return ann;
}

void write_prediction(const fs::path& dir, const ImagePrediction& pred, const std::vector<std::string>& classes) {
  std::error_code ec;
  fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create " + (dir / "masks").string() + ": " + ec.message());
  json dets = json::array();
  for (std::size_t k = 0; k < pred.detections.size(); ++k) {
    const Detection& d = pred.detections[k];
    const std::string mask_rel = "masks/" + pred.image_id + "_" + std::to_string(k) + ".png";
    write_mask(dir / mask_rel, d.mask);
    dets.push_back({{"class", class_name(d.class_id, classes)},
                    {"score", d.score},
                    {"aabb", box_json(d.aabb)},
                    {"rbox",
                     {{"cx", d.rbox.center.x},
                      {"cy", d.rbox.center.y},
                      {"w", d.rbox.w},
                      {"h", d.rbox.h},
                      {"angle_deg", d.rbox.angle * 180.0 / std::numbers::pi}}},
                    {"mask", mask_rel}});
  }
  write_json(dir / (pred.image_id + ".json"),
             {{"image_id", pred.image_id}, {"width", pred.width}, {"height", pred.height}, {"detections", dets}});
}

ImagePrediction read_prediction(const fs::path& json_path, std::vector<std::string>& classes) {
  const json j = read_json(json_path);
  try {
    ImagePrediction pred;
    pred.image_id = j.at("image_id").get<std::string>();
    pred.width = j.at("width").get<int>();
    pred.height = j.at("height").get<int>();
    for (const auto& jd : j.at("detections")) {
      Detection d;
      d.class_id = class_index(jd.at("class").get<std::string>(), classes, false);
      d.score = jd.at("score").get<double>();
      d.aabb = box_from(jd.at("aabb"));
      const json& r = jd.at("rbox");
      d.rbox.center = {r.at("cx").get<double>(), r.at("cy").get<double>()};
      d.rbox.w = r.at("w").get<double>();
      d.rbox.h = r.at("h").get<double>();
      d.rbox.angle = r.at("angle_deg").get<double>() * std::numbers::pi / 180.0;
      if (jd.contains("mask")) {
        d.mask = read_mask(json_path.parent_path() / jd.at("mask").get<std::string>());
        if (d.mask.width() != pred.width || d.mask.height() != pred.height)
          throw InvalidInput("mask size differs from prediction size in " + json_path.string());
      } else {
        d.mask = BinaryMask(pred.width, pred.height);
      }
      pred.detections.push_back(std::move(d));
    }
    return pred;
  } catch (const json::exception& e) {
    throw InvalidInput("malformed prediction " + json_path.string() + ": " + e.what());
  }
}

}  // namespace tst
