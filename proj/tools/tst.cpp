// tst: command-line driver for synthesis, training, inference, evaluation,
// tensor visualisation and gradient checking.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tst/backbone.hpp"
#include "tst/dataset.hpp"
#include "tst/error.hpp"
#include "tst/image_io.hpp"
#include "tst/imaging.hpp"
#include "tst/metrics.hpp"
#include "tst/parallel.hpp"
#include "tst/segmenter.hpp"
#include "tst/synthdata.hpp"
#include "tst/tensor_core.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tst;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

const char* kExitCodes =
    "Exit codes: 0 ok, 1 check failed, 2 usage or invalid configuration, "
    "3 I/O or unusable input data, 4 numeric failure (non-finite values).";

// ---------------------------------------------------------------------------
// Config files: a flat JSON object whose keys are long flag names (dashes or
// underscores). Entries are spliced in ahead of the real arguments, so flags
// given on the command line win.
// ---------------------------------------------------------------------------

std::string json_scalar(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number_float()) {
    std::ostringstream s;
    s.precision(17);
    s << v.get<double>();
    return s.str();
  }
  throw InvalidConfig("unsupported config value " + v.dump());
}

std::vector<std::string> config_args(const fs::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const InvalidInput& e) {
    throw InvalidConfig(e.what());
  }
  if (!j.is_object()) throw InvalidConfig("config file must hold a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    if (key == "config") continue;
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + json_scalar(v);
      args.push_back(flag + "=" + joined);
    } else if (value.is_null()) {
      continue;
    } else {
      args.push_back(flag + "=" + json_scalar(value));
    }
  }
  return args;
}

/// Effective option values of a subcommand, for run_config.json.
json effective_config(const CLI::App& app) {
  json j = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    std::vector<std::string> values = opt->results();
    if (values.empty() && !opt->get_default_str().empty()) values = {opt->get_default_str()};
    if (opt->get_type_size() == 0) {
      j[name] = opt->count() > 0;
      continue;
    }
    std::string joined;
    for (const auto& v : values) joined += (joined.empty() ? "" : ",") + v;
    j[name] = joined;
  }
  return j;
}

void write_run_config(const fs::path& dir, const CLI::App& app, const json& extra = json::object()) {
  json j = effective_config(app);
  j["command"] = app.get_name();
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json(dir / "run_config.json", j);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Pipeline flags shared by train / infer / tensor
// ---------------------------------------------------------------------------

struct PipelineFlags {
  int m = 4;
  int k = 2;
  double sigma = 1.0;
  int input_size = 128;
  int open_radius = 1;
  int close_radius = 3;
  int min_area = 20;
  std::string input_mode = "coherent";

  void add_tensor(CLI::App* app) {
    app->add_option("--m", m, "number of gradient orientations")->capture_default_str();
    app->add_option("--k", k, "number of coherent tensors summed")->capture_default_str();
    app->add_option("--sigma", sigma, "Gaussian smoothing sigma (radius = ceil(3 sigma))")->capture_default_str();
  }
  void add_all(CLI::App* app) {
    add_tensor(app);
    app->add_option("--input-size", input_size, "square network input size")->capture_default_str();
    app->add_option("--open-radius", open_radius, "opening radius on predicted contours")->capture_default_str();
    app->add_option("--close-radius", close_radius, "closing radius before filling")->capture_default_str();
    app->add_option("--min-area", min_area, "minimum contour component area (pixels)")->capture_default_str();
    app->add_option("--input-mode", input_mode, "backbone input: coherent | luminance | coherent+luminance")
        ->capture_default_str();
  }

  PipelineConfig to_config(std::vector<std::string> classes) const {
    PipelineConfig c;
    c.m = m;
    c.k = k;
    if (!(sigma > 0.0)) throw InvalidConfig("sigma must be positive");
    c.gaussian = GaussianSpec::from_sigma(sigma);
    c.input_height = c.input_width = input_size;
    c.open_radius = open_radius;
    c.close_radius = close_radius;
    c.min_area = min_area;
    c.class_names = std::move(classes);
    c.input_mode = parse_input_mode(input_mode);
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  int n = 0;
  double occlusion = 0.4;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<std::string> classes{"knife", "gun", "shuriken"};
  int size = 128;
  double noise = 0.02;
  int min_threats = 1, max_threats = 2, min_clutter = 2, max_clutter = 4;
};

int cmd_synth(const SynthArgs& a, const CLI::App& app) {
  if (a.n < 1) throw InvalidParameter("--n must be >= 1");
  SceneTemplate t;
  t.width = t.height = a.size;
  t.classes = a.classes;
  t.occlusion_level = a.occlusion;
  t.noise_sigma = a.noise;
  t.min_threats = a.min_threats;
  t.max_threats = a.max_threats;
  t.min_clutter = a.min_clutter;
  t.max_clutter = a.max_clutter;
  for (const auto& c : t.classes) template_for_class(c);
  sample_scene(t, 0);  // validates the template before touching the disk
  const fs::path out(a.out);
  ensure_dir(out);
  const Manifest m = generate_dataset(a.n, t, a.seed, out);
  write_run_config(out, app);
  std::cout << "wrote " << m.train.size() << " train + " << m.test.size() << " test scans\n";
  std::cout << (out / "manifest.json").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

std::vector<std::string> split_ids(const DatasetIndex& index, const std::string& split) {
  if (split == "train") return index.train;
  if (split == "test") return index.test;
  if (split == "all") {
    std::vector<std::string> ids = index.train;
    ids.insert(ids.end(), index.test.begin(), index.test.end());
    return ids;
  }
  throw InvalidParameter("--split must be train, test or all");
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string split = "train";
  int epochs = 50;
  int batch = 8;
  double lr = 1.0;
  double rho = 0.95;
  double eps = 1e-6;
  std::uint64_t seed = 0;
  std::vector<int> stages{16, 32, 64};
  PipelineFlags pipeline;
};

int cmd_train(const TrainArgs& a, const CLI::App& app) {
  if (a.epochs < 0) throw InvalidParameter("--epochs must be >= 0");
  if (a.batch < 1) throw InvalidParameter("--batch must be >= 1");
  if (!(a.rho > 0.0 && a.rho < 1.0)) throw InvalidParameter("--rho must lie in (0, 1)");
  if (!(a.lr > 0.0) || !(a.eps > 0.0)) throw InvalidParameter("--lr and --eps must be positive");

  const DatasetIndex index = load_dataset_index(a.data);
  const PipelineConfig pipeline = a.pipeline.to_config(index.classes);
  const BackboneConfig backbone = backbone_config_for(pipeline, a.stages, a.seed);
  const std::vector<std::string> ids = split_ids(index, a.split);
  if (ids.empty()) throw InvalidInput("dataset split '" + a.split + "' is empty");

  const fs::path out(a.out);
  ensure_dir(out);
  write_run_config(out, app, {{"pipeline", pipeline.to_json()}, {"backbone", backbone.to_json()}});

  std::cout << "optimizer ADADELTA lr=" << a.lr << " rho=" << a.rho << " eps=" << a.eps << "\n";
  std::cout << "loading " << ids.size() << " scans from " << a.data << "\n";
  std::vector<TrainRecord> records(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    const ImageAnnotation ann = load_annotation(index, ids[i]);
    const ImageBuffer scan = read_image(find_image(index.root, ids[i]));
    std::vector<BinaryMask> masks;
    std::vector<int> classes;
    for (const auto& item : ann.items) {
      masks.push_back(ground_truth_mask(item, scan.width(), scan.height()));
      classes.push_back(item.class_id);
    }
    try {
      records[i] = make_train_record(scan, masks, classes, pipeline);
    } catch (const NumericError& e) {
      throw NumericError(ids[i] + ": " + e.what());
    }
  });

  TrainOptions opts;
  opts.epochs = a.epochs;
  opts.batch_size = a.batch;
  opts.lr = a.lr;
  opts.rho = a.rho;
  opts.eps = a.eps;
  opts.on_epoch = [&](int epoch, double loss) {
    std::cout << "epoch " << (epoch + 1) << "/" << a.epochs << " loss " << fixed(loss, 6) << std::endl;
  };
  const TrainResult result = train(records, backbone, opts);

  std::ofstream csv(out / "loss_history.csv");
  if (!csv) throw IoError("cannot write loss_history.csv");
  csv << "epoch,loss\n";
  csv.precision(10);
  for (std::size_t e = 0; e < result.loss_history.size(); ++e) csv << e + 1 << ',' << result.loss_history[e] << '\n';

  const json meta{{"pipeline", pipeline.to_json()},
                  {"training",
                   {{"epochs", a.epochs},
                    {"batch", a.batch},
                    {"lr", a.lr},
                    {"rho", a.rho},
                    {"eps", a.eps},
                    {"samples", ids.size()},
                    {"class_weights", result.class_weights}}}};
  save_checkpoint(out / "model.tstb", result.params, meta);
  std::cout << "checkpoint " << (out / "model.tstb").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

std::array<double, 3> class_colour(int class_id) {
  static const std::array<std::array<double, 3>, 6> palette{{{0.90, 0.10, 0.10},
                                                             {0.10, 0.60, 0.95},
                                                             {0.95, 0.75, 0.05},
                                                             {0.20, 0.80, 0.20},
                                                             {0.80, 0.20, 0.85},
                                                             {0.95, 0.50, 0.10}}};
  return palette[(class_id - 1) % palette.size()];
}

void draw_line(ImageBuffer& img, Point2 a, Point2 b, const std::array<double, 3>& rgb) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(b.x - a.x), std::abs(b.y - a.y)))) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const int x = static_cast<int>(std::floor(a.x + t * (b.x - a.x)));
    const int y = static_cast<int>(std::floor(a.y + t * (b.y - a.y)));
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) continue;
    for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
  }
}

ImageBuffer overlay(const ImageBuffer& scan, const std::vector<Detection>& dets) {
  const ImageBuffer gray = scan.channels() == 1 ? scan : to_luminance(scan);
  ImageBuffer out(gray.width(), gray.height(), 3);
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < gray.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = gray.at(x, y);
  for (const auto& d : dets) {
    const auto rgb = class_colour(d.class_id);
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x)
        if (d.mask.get(x, y))
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0.6 * out.at(x, y, c) + 0.4 * rgb[c];
  }
  for (const auto& d : dets) {
    const auto corners = d.rbox.corners();
    for (int i = 0; i < 4; ++i) draw_line(out, corners[i], corners[(i + 1) % 4], class_colour(d.class_id));
  }
  return out;
}

struct InferArgs {
  std::string model;
  std::string input;
  std::string out;
  std::string split = "test";
  bool no_overlay = false;
  std::optional<int> open_radius, close_radius, min_area;
};

bool is_image_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".png" || ext == ".pgm" || ext == ".pfm";
}

int cmd_infer(const InferArgs& a, const CLI::App& app) {
  const Checkpoint ckpt = load_checkpoint(a.model);
  if (!ckpt.metadata.contains("pipeline")) throw InvalidInput("checkpoint carries no pipeline configuration");
  PipelineConfig pipeline = PipelineConfig::from_json(ckpt.metadata.at("pipeline"));
  if (a.open_radius) pipeline.open_radius = *a.open_radius;
  if (a.close_radius) pipeline.close_radius = *a.close_radius;
  if (a.min_area) pipeline.min_area = *a.min_area;
  pipeline.validate();

  // Inputs: a single image, a dataset root (images/ + split) or a plain directory.
  std::vector<std::pair<std::string, fs::path>> inputs;
  const fs::path in(a.input);
  if (fs::is_regular_file(in)) {
    inputs.emplace_back(in.stem().string(), in);
  } else if (fs::is_directory(in / "images") && fs::exists(in / "annotations")) {
    const DatasetIndex index = load_dataset_index(in);
    for (const auto& id : split_ids(index, a.split)) inputs.emplace_back(id, find_image(in, id));
  } else if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in))
      if (e.is_regular_file() && is_image_file(e.path())) inputs.emplace_back(e.path().stem().string(), e.path());
    std::sort(inputs.begin(), inputs.end());
  } else {
    throw IoError("input not found: " + a.input);
  }
  if (inputs.empty()) throw InvalidInput("no images to process in " + a.input);

  const fs::path out(a.out);
  ensure_dir(out);
  write_run_config(out, app, {{"pipeline", pipeline.to_json()}});

  std::vector<std::size_t> counts(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) {
    const ImageBuffer scan = read_image(inputs[i].second);
    ImagePrediction pred;
    pred.image_id = inputs[i].first;
    pred.width = scan.width();
    pred.height = scan.height();
    pred.detections = detect(scan, ckpt.params, pipeline);
    write_prediction(out, pred, pipeline.class_names);
    if (!a.no_overlay) write_image(out / (pred.image_id + "_overlay.png"), overlay(scan, pred.detections));
    counts[i] = pred.detections.size();
  });
  std::size_t total = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) total += counts[i];
  std::cout << "processed " << inputs.size() << " images, " << total << " detections -> " << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  double iou = 0.5;
  std::string report;
  std::string pr;
  std::string split = "all";
  std::string tag;
  bool only_predicted = false;
};

int cmd_eval(const EvalArgs& a, const CLI::App&) {
  if (!(a.iou > 0.0 && a.iou <= 1.0)) throw InvalidParameter("--iou must lie in (0, 1]");
  const DatasetIndex index = load_dataset_index(a.gt);
  const fs::path pred_dir(a.pred);
  if (!fs::is_directory(pred_dir)) throw IoError("prediction directory not found: " + a.pred);

  std::vector<std::string> ids = split_ids(index, a.split);
  if (a.only_predicted)
    std::erase_if(ids, [&](const std::string& id) { return !fs::exists(pred_dir / (id + ".json")); });

  std::vector<std::string> classes = index.classes;
  std::vector<EvalImage> images;
  for (const auto& id : ids) {
    const ImageAnnotation ann = load_annotation(index, id);
    if (!a.tag.empty() && std::find(ann.tags.begin(), ann.tags.end(), a.tag) == ann.tags.end()) continue;
    EvalImage img;
    img.image_id = id;
    img.width = ann.width;
    img.height = ann.height;
    img.ground_truth = ann.items;
    const fs::path pj = pred_dir / (id + ".json");
    if (fs::exists(pj)) {
      ImagePrediction p = read_prediction(pj, classes);
      if (p.width != img.width || p.height != img.height)
        throw InvalidInput("prediction size differs from annotation for " + id);
      img.detections = std::move(p.detections);
    }
    images.push_back(std::move(img));
  }
  if (images.empty()) throw InvalidInput("no images selected for evaluation");

  const EvalReport report = evaluate(images, classes, a.iou);
  std::cout << "images " << report.image_count << "  IoU threshold " << fixed(a.iou, 2) << "\n";
  std::cout << "class        gt   det    tp    fp    fn      AP      DC     IoU\n";
  for (const auto& c : report.classes) {
    char line[160];
    std::snprintf(line, sizeof line, "%-10s %4zu  %4zu  %4zu  %4zu  %4zu  %6s  %6s  %6s\n", c.name.c_str(),
                  c.gt_count, c.det_count, c.detections.tp, c.detections.fp, c.detections.fn,
                  c.ap ? fixed(*c.ap).c_str() : "-", c.dice ? fixed(*c.dice).c_str() : "-",
                  c.iou ? fixed(*c.iou).c_str() : "-");
    std::cout << line;
  }
  std::cout << "mAP " << fixed(report.mean_ap) << "  mean DC " << fixed(report.mean_dice) << "  mean IoU "
            << fixed(report.mean_iou) << "\n";

  if (!a.report.empty()) write_json(a.report, report.to_json());
  if (!a.pr.empty()) {
    std::ofstream out(a.pr);
    if (!out) throw IoError("cannot write " + a.pr);
    out << report.pr_csv();
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// tensor
// ---------------------------------------------------------------------------

struct TensorArgs {
  std::string input;
  std::string out;
  int size = 0;
  bool all = false;
  PipelineFlags pipeline;
};

int cmd_tensor(const TensorArgs& a, const CLI::App& app) {
  const ImageBuffer scan = read_image(a.input);
  if (!scan.all_finite()) throw NumericError("input image contains non-finite values");
  ImageBuffer gray = scan.channels() == 1 ? scan : to_luminance(scan);
  if (a.size > 0) gray = resize_bilinear(gray, a.size, a.size);
  if (!(a.pipeline.sigma > 0.0)) throw InvalidParameter("--sigma must be positive");
  if (a.pipeline.m < 1 || a.pipeline.k < 1 || a.pipeline.k > a.pipeline.m * (a.pipeline.m + 1) / 2)
    throw InvalidParameter("need m >= 1 and 1 <= k <= m(m+1)/2");
  const GaussianSpec spec = GaussianSpec::from_sigma(a.pipeline.sigma);

  const fs::path out(a.out);
  ensure_dir(out);
  const TensorSet set = modified_tensor_set(gradient_stack(gray, a.pipeline.m), spec);
  const CoherentRepresentation rep = coherent_representation(set, a.pipeline.k);
  write_image(out / "coherent.png", rep.values);
  ImageBuffer coh = coherency_map(conventional_structure_tensor(gray, spec)).values;
  write_image(out / "coherency.png", coh);

  json selected = json::array();
  for (const auto& p : rep.selected) selected.push_back({p.m, p.n});
  json norms = json::array();
  for (std::size_t i = 0; i < set.pairs.size(); ++i) {
    norms.push_back({{"pair", {set.pairs[i].m, set.pairs[i].n}}, {"norm", frobenius_norm(set.tensors[i])}});
    if (a.all) {
      const std::string name = "tensor_" + std::to_string(set.pairs[i].m) + "_" + std::to_string(set.pairs[i].n);
      write_image(out / (name + ".png"), min_max_normalize(set.tensors[i]));
    }
  }
  write_run_config(out, app, {{"selected", selected}, {"tensors", norms}});
  std::cout << "selected";
  for (const auto& p : rep.selected) std::cout << " (" << p.m << "," << p.n << ")";
  std::cout << "\n" << (out / "coherent.png").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(std::uint64_t seed, double tolerance) {
  double worst = 0.0;
  for (const auto& e : run_gradcheck(seed)) {
    char line[160];
    std::snprintf(line, sizeof line, "%-24s checked %6zu  skipped at kinks %4zu  max relative error %.3e\n",
                  e.name.c_str(), e.checked, e.skipped, e.max_relative_error);
    std::cout << line;
    worst = std::max(worst, e.max_relative_error);
  }
  char line[96];
  std::snprintf(line, sizeof line, "max relative error %.3e (tolerance %.1e)\n", worst, tolerance);
  std::cout << line;
  return worst < tolerance ? kExitOk : kExitCheckFailed;
}

/// argv with the options of `--config <file>` spliced in right after the subcommand.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string path;
    std::size_t consumed = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      consumed = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      consumed = 1;
    } else {
      continue;
    }
    args.erase(args.begin() + i, args.begin() + i + consumed);
    const std::vector<std::string> extra = config_args(path);
    // Insert directly after the subcommand name (args[1]).
    const std::size_t at = std::min<std::size_t>(2, args.size());
    args.insert(args.begin() + at, extra.begin(), extra.end());
    break;
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trainable structure tensor segmentation of occluded items in pseudo-X-ray scans"};
  app.footer(kExitCodes);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  const std::string config_help = "JSON file of flag values (flags on the command line take precedence)";

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic pseudo-X-ray dataset");
  s->add_option("--n", synth.n, "number of scans (>= 1)")->required();
  s->add_option("--occlusion", synth.occlusion, "targeted overlap fraction of each threat")->capture_default_str();
  s->add_option("--seed", synth.seed, "random seed")->capture_default_str();
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--classes", synth.classes, "threat classes (knife, gun, shuriken, razor)")
      ->delimiter(',')
      ->capture_default_str();
  s->add_option("--size", synth.size, "canvas width and height")->capture_default_str();
  s->add_option("--noise", synth.noise, "Gaussian noise sigma")->capture_default_str();
  s->add_option("--min-threats", synth.min_threats)->capture_default_str();
  s->add_option("--max-threats", synth.max_threats)->capture_default_str();
  s->add_option("--min-clutter", synth.min_clutter)->capture_default_str();
  s->add_option("--max-clutter", synth.max_clutter)->capture_default_str();
  s->add_option("--config", config_help);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train the encoder-decoder on a dataset directory");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "output directory (model.tstb, loss_history.csv)")->required();
  t->add_option("--split", tr.split, "train | test | all")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "training epochs")->capture_default_str();
  t->add_option("--batch", tr.batch, "mini-batch size")->capture_default_str();
  t->add_option("--lr", tr.lr, "ADADELTA learning rate")->capture_default_str();
  t->add_option("--rho", tr.rho, "ADADELTA decay rate")->capture_default_str();
  t->add_option("--eps", tr.eps, "ADADELTA epsilon")->capture_default_str();
  t->add_option("--seed", tr.seed, "initialisation and shuffling seed")->capture_default_str();
  t->add_option("--stages", tr.stages, "encoder channels per stage")->delimiter(',')->capture_default_str();
  tr.pipeline.add_all(t);
  t->add_option("--config", config_help);

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "detect items in scans with a trained checkpoint");
  i->add_option("--model", inf.model, "checkpoint file")->required();
  i->add_option("--input", inf.input, "image, image directory or dataset directory")->required();
  i->add_option("--out", inf.out, "output directory")->required();
  i->add_option("--split", inf.split, "split used when --input is a dataset: train | test | all")
      ->capture_default_str();
  i->add_flag("--no-overlay", inf.no_overlay, "skip the overlay PNGs");
  i->add_option("--open-radius", inf.open_radius, "override the checkpoint's opening radius");
  i->add_option("--close-radius", inf.close_radius, "override the checkpoint's closing radius");
  i->add_option("--min-area", inf.min_area, "override the checkpoint's minimum component area");
  i->add_option("--config", config_help);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score predictions against ground truth");
  e->add_option("--pred", ev.pred, "prediction directory written by infer")->required();
  e->add_option("--gt", ev.gt, "dataset directory with annotations")->required();
  e->add_option("--iou", ev.iou, "box IoU threshold for a match (inclusive)")->capture_default_str();
  e->add_option("--report", ev.report, "write the report as JSON");
  e->add_option("--pr", ev.pr, "write per-class precision-recall points as CSV");
  e->add_option("--split", ev.split, "train | test | all")->capture_default_str();
  e->add_option("--tag", ev.tag, "only images whose annotation carries this tag");
  e->add_flag("--only-predicted", ev.only_predicted, "skip images without a prediction file");
  e->add_option("--config", config_help);

  TensorArgs ta;
  auto* x = app.add_subcommand("tensor", "write the coherent representation of an image");
  x->add_option("--input", ta.input, "input image")->required();
  x->add_option("--out", ta.out, "output directory")->required();
  x->add_option("--size", ta.size, "resize to size x size first (0 keeps the original)")->capture_default_str();
  x->add_flag("--all", ta.all, "also write every tensor of the set");
  ta.pipeline.add_tensor(x);
  x->add_option("--config", config_help);

  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of every backbone layer");
  g->add_option("--seed", gc_seed, "seed for the random test tensors")->capture_default_str();
  g->add_option("--tolerance", gc_tol, "maximum accepted relative error")->capture_default_str();

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    args.pop_back();  // program name
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kExitOk : kExitUsage;
  } catch (const InvalidConfig& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const IoError& err) {
    std::cerr << "I/O error: " << err.what() << "\n";
    return kExitIo;
  }

  try {
    if (*s) return cmd_synth(synth, *s);
    if (*t) return cmd_train(tr, *t);
    if (*i) return cmd_infer(inf, *i);
    if (*e) return cmd_eval(ev, *e);
    if (*x) return cmd_tensor(ta, *x);
    if (*g) return cmd_gradcheck(gc_seed, gc_tol);
  } catch (const InvalidParameter& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const InvalidConfig& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const InvalidInput& err) {
    std::cerr << "invalid input: " << err.what() << "\n";
    return kExitIo;
  } catch (const IoError& err) {
    std::cerr << "I/O error: " << err.what() << "\n";
    return kExitIo;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
