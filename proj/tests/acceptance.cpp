// Acceptance runner: one PASS/FAIL line per criterion, exit 1 if any fails.
// `--quick` skips the two training criteria (7 and 8).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tst/backbone.hpp"
#include "tst/imaging.hpp"
#include "tst/metrics.hpp"
#include "tst/segmenter.hpp"
#include "tst/synthdata.hpp"
#include "tst/tensor_core.hpp"

using namespace tst;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << "  " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << std::fixed << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

double max_abs_diff(const ImageBuffer& a, const ImageBuffer& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

void tensor_oracle() {
  const auto t0 = Clock::now();
  const GaussianSpec spec{1.0, 3};
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ImageBuffer img(32, 32);
    for (auto& v : img.data()) v = u(rng);
    const TensorSet set = modified_tensor_set(gradient_stack(img, 4), spec);
    const StructureTensorField f = conventional_structure_tensor(img, spec);
    // pair order for M=4: (0,0) (0,1) (0,2) (0,3) (1,1) ...
    worst = std::max({worst, max_abs_diff(set.tensors[0], f.jxx), max_abs_diff(set.tensors[1], f.jxy),
                      max_abs_diff(set.tensors[4], f.jyy)});
  }
  const double secs = seconds_since(t0);
  report(1, worst <= 1e-9 && secs < 5.0,
         "tensor oracle: max |diff| " + sci(worst) + " over 20 images, " + fmt(secs, 2) + " s");
}

void coherency_properties() {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> mag(-6.0, 3.0);
  bool in_range = true;
  for (int i = 0; i < 1000; ++i) {
    // sums of gradient outer products, over several orders of magnitude
    double a = 0, b = 0, c = 0;
    const int terms = 1 + i % 4;
    for (int t = 0; t < terms; ++t) {
      const double s = std::pow(10.0, mag(rng));
      const double gx = s * n(rng), gy = s * n(rng);
      a += gx * gx, b += gx * gy, c += gy * gy;
    }
    const Eigenvalues2 e = symmetric_eigenvalues(a, b, c);
    const double cd = coherency(e.major, e.minor);
    in_range = in_range && cd >= 0.0 && cd <= 1.0;
  }
  const double c1 = coherency(3.0, 1.0), c2 = coherency(3.0, 0.0), c3 = coherency(2.0, 2.0);
  const bool exact = std::abs(c1 - 0.25) <= 1e-12 && std::abs(c2 - 1.0) <= 1e-12 && std::abs(c3) <= 1e-12;
  report(2, in_range && exact,
         std::string("coherency: 1000 random tensors ") + (in_range ? "in [0,1]" : "OUT of range") + ", cases " +
             fmt(c1, 12) + " " + fmt(c2, 12) + " " + fmt(c3, 12));
}

void gradient_check() {
  const auto t0 = Clock::now();
  const auto entries = run_gradcheck(1);
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (const auto& e : entries) {
    worst = std::max(worst, e.max_relative_error);
    checked += e.checked;
    skipped += e.skipped;
  }
  const double secs = seconds_since(t0);
  report(3, worst < 1e-4 && secs < 60.0 && !entries.empty(),
         "gradcheck: " + std::to_string(entries.size()) + " entries, " + std::to_string(checked) +
             " coordinates (" + std::to_string(skipped) + " at kinks skipped), max rel err " + sci(worst) + ", " +
             fmt(secs, 2) + " s");
}

void adadelta_oracle() {
  std::vector<double> params{0.0}, grads{1.0};
  OptimizerState<double> state;
  state.rho = 0.95;
  state.eps = 1e-6;
  adadelta_step<double>(params, grads, state);
  report(4, std::abs(params[0] - -0.004472) <= 1e-6, "adadelta first step " + fmt(params[0], 7));
}

double brute_force_mbr_area(const std::vector<Point2>& pts, int steps) {
  double best = std::numeric_limits<double>::infinity();
  for (int s = 0; s < steps; ++s) {
    const double a = std::numbers::pi * s / steps;
    const double c = std::cos(a), sn = std::sin(a);
    double u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
    for (const auto& p : pts) {
      const double u = c * p.x + sn * p.y, v = -sn * p.x + c * p.y;
      u0 = std::min(u0, u), u1 = std::max(u1, u), v0 = std::min(v0, v), v1 = std::max(v1, v);
    }
    best = std::min(best, (u1 - u0) * (v1 - v0));
  }
  return best;
}

void mbr_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<int> count(3, 12);
  int bad_area = 0, bad_contain = 0;
  double worst_excess = -std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Point2> pts(count(rng));
    for (auto& p : pts) p = {u(rng), u(rng)};
    const RotatedRect r = min_bounding_rectangle(pts);
    const double excess = r.area() - brute_force_mbr_area(pts, 3600);
    worst_excess = std::max(worst_excess, excess);
    if (excess > 1e-6) ++bad_area;
    for (const auto& p : pts)
      if (!r.contains(p, 1e-6)) {
        ++bad_contain;
        break;
      }
  }
  const double secs = seconds_since(t0);
  report(5, bad_area == 0 && bad_contain == 0 && secs < 30.0,
         "MBR: 500 sets, " + std::to_string(bad_area) + " above scan, " + std::to_string(bad_contain) +
             " not containing, worst area - scan " + sci(worst_excess) + ", " + fmt(secs, 2) + " s");
}

void metrics_oracle() {
  const double ap1 = average_precision({true}, 1).value();
  const double ap0 = average_precision({false}, 1).value();
  const double ap56 = average_precision({true, false, true}, 2).value();
  const ConfusionCounts c{3, 1, 1};
  const double dc = dice_from_counts(c), iou = iou_from_counts(c);
  const bool ok = ap1 == 1.0 && ap0 == 0.0 && ap56 == 5.0 / 6.0 && dc == 0.75 && iou == 0.6;
  report(6, ok,
         "metrics: AP " + fmt(ap1) + " " + fmt(ap0) + " " + fmt(ap56, 6) + ", DC " + fmt(dc) + ", IoU " + fmt(iou));
}

void morphology_fill() {
  std::mt19937_64 rng(909);
  std::bernoulli_distribution coin(0.45);
  int duality = 0, idempotence = 0;
  for (int trial = 0; trial < 30; ++trial) {
    BinaryMask m(29, 23);
    for (auto& v : m.bits()) v = coin(rng) ? 1 : 0;
    for (auto shape : {StructuringShape::kDisk, StructuringShape::kSquare})
      for (int r = 1; r <= 3; ++r) {
        if (erode(m, r, shape) != dilate(m.complement(), r, shape).complement()) ++duality;
        if (dilate(m, r, shape) != erode(m.complement(), r, shape).complement()) ++duality;
        const BinaryMask o = open(m, r, shape), c = close(m, r, shape);
        if (open(o, r, shape) != o || close(c, r, shape) != c) ++idempotence;
      }
  }
  std::string areas;
  bool fill_ok = true;
  for (int radius : {5, 10, 20}) {
    const int size = 2 * radius + 11;
    const double cx = size / 2.0, cy = size / 2.0;
    BinaryMask disk(size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= radius) disk.set(x, y);
    const BinaryMask filled = fill_closed_contour(inner_boundary(disk));
    const double expected = std::numbers::pi * radius * radius;
    const double rel = std::abs(static_cast<double>(filled.count()) - expected) / expected;
    fill_ok = fill_ok && rel <= 0.05;
    areas += " r" + std::to_string(radius) + ":" + fmt(100 * rel, 2) + "%";
  }
  report(9, duality == 0 && idempotence == 0 && fill_ok,
         "morphology: " + std::to_string(duality) + " duality and " + std::to_string(idempotence) +
             " idempotence violations, ring fill error" + areas);
}

// ---------------------------------------------------------------------------
// end-to-end on synthetic scans
// ---------------------------------------------------------------------------

constexpr std::uint64_t kDataSeed = 7;
constexpr int kTrainScans = 300;
constexpr int kTestScans = 60;
constexpr int kEpochs = 40;
constexpr int kBatch = 4;
const std::vector<int> kStages{16, 32, 64, 128};

struct Corpus {
  SceneTemplate tmpl;
  std::vector<Scan> scans;
};

Corpus make_corpus() {
  Corpus c;
  c.tmpl.occlusion_level = 0.4;
  c.scans.reserve(kTrainScans + kTestScans);
  for (int i = 0; i < kTrainScans + kTestScans; ++i)
    c.scans.push_back(compose_scan(sample_scene(c.tmpl, derive_seed(kDataSeed, static_cast<std::uint64_t>(i)))));
  return c;
}

struct RunOutcome {
  EvalReport report;
  PipelineConfig pipeline;
  BackboneParams<float> params;
  std::vector<char> checkpoint;
  double train_seconds = 0.0;
  double loss_first = 0.0;
  double loss_last = 0.0;
};

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunOutcome train_and_evaluate(const Corpus& corpus, InputMode mode, const std::string& tag,
                              std::uint64_t init_seed = kDataSeed) {
  PipelineConfig pipeline;
  pipeline.class_names = corpus.tmpl.classes;
  pipeline.input_mode = mode;
  pipeline.validate();
  const BackboneConfig backbone = backbone_config_for(pipeline, kStages, init_seed);

  std::vector<TrainRecord> records;
  records.reserve(kTrainScans);
  for (int i = 0; i < kTrainScans; ++i) {
    const Scan& s = corpus.scans[i];
    std::vector<int> ids;
    for (const auto& item : s.items) ids.push_back(item.class_id);
    records.push_back(make_train_record(s.image, s.masks, ids, pipeline));
  }

  TrainOptions opts;
  opts.epochs = kEpochs;
  opts.batch_size = kBatch;
  opts.on_epoch = [&](int epoch, double loss) {
    if ((epoch + 1) % 10 == 0) std::cout << "  [" << tag << "] epoch " << epoch + 1 << " loss " << fmt(loss, 6) << std::endl;
  };
  const auto t0 = Clock::now();
  const TrainResult result = train(records, backbone, opts);

  RunOutcome out;
  out.train_seconds = seconds_since(t0);
  out.loss_first = result.loss_history.front();
  out.loss_last = result.loss_history.back();

  const fs::path ckpt = fs::temp_directory_path() / ("tst_acceptance_" + tag + ".tstb");
  save_checkpoint(ckpt, result.params, {{"pipeline", pipeline.to_json()}});
  out.checkpoint = slurp(ckpt);
  fs::remove(ckpt);

  std::vector<EvalImage> images;
  for (int i = kTrainScans; i < kTrainScans + kTestScans; ++i) {
    const Scan& s = corpus.scans[i];
    EvalImage img;
    img.image_id = std::to_string(i);
    img.width = s.image.width();
    img.height = s.image.height();
    img.detections = detect(s.image, result.params, pipeline);
    img.ground_truth = s.items;
    images.push_back(std::move(img));
  }
  out.report = evaluate(images, corpus.tmpl.classes);
  out.pipeline = pipeline;
  out.params = result.params;
  return out;
}

// One shuriken alone on an empty belt: expect exactly one detection, of its class.
std::string isolated_star_note(const RunOutcome& run, const SceneTemplate& tmpl) {
  const auto it = std::find(tmpl.classes.begin(), tmpl.classes.end(), "shuriken");
  if (it == tmpl.classes.end()) return "no shuriken class";
  SceneSpec scene;
  scene.width = tmpl.width;
  scene.height = tmpl.height;
  scene.noise_sigma = tmpl.noise_sigma;
  scene.seed = 77;
  ShapeSpec star;
  star.class_id = static_cast<int>(it - tmpl.classes.begin()) + 1;
  star.shape = ShapeTemplate::kShuriken;
  star.pose = {{64.0, 64.0}, 0.3, 18.0};
  star.transmittance = 0.4;
  scene.items = {star};
  const Scan scan = compose_scan(scene);
  const auto dets = detect(scan.image, run.params, run.pipeline);
  double best = 0.0;
  for (const auto& d : dets)
    if (d.class_id == star.class_id) best = std::max(best, box_iou(d.aabb, scan.items.front().aabb));
  const bool ok = dets.size() == 1 && dets.front().class_id == star.class_id && best >= 0.5;
  return std::string(ok ? "ok" : "MISSED") + " (" + std::to_string(dets.size()) + " detection(s), box IoU " +
         fmt(best, 3) + ")";
}

std::string class_summary(const EvalReport& r) {
  std::string s;
  for (const auto& c : r.classes)
    s += " " + c.name + "(AP " + (c.ap ? fmt(*c.ap, 3) : "-") + " DC " + (c.dice ? fmt(*c.dice, 3) : "-") + ")";
  return s;
}

void end_to_end() {
  const auto t0 = Clock::now();
  const Corpus corpus = make_corpus();
  std::cout << "  corpus: " << kTrainScans << " train + " << kTestScans << " test scans, seed " << kDataSeed
            << ", occlusion 0.4, " << fmt(seconds_since(t0), 1) << " s" << std::endl;

  const RunOutcome main = train_and_evaluate(corpus, InputMode::kCoherent, "coherent");
  const double map = main.report.mean_ap, dc = main.report.mean_dice;
  std::cout << "  coherent: mAP " << fmt(map) << " DC " << fmt(dc) << class_summary(main.report) << std::endl;
  std::cout << "  isolated star: " << isolated_star_note(main, corpus.tmpl) << std::endl;

  // A flat loss means the baseline never left the all-background start, and its
  // DC then says nothing about the front end. One retry with the next seed.
  auto stalled = [](const RunOutcome& r) { return r.loss_last > 0.8 * r.loss_first; };
  std::uint64_t lum_seed = kDataSeed;
  RunOutcome lum = train_and_evaluate(corpus, InputMode::kLuminance, "luminance");
  std::cout << "  luminance seed " << lum_seed << ": loss " << fmt(lum.loss_first, 6) << " -> " << fmt(lum.loss_last, 6)
            << ", mAP " << fmt(lum.report.mean_ap) << " DC " << fmt(lum.report.mean_dice) << std::endl;
  if (stalled(lum)) {
    lum_seed = kDataSeed + 1;
    std::cout << "  luminance run stalled, retraining with seed " << lum_seed << std::endl;
    lum = train_and_evaluate(corpus, InputMode::kLuminance, "luminance", lum_seed);
    std::cout << "  luminance seed " << lum_seed << ": loss " << fmt(lum.loss_first, 6) << " -> "
              << fmt(lum.loss_last, 6) << std::endl;
  }
  const bool lum_stalled = stalled(lum);
  const double gap = dc - lum.report.mean_dice;
  std::cout << "  luminance baseline: mAP " << fmt(lum.report.mean_ap) << " DC " << fmt(lum.report.mean_dice)
            << class_summary(lum.report) << std::endl;

  const double secs = seconds_since(t0);
  const bool ok = map >= 0.70 && dc >= 0.60;
  report(7, ok,
         "end-to-end: mAP@0.5 " + fmt(map) + " (>= 0.70), mean DC " + fmt(dc) + " (>= 0.60), " +
             std::to_string(kEpochs) + " epochs, train " + fmt(main.train_seconds / 60, 1) +
             " min; luminance DC " + fmt(lum.report.mean_dice) + (gap > 0 ? " lower" : " NOT lower") +
             ", gap " + fmt(gap) + " (seed " + std::to_string(lum_seed) + (lum_stalled ? ", stalled" : "") +
             "); total " + fmt(secs / 60, 1) + " min on " +
             std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " core(s)");

  const RunOutcome again = train_and_evaluate(corpus, InputMode::kCoherent, "repeat");
  const bool same_bytes = again.checkpoint == main.checkpoint && !main.checkpoint.empty();
  const bool same_map = fmt(again.report.mean_ap) == fmt(map);
  report(8, same_bytes && same_map,
         std::string("determinism: checkpoint ") + (same_bytes ? "byte-identical" : "DIFFERS") + " (" +
             std::to_string(main.checkpoint.size()) + " bytes), mAP " + fmt(map) + " vs " +
             fmt(again.report.mean_ap));
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = false;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--quick") quick = true;

  try {
    tensor_oracle();
    coherency_properties();
    gradient_check();
    adadelta_oracle();
    mbr_oracle();
    metrics_oracle();
    if (quick) {
      std::cout << "SKIP  criterion 7  (--quick)\nSKIP  criterion 8  (--quick)" << std::endl;
    } else {
      end_to_end();
    }
    morphology_fill();
  } catch (const std::exception& e) {
    std::cout << "FAIL  aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion/criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
