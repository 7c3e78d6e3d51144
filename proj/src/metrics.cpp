#include "tst/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "tst/error.hpp"

namespace tst {

ConfusionCounts pixel_counts(const BinaryMask& pred, const BinaryMask& truth) {
  if (!pred.same_shape(truth)) throw InvalidInput("mask dimensions differ");
  ConfusionCounts c;
  const auto p = pred.bits();
  const auto t = truth.bits();
  for (std::size_t i = 0; i < p.size(); ++i) {
    c.tp += p[i] & t[i];
    c.fp += p[i] & (t[i] ^ 1);
    c.fn += (p[i] ^ 1) & t[i];
  }
  return c;
}

double iou_from_counts(const ConfusionCounts& c) {
  const std::size_t denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double dice_from_counts(const ConfusionCounts& c) {
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) { return iou_from_counts(pixel_counts(a, b)); }
double mask_dice(const BinaryMask& a, const BinaryMask& b) { return dice_from_counts(pixel_counts(a, b)); }

double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthItem>& gts,
                             double iou_threshold) {
  for (std::size_t i = 1; i < dets.size(); ++i)
    if (dets[i].score > dets[i - 1].score) throw InvalidInput("detections must be sorted by descending score");
  MatchResult r;
  r.is_tp.assign(dets.size(), false);
  r.matched_gt.assign(dets.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != dets[d].class_id) continue;
      const double iou = box_iou(dets[d].aabb, gts[g].aabb);
      if (iou >= iou_threshold && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[best] = true;
      r.is_tp[d] = true;
      r.matched_gt[d] = best;
    }
  }
  r.unmatched_gt = static_cast<std::size_t>(std::count(taken.begin(), taken.end(), false));
  return r;
}

namespace {

// Precision and recall after each ranked detection.
void pr_points(const std::vector<bool>& flags, std::size_t total_gt, std::vector<double>& precision,
               std::vector<double>& recall) {
  precision.clear();
  recall.clear();
  std::size_t tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    tp += flags[i] ? 1 : 0;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
}

}  // namespace

std::optional<double> average_precision(const std::vector<bool>& flags, std::size_t total_gt) {
  if (total_gt == 0) return std::nullopt;
  // Recall only moves at a TP, by 1/total_gt, so AP is the mean envelope
  // precision over TPs. Extended precision and one final rounding keep
  // textbook cases like 5/6 bit-exact.
  std::vector<long double> precision(flags.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    tp += flags[i] ? 1 : 0;
    precision[i] = static_cast<long double>(tp) / static_cast<long double>(i + 1);
  }
  long double envelope = 0.0L, sum = 0.0L;
  for (std::size_t i = flags.size(); i-- > 0;) {
    envelope = std::max(envelope, precision[i]);
    if (flags[i]) sum += envelope;
  }
  return std::clamp(static_cast<double>(sum / static_cast<long double>(total_gt)), 0.0, 1.0);
}

EvalReport evaluate(const std::vector<EvalImage>& images, const std::vector<std::string>& class_names,
                    double iou_threshold) {
  const int num_classes = static_cast<int>(class_names.size());
  EvalReport report;
  report.iou_threshold = iou_threshold;
  report.image_count = images.size();
  report.classes.resize(class_names.size());
  for (int c = 0; c < num_classes; ++c) report.classes[c].name = class_names[c];

  struct Ranked {
    double score;
    const std::string* image_id;
    std::size_t index;
    bool tp;
  };
  std::vector<std::vector<Ranked>> ranked(num_classes);
  std::vector<double> dice_sum(num_classes, 0.0), iou_sum(num_classes, 0.0);
  std::vector<std::size_t> mask_images(num_classes, 0);

  for (const auto& img : images) {
    for (const auto& g : img.ground_truth) {
      if (g.class_id < 1 || g.class_id > num_classes) throw InvalidInput("ground truth class id out of range");
      ++report.classes[g.class_id - 1].gt_count;
    }
    std::vector<std::size_t> order(img.detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return img.detections[a].score > img.detections[b].score; });
    std::vector<Detection> sorted;
    sorted.reserve(order.size());
    for (std::size_t i : order) {
      const Detection& d = img.detections[i];
      if (d.class_id < 1 || d.class_id > num_classes) throw InvalidInput("detection class id out of range");
      sorted.push_back(d);
    }
    const MatchResult m = match_detections(sorted, img.ground_truth, iou_threshold);
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      ClassReport& cr = report.classes[sorted[i].class_id - 1];
      ++cr.det_count;
      (m.is_tp[i] ? cr.detections.tp : cr.detections.fp)++;
      ranked[sorted[i].class_id - 1].push_back({sorted[i].score, &img.image_id, order[i], m.is_tp[i]});
    }
    std::vector<bool> gt_matched(img.ground_truth.size(), false);
    for (int g : m.matched_gt)
      if (g >= 0) gt_matched[g] = true;
    for (std::size_t g = 0; g < img.ground_truth.size(); ++g)
      if (!gt_matched[g]) ++report.classes[img.ground_truth[g].class_id - 1].detections.fn;

    // Per-class mask agreement on this image.
    if (img.width <= 0 || img.height <= 0) {
      if (!img.ground_truth.empty() || !img.detections.empty())
        throw InvalidInput("image '" + img.image_id + "' has no size for mask evaluation");
      continue;
    }
    for (int c = 1; c <= num_classes; ++c) {
      BinaryMask pred(img.width, img.height), truth(img.width, img.height);
      bool present = false;
      for (const auto& d : img.detections) {
        if (d.class_id != c) continue;
        if (d.mask.width() != img.width || d.mask.height() != img.height)
          throw InvalidInput("detection mask size differs from image '" + img.image_id + "'");
        pred |= d.mask;
        present = true;
      }
      for (const auto& g : img.ground_truth) {
        if (g.class_id != c) continue;
        truth |= ground_truth_mask(g, img.width, img.height);
        present = true;
      }
      if (!present) continue;
      const ConfusionCounts pc = pixel_counts(pred, truth);
      report.classes[c - 1].pixels += pc;
      dice_sum[c - 1] += dice_from_counts(pc);
      iou_sum[c - 1] += iou_from_counts(pc);
      ++mask_images[c - 1];
    }
  }

  std::size_t total_gt = 0;
  for (const auto& cr : report.classes) total_gt += cr.gt_count;
  if (total_gt == 0) throw InvalidInput("ground truth is empty for every class");

  double ap_sum = 0.0, dsum = 0.0, isum = 0.0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    ClassReport& cr = report.classes[c];
    auto& r = ranked[c];
    // Ties ordered by image id then detection index, so image order never matters.
    std::sort(r.begin(), r.end(), [](const Ranked& a, const Ranked& b) {
      if (a.score != b.score) return a.score > b.score;
      if (*a.image_id != *b.image_id) return *a.image_id < *b.image_id;
      return a.index < b.index;
    });
    std::vector<bool> flags;
    for (const auto& x : r) flags.push_back(x.tp);
    cr.ap = average_precision(flags, cr.gt_count);
    if (mask_images[c] > 0) {
      cr.dice = dice_sum[c] / mask_images[c];
      cr.iou = iou_sum[c] / mask_images[c];
    }
    if (cr.gt_count > 0) {
      std::vector<double> precision, recall;
      pr_points(flags, cr.gt_count, precision, recall);
      for (std::size_t i = 0; i < r.size(); ++i) cr.pr_curve.push_back({r[i].score, recall[i], precision[i]});
      ap_sum += *cr.ap;
      dsum += cr.dice.value_or(0.0);
      isum += cr.iou.value_or(0.0);
      ++counted;
    }
    report.totals += cr.detections;
  }
  report.mean_ap = ap_sum / counted;
  report.mean_dice = dsum / counted;
  report.mean_iou = isum / counted;
  return report;
}

nlohmann::json EvalReport::to_json() const {
  using nlohmann::json;
  auto counts = [](const ConfusionCounts& c) { return json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}}; };
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json per_class = json::array();
  for (const auto& c : classes)
    per_class.push_back({{"class", c.name},
                         {"gt", c.gt_count},
                         {"detections", c.det_count},
                         {"ap", opt(c.ap)},
                         {"dice", opt(c.dice)},
                         {"iou", opt(c.iou)},
                         {"detection_counts", counts(c.detections)},
                         {"pixel_counts", counts(c.pixels)}});
  return {{"iou_threshold", iou_threshold},
          {"images", image_count},
          {"mAP", mean_ap},
          {"mean_dice", mean_dice},
          {"mean_iou", mean_iou},
          {"counts", counts(totals)},
          {"classes", per_class}};
}

std::string EvalReport::pr_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "class,score,recall,precision\n";
  for (const auto& c : classes)
    for (const auto& p : c.pr_curve) out << c.name << ',' << p.score << ',' << p.recall << ',' << p.precision << '\n';
  return out.str();
}

}  // namespace tst
