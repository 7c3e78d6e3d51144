#include "tst/segmenter.hpp"

#include <algorithm>
#include <cmath>

#include "tst/error.hpp"
#include "tst/imaging.hpp"

namespace tst {

std::string input_mode_name(InputMode mode) {
  switch (mode) {
    case InputMode::kCoherent: return "coherent";
    case InputMode::kLuminance: return "luminance";
    case InputMode::kCoherentLuminance: return "coherent+luminance";
  }
  return "coherent";
}

InputMode parse_input_mode(const std::string& name) {
  if (name == "coherent") return InputMode::kCoherent;
  if (name == "luminance") return InputMode::kLuminance;
  if (name == "coherent+luminance") return InputMode::kCoherentLuminance;
  throw InvalidConfig("unknown input mode '" + name + "'");
}

int input_channels(InputMode mode) { return mode == InputMode::kCoherentLuminance ? 2 : 1; }

void PipelineConfig::validate() const {
  if (m < 1) throw InvalidConfig("m must be >= 1");
  if (k < 1 || k > m * (m + 1) / 2) throw InvalidConfig("k must lie in [1, m(m+1)/2]");
  if (!(gaussian.sigma > 0.0) || gaussian.radius < 1) throw InvalidConfig("invalid gaussian");
  if (input_height < 1 || input_width < 1) throw InvalidConfig("input size must be positive");
  if (open_radius < 0 || close_radius < 0) throw InvalidConfig("morphology radii must be >= 0");
  if (min_area < 1) throw InvalidConfig("min_area must be >= 1");
  if (class_names.empty()) throw InvalidConfig("at least one class name is required");
}

nlohmann::json PipelineConfig::to_json() const {
  return {{"m", m},
          {"k", k},
          {"gaussian", {{"sigma", gaussian.sigma}, {"radius", gaussian.radius}}},
          {"input_size", {input_height, input_width}},
          {"open_radius", open_radius},
          {"close_radius", close_radius},
          {"min_area", min_area},
          {"class_names", class_names},
          {"input_mode", input_mode_name(input_mode)}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    c.m = j.value("m", c.m);
    c.k = j.value("k", c.k);
    if (j.contains("gaussian")) {
      c.gaussian.sigma = j["gaussian"].value("sigma", c.gaussian.sigma);
      c.gaussian.radius = j["gaussian"].value("radius", c.gaussian.radius);
    }
    if (j.contains("input_size")) {
      c.input_height = j["input_size"].at(0).get<int>();
      c.input_width = j["input_size"].at(1).get<int>();
    }
    c.open_radius = j.value("open_radius", c.open_radius);
    c.close_radius = j.value("close_radius", c.close_radius);
    c.min_area = j.value("min_area", c.min_area);
    c.class_names = j.value("class_names", c.class_names);
    c.input_mode = parse_input_mode(j.value("input_mode", input_mode_name(c.input_mode)));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("malformed pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

BackboneConfig backbone_config_for(const PipelineConfig& config, std::vector<int> stage_channels,
                                   std::uint64_t seed) {
  BackboneConfig b;
  b.height = config.input_height;
  b.width = config.input_width;
  b.in_channels = input_channels(config.input_mode);
  b.num_classes = config.num_classes();
  b.stage_channels = std::move(stage_channels);
  b.seed = seed;
  b.validate();
  return b;
}

ImageBuffer prepare_scan(const ImageBuffer& scan, const PipelineConfig& config) {
  if (scan.empty()) throw InvalidInput("scan has zero size");
  if (!scan.all_finite()) throw NumericError("scan contains non-finite values");
  ImageBuffer gray = scan.channels() == 1 ? scan : to_luminance(scan);
  if (gray.width() == config.input_width && gray.height() == config.input_height) return gray;
  return resize_bilinear(gray, config.input_width, config.input_height);
}

CoherentRepresentation preprocess(const ImageBuffer& scan, const PipelineConfig& config) {
  return coherent_representation(prepare_scan(scan, config), config.m, config.k, config.gaussian);
}

FeatureMap<float> network_input(const ImageBuffer& scan, const PipelineConfig& config) {
  const ImageBuffer gray = prepare_scan(scan, config);
  std::vector<ImageBuffer> planes;
  if (config.input_mode != InputMode::kLuminance)
    planes.push_back(coherent_representation(gray, config.m, config.k, config.gaussian).values);
  if (config.input_mode != InputMode::kCoherent) planes.push_back(gray);
  return to_feature_map<float>(planes);
}

Segmentation labels_from_probs(FeatureMap<float> probs) {
  Segmentation s;
  s.labels = LabelMap(probs.width, probs.height);
  const std::size_t plane = probs.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    for (int c = 1; c < probs.channels; ++c)
      if (probs.data[c * plane + p] > probs.data[best * plane + p]) best = c;
    s.labels.labels[p] = best;
  }
  s.probs = std::move(probs);
  return s;
}

Segmentation segment(const ImageBuffer& scan, const BackboneParams<float>& params, const PipelineConfig& config) {
  const BackboneConfig& b = params.config;
  if (b.height != config.input_height || b.width != config.input_width ||
      b.in_channels != input_channels(config.input_mode) || b.num_classes != config.num_classes())
    throw InvalidInput("backbone parameters do not match the pipeline configuration");
  return labels_from_probs(forward(params, network_input(scan, config)));
}

std::vector<Detection> postprocess(const LabelMap& labels, const FeatureMap<float>& probs,
                                   const PipelineConfig& config, int original_width, int original_height) {
  if (probs.width != labels.width || probs.height != labels.height || probs.channels < config.num_classes())
    throw InvalidInput("label map and probabilities disagree in size");
  const int w = labels.width, h = labels.height;
  const double sx = static_cast<double>(original_width) / w;
  const double sy = static_cast<double>(original_height) / h;

  std::vector<Detection> out;
  for (int c = 1; c < config.num_classes(); ++c) {
    BinaryMask mask(w, h);
    bool any = false;
    for (std::size_t p = 0; p < labels.labels.size(); ++p)
      if (labels.labels[p] == c) mask.bits()[p] = 1, any = true;
    if (!any) continue;
    if (config.open_radius > 0) mask = open(mask, config.open_radius);

    for (const Component& comp : connected_components(mask, 8)) {
      if (comp.area() < static_cast<std::size_t>(config.min_area)) continue;
      BinaryMask contour(w, h);
      double prob_sum = 0.0;
      for (const auto& px : comp.pixels) {
        contour.set(px.x, px.y);
        prob_sum += probs.at(c, px.y, px.x);
      }
      Detection d;
      d.class_id = c;
      d.score = std::clamp(prob_sum / static_cast<double>(comp.area()), 0.0, 1.0);

      std::vector<Point2> footprint = pixel_footprint(comp.pixels);
      for (auto& p : footprint) p = {p.x * sx, p.y * sy};
      d.rbox = min_bounding_rectangle(footprint);
      d.aabb = d.rbox.envelope();

      BinaryMask filled = fill_closed_contour(contour, config.close_radius);
      d.mask = (original_width == w && original_height == h) ? std::move(filled)
                                                            : resize_nearest(filled, original_width, original_height);
      out.push_back(std::move(d));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

std::vector<Detection> detect(const ImageBuffer& scan, const BackboneParams<float>& params,
                              const PipelineConfig& config) {
  const Segmentation s = segment(scan, params, config);
  return postprocess(s.labels, s.probs, config, scan.width(), scan.height());
}

LabelMap contour_target(std::span<const BinaryMask> masks, std::span<const int> class_ids,
                        const PipelineConfig& config) {
  if (masks.size() != class_ids.size()) throw InvalidInput("one class id per mask is required");
  LabelMap target(config.input_width, config.input_height);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (class_ids[i] < 1 || class_ids[i] >= config.num_classes()) throw InvalidInput("class id out of range");
    BinaryMask m = masks[i];
    if (m.width() != config.input_width || m.height() != config.input_height)
      m = resize_nearest(m, config.input_width, config.input_height);
    // 3 px thick and entirely inside the item. A band straddling the edge puts a
    // 1 px skirt around every filled prediction, which inflates small items badly.
    BinaryMask band = dilate(inner_boundary(m), 2, StructuringShape::kSquare);
    band &= m;
    for (std::size_t p = 0; p < band.bits().size(); ++p)
      if (band.bits()[p]) target.labels[p] = class_ids[i];
  }
  return target;
}

TrainRecord make_train_record(const ImageBuffer& scan, std::span<const BinaryMask> masks,
                              std::span<const int> class_ids, const PipelineConfig& config) {
  return {network_input(scan, config), contour_target(masks, class_ids, config)};
}

}  // namespace tst
