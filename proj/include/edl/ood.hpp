#pragma once

// Unsupervised ungradability: artificial OOD images made by blanking the
// Grad-CAM region, a vertically flipped-mask control, and calibration of
// the uncertainty threshold u* on ID vs occluded copies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "edl/convnet.hpp"
#include "edl/io.hpp"
#include "edl/metrics.hpp"
#include "edl/predict.hpp"

namespace edl {

enum class OcclusionMode { occlude_cam, occlude_flipped_cam };

struct OcclusionSpec {
  double threshold = 0.5;
  OcclusionMode mode = OcclusionMode::occlude_cam;
  double fill = 0.0;

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) {
      throw ArgumentError("occlusion threshold must lie in (0,1), got " + io::format_double(threshold));
    }
  }
};

/// Row-major H×W mask of pixels to blank.
inline std::vector<char> occlusion_mask(const SaliencyMap& saliency, const OcclusionSpec& spec) {
  spec.validate();
  const std::size_t h = saliency.height, w = saliency.width;
  std::vector<char> mask(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t src = spec.mode == OcclusionMode::occlude_flipped_cam ? h - 1 - r : r;
      mask[r * w + c] = saliency.at(src, c) > spec.threshold;
    }
  return mask;
}

inline Tensor make_ood(const Tensor& image, const SaliencyMap& saliency, const OcclusionSpec& spec) {
  if (image.ndim() != 3 || image.dim(1) != saliency.height || image.dim(2) != saliency.width) {
    throw DimensionError("saliency " + std::to_string(saliency.height) + "x" +
                         std::to_string(saliency.width) + " does not match image " +
                         shape_string(image.shape()));
  }
  const auto mask = occlusion_mask(saliency, spec);
  Tensor out = image;
  const std::size_t plane = mask.size();
  for (std::size_t ch = 0; ch < image.dim(0); ++ch)
    for (std::size_t p = 0; p < plane; ++p)
      if (mask[p]) out[ch * plane + p] = spec.fill;
  return out;
}

inline Tensor image_at(const Tensor& batch, std::size_t i) {
  const Shape s{batch.dim(1), batch.dim(2), batch.dim(3)};
  const std::size_t n = shape_size(s);
  return Tensor(s, std::vector<double>(batch.data().begin() + i * n, batch.data().begin() + (i + 1) * n));
}

/// Uncertainty of each image, its occluded copy and its flipped-mask copy.
struct OodScores {
  std::vector<double> u_id;
  std::vector<double> u_occluded;
  std::vector<double> u_flipped;
  std::vector<std::size_t> masked_pixels;
};

/// Grad-CAM targets the predicted class of each original image.
inline OodScores score_ood(const Model& model, const Tensor& images, double cam_threshold = 0.5,
                           const std::string& layer = {}) {
  if (images.ndim() != 4 || images.dim(0) == 0) throw ArgumentError("score_ood needs a non-empty batch");
  const std::size_t n = images.dim(0);
  const auto id = predict(model, images);

  Tensor occluded(images.shape()), flipped(images.shape());
  const std::size_t per = images.size() / n;
  OodScores out;
  OcclusionSpec occ{cam_threshold, OcclusionMode::occlude_cam};
  OcclusionSpec flip{cam_threshold, OcclusionMode::occlude_flipped_cam};
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor img = image_at(images, i);
    const SaliencyMap cam = grad_cam(model, img, id[i].predicted_class, layer);
    const Tensor a = make_ood(img, cam, occ);
    const Tensor b = make_ood(img, cam, flip);
    std::copy(a.data().begin(), a.data().end(), occluded.data().begin() + i * per);
    std::copy(b.data().begin(), b.data().end(), flipped.data().begin() + i * per);
    const auto mask = occlusion_mask(cam, occ);
    out.masked_pixels.push_back(static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)));
  }
  for (const auto& p : id) out.u_id.push_back(p.uncertainty);
  for (const auto& p : predict(model, occluded)) out.u_occluded.push_back(p.uncertainty);
  for (const auto& p : predict(model, flipped)) out.u_flipped.push_back(p.uncertainty);
  return out;
}

inline constexpr std::size_t kMinCalibrationImages = 50;

struct Calibration {
  RocAnalysis roc;  // OOD (occluded) as the positive class
  OperatingPoint at_half_sensitivity;
  OperatingPoint youden;
  OperatingPoint chosen;
};

inline Calibration calibrate_scores(const std::vector<double>& u_id, const std::vector<double>& u_ood,
                                    ThresholdRule rule = ThresholdRule::at_sensitivity(0.5)) {
  if (u_id.empty() || u_ood.empty()) throw ArgumentError("calibration needs ID and OOD scores");
  const auto [lo, hi] = std::minmax_element(u_id.begin(), u_id.end());
  const auto [lo2, hi2] = std::minmax_element(u_ood.begin(), u_ood.end());
  if (std::max(*hi, *hi2) - std::min(*lo, *lo2) <= 1e-12) {
    throw CalibrationDegenerateError("uncertainty is constant (" + io::format_double(*lo) +
                                     ") across ID and OOD images");
  }
  Calibration c;
  c.roc = roc(u_ood, u_id);
  c.at_half_sensitivity = select_threshold(c.roc, ThresholdRule::at_sensitivity(0.5));
  c.youden = select_threshold(c.roc, ThresholdRule::youden());
  c.chosen = select_threshold(c.roc, rule);
  return c;
}

inline Calibration calibrate(const Model& model, const Tensor& validation, double cam_threshold = 0.5,
                             ThresholdRule rule = ThresholdRule::at_sensitivity(0.5)) {
  if (validation.ndim() != 4 || validation.dim(0) < kMinCalibrationImages) {
    throw ArgumentError("calibration needs at least " + std::to_string(kMinCalibrationImages) +
                        " validation images");
  }
  const auto s = score_ood(model, validation, cam_threshold);
  return calibrate_scores(s.u_id, s.u_occluded, rule);
}

/// ungradable iff u > u*.
inline std::vector<int> ungradable(const std::vector<double>& u, double u_star) {
  std::vector<int> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] > u_star;
  return out;
}

struct HistogramBin {
  double lo;
  double hi;
  std::size_t count_id;
  std::size_t count_ood;
};

inline constexpr std::size_t kHistogramBins = 20;

/// Fixed bins of width 0.05 over [0,1]; the last bin is closed.
inline std::vector<HistogramBin> uncertainty_histogram(const std::vector<double>& u_id,
                                                       const std::vector<double>& u_ood) {
  std::vector<HistogramBin> bins(kHistogramBins);
  for (std::size_t i = 0; i < kHistogramBins; ++i) {
    bins[i] = {static_cast<double>(i) / kHistogramBins, static_cast<double>(i + 1) / kHistogramBins, 0, 0};
  }
  auto index = [](double u) {
    if (!(u >= 0.0 && u <= 1.0)) throw DomainError("uncertainty outside [0,1]: " + io::format_double(u));
    return std::min(kHistogramBins - 1, static_cast<std::size_t>(u * kHistogramBins));
  };
  for (double u : u_id) ++bins[index(u)].count_id;
  for (double u : u_ood) ++bins[index(u)].count_ood;
  return bins;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw ArgumentError("median of empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2.0;
}

struct OodReport {
  OodScores scores;
  double u_star = 0.0;
  double gauc_occluded = 0.5;
  double gauc_flipped = 0.5;
  double kappa = 0.0;  // decisions on ID ∪ occluded against the synthetic labels
  double median_u_id = 0.0;
  double median_u_occluded = 0.0;
  std::vector<HistogramBin> histogram;  // ID vs occluded
};

inline OodReport evaluate_scores(OodScores scores, double u_star) {
  if (scores.u_id.empty()) throw ArgumentError("empty test set");
  OodReport r;
  r.u_star = u_star;
  r.gauc_occluded = roc(scores.u_occluded, scores.u_id).auc;
  r.gauc_flipped = roc(scores.u_flipped, scores.u_id).auc;
  std::vector<double> all = scores.u_id;
  all.insert(all.end(), scores.u_occluded.begin(), scores.u_occluded.end());
  std::vector<int> truth(scores.u_id.size(), 0);
  truth.resize(all.size(), 1);
  r.kappa = cohens_kappa(ungradable(all, u_star), truth);
  r.median_u_id = median(scores.u_id);
  r.median_u_occluded = median(scores.u_occluded);
  r.histogram = uncertainty_histogram(scores.u_id, scores.u_occluded);
  r.scores = std::move(scores);
  return r;
}

inline OodReport evaluate_ood(const Model& model, const Tensor& test, double u_star,
                              double cam_threshold = 0.5) {
  if (test.ndim() != 4 || test.dim(0) == 0) throw ArgumentError("empty test set");
  return evaluate_scores(score_ood(model, test, cam_threshold), u_star);
}

// CSV reports.

inline std::string histogram_csv(const std::vector<HistogramBin>& bins) {
  io::CsvWriter w({"bin_lo", "bin_hi", "count_id", "count_ood"});
  for (const auto& b : bins) w.cell(b.lo).cell(b.hi).cell(b.count_id).cell(b.count_ood).end_row();
  return w.str();
}

inline std::string roc_points_csv(const RocAnalysis& r) {
  io::CsvWriter w({"threshold", "tpr", "fpr"});
  for (const auto& p : r.points) w.cell(p.threshold).cell(p.sensitivity).cell(p.fpr()).end_row();
  return w.str();
}

struct GradabilityRow {
  std::string filename;
  double u;
  int ungradable;
};

inline std::string gradability_csv(const std::vector<GradabilityRow>& rows) {
  io::CsvWriter w({"filename", "u", "ungradable"});
  for (const auto& r : rows) w.cell(r.filename).cell(r.u).cell(r.ungradable).end_row();
  return w.str();
}

}  // namespace edl
