#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "edl/convnet.hpp"
#include "edl/evidential.hpp"

namespace edl {

struct Prediction {
  double p_referable = 0.5;  // p̂ of class 1
  double uncertainty = 1.0;
  std::size_t predicted_class = 0;
};

inline Prediction prediction_from_logits(std::span<const double> logits) {
  const DirichletBelief b = belief(evidence_from_logits(logits));
  Prediction p;
  p.p_referable = b.p_hat.size() > 1 ? b.p_hat[1] : 0.0;
  p.uncertainty = b.uncertainty;
  for (std::size_t k = 1; k < b.p_hat.size(); ++k) {
    if (b.p_hat[k] > b.p_hat[p.predicted_class]) p.predicted_class = k;
  }
  return p;
}

/// Evidential outputs for an N×C×H×W batch.
inline std::vector<Prediction> predict(const Model& model, const Tensor& images, std::size_t chunk = 64) {
  const Tensor logits = model.predict_logits(images, chunk);
  const std::size_t k = logits.dim(1);
  std::vector<Prediction> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = prediction_from_logits(logits.data().subspan(i * k, k));
  }
  return out;
}

}  // namespace edl
