#pragma once

// Seeded training: class-balanced batches, on-the-fly augmentation, the
// annealed evidential loss and Adam or SGD with momentum.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "edl/convnet.hpp"
#include "edl/evidential.hpp"
#include "edl/io.hpp"
#include "edl/metrics.hpp"
#include "edl/predict.hpp"
#include "edl/random.hpp"
#include "edl/synthfundus.hpp"

namespace edl {

enum class OptimizerKind { adam, sgd_momentum };

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int anneal_step = 10;
  double alpha_max = kDefaultAlphaMax;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 disables
  AugmentConfig augment;

  void validate() const {
    if (epochs < 0) throw ConfigurationError("epochs must be >= 0");
    if (batch_size < 2 || batch_size % 2 != 0) {
      throw ConfigurationError("batch_size must be even and >= 2, got " + std::to_string(batch_size));
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigurationError("learning_rate must be > 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigurationError("momentum must lie in [0,1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
      throw ConfigurationError("invalid Adam hyper-parameters");
    }
    if (anneal_step < 1) throw ConfigurationError("anneal_step must be >= 1");
    if (!(alpha_max > 1.0)) throw ConfigurationError("alpha_max must exceed 1");
    if (checkpoint_every < 0) throw ConfigurationError("checkpoint_every must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Balanced batches
//
// Each batch holds batch_size/2 samples of each class. The majority class is
// visited once per epoch in shuffled order; the minority class (and the
// majority's last partial batch) is drawn from consecutive reshuffled passes.

using Batch = std::vector<std::size_t>;

inline std::vector<Batch> balanced_batches(std::span<const int> labels, std::size_t batch_size,
                                           std::uint64_t seed) {
  if (batch_size < 2 || batch_size % 2 != 0) throw ArgumentError("batch_size must be even");
  std::vector<std::size_t> cls[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ArgumentError("labels must be 0 or 1");
    cls[labels[i]].push_back(i);
  }
  if (cls[0].empty() || cls[1].empty()) throw ArgumentError("balanced batches need both classes");

  const std::size_t half = batch_size / 2;
  const std::size_t majority = std::max(cls[0].size(), cls[1].size());
  const std::size_t n_batches = (majority + half - 1) / half;

  std::mt19937_64 rng(mix_seed(seed));
  auto stream = [&](const std::vector<std::size_t>& members) {
    std::vector<std::size_t> out;
    out.reserve(n_batches * half + members.size());
    while (out.size() < n_batches * half) {
      std::vector<std::size_t> pass = members;
      std::shuffle(pass.begin(), pass.end(), rng);
      out.insert(out.end(), pass.begin(), pass.end());
    }
    return out;
  };
  const auto s0 = stream(cls[0]);
  const auto s1 = stream(cls[1]);

  std::vector<Batch> batches(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    Batch& batch = batches[b];
    batch.insert(batch.end(), s0.begin() + b * half, s0.begin() + (b + 1) * half);
    batch.insert(batch.end(), s1.begin() + b * half, s1.begin() + (b + 1) * half);
    std::shuffle(batch.begin(), batch.end(), rng);
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Optimizers

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const Model& model) : cfg_(cfg) {
    for (const auto& p : model.parameters()) {
      m_.emplace_back(p.value.shape(), 0.0);
      if (cfg.optimizer == OptimizerKind::adam) v_.emplace_back(p.value.shape(), 0.0);
    }
  }

  /// One update; grads[i] pairs with model.parameters()[i].
  void step(Model& model, const std::vector<const Tensor*>& grads, double lr) {
    auto& params = model.parameters();
    if (grads.size() != params.size()) throw ArgumentError("gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* w = params[i].value.raw();
      const auto g = grads[i]->data();
      double* m = m_[i].raw();
      if (cfg_.optimizer == OptimizerKind::adam) {
        double* v = v_[i].raw();
        for (std::size_t j = 0; j < g.size(); ++j) {
          m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
          v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
          w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.epsilon);
        }
      } else {
        for (std::size_t j = 0; j < g.size(); ++j) {
          m[j] = cfg_.momentum * m[j] + g[j];
          w[j] -= lr * m[j];
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor> m_, v_;
  long long t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop

struct LabeledSet {
  Tensor images;  // N×C×H×W
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct TrainLogRow {
  int epoch = 0;
  double a_t = 0.0;
  double loss_evid = 0.0;
  double loss_unif = 0.0;
  double loss_total = 0.0;
  double train_accuracy = 0.0;
  double val_auc = std::nan("");
  double mean_u = std::nan("");  // on the validation set
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  std::string csv() const {
    io::CsvWriter w({"epoch", "a_t", "loss_evid", "loss_unif", "loss_total", "train_accuracy", "val_auc",
                     "mean_u"});
    for (const auto& r : rows) {
      w.cell(r.epoch).cell(r.a_t).cell(r.loss_evid).cell(r.loss_unif).cell(r.loss_total);
      w.cell(r.train_accuracy).cell(r.val_auc).cell(r.mean_u).end_row();
    }
    return w.str();
  }
};

struct TrainHooks {
  std::function<void(int epoch, const Model&)> checkpoint;
  std::function<void(const TrainLogRow&)> epoch_end;
};

struct ValidationSummary {
  double auc = std::nan("");
  double mean_u = std::nan("");
};

inline ValidationSummary validation_summary(const Model& model, const LabeledSet& val) {
  ValidationSummary s;
  if (val.size() == 0) return s;
  const auto preds = predict(model, val.images);
  std::vector<double> pos, neg;
  double u = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    (val.labels[i] ? pos : neg).push_back(preds[i].p_referable);
    u += preds[i].uncertainty;
  }
  s.mean_u = u / static_cast<double>(preds.size());
  if (!pos.empty() && !neg.empty()) s.auc = roc(pos, neg).auc;
  return s;
}

namespace detail {
inline Tensor gather_augmented(const LabeledSet& data, const Batch& idx, const TrainConfig& cfg, int epoch,
                               std::size_t batch_no) {
  const Shape& s = data.images.shape();
  const std::size_t per = s[1] * s[2] * s[3];
  Tensor out({idx.size(), s[1], s[2], s[3]});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto begin = data.images.data().begin() + idx[k] * per;
    Tensor img({s[1], s[2], s[3]}, std::vector<double>(begin, begin + per));
    const std::uint64_t seed = derive_seed({cfg.seed, 0xA06ULL, static_cast<std::uint64_t>(epoch), batch_no, k});
    img = augment(img, seed, cfg.augment);
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + k * per);
  }
  return out;
}
}  // namespace detail

/// Trains `model` in place. Epoch t uses a_t = min(1, t/s).
inline TrainLog train(Model& model, const LabeledSet& data, const LabeledSet& val, const TrainConfig& cfg,
                      const TrainHooks& hooks = {}) {
  cfg.validate();
  if (data.images.ndim() != 4 || data.images.dim(0) != data.size()) {
    throw DimensionError("training images " + shape_string(data.images.shape()) + " vs " +
                         std::to_string(data.size()) + " labels");
  }
  TrainLog log;
  Optimizer opt(cfg, model);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double a_t = AnnealSchedule{cfg.anneal_step, epoch}.coefficient();
    const auto batches =
        balanced_batches(data.labels, cfg.batch_size, derive_seed({cfg.seed, 0xBA7CULL, static_cast<std::uint64_t>(epoch)}));
    TrainLogRow row;
    row.epoch = epoch;
    row.a_t = a_t;
    std::size_t correct = 0, seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Tensor images = detail::gather_augmented(data, batches[b], cfg, epoch, b);
      std::vector<int> labels(batches[b].size());
      for (std::size_t k = 0; k < labels.size(); ++k) labels[k] = data.labels[batches[b][k]];

      Tape tape;
      const auto params = model.bind(tape, true);
      const auto pass = model.forward(tape, params, images);
      const auto loss = ops::evidential_loss(pass.logits, labels, a_t, cfg.alpha_max);
      const double total = loss.total.value()[0];
      if (!std::isfinite(total)) {
        throw TrainingDivergedError(epoch, static_cast<int>(b),
                                    "loss is " + io::format_double(total));
      }
      tape.backward(loss.total);
      std::vector<const Tensor*> grads;
      for (const auto& p : params) {
        const Tensor& g = p.grad();
        for (double v : g.data()) {
          if (!std::isfinite(v)) {
            throw TrainingDivergedError(epoch, static_cast<int>(b), "non-finite gradient");
          }
        }
        grads.push_back(&g);
      }
      opt.step(model, grads, cfg.learning_rate);

      row.loss_evid += loss.evid.value()[0];
      row.loss_unif += loss.unif.value()[0];
      row.loss_total += total;
      const Tensor& logits = pass.logits.value();
      const std::size_t k = logits.dim(1);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto first = logits.data().begin() + i * k;
        correct += static_cast<int>(std::max_element(first, first + k) - first) == labels[i];
      }
      seen += labels.size();
    }
    const double nb = static_cast<double>(batches.size());
    row.loss_evid /= nb;
    row.loss_unif /= nb;
    row.loss_total /= nb;
    row.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    const auto v = validation_summary(model, val);
    row.val_auc = v.auc;
    row.mean_u = v.mean_u;
    log.rows.push_back(row);
    if (hooks.epoch_end) hooks.epoch_end(row);
    if (hooks.checkpoint && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      hooks.checkpoint(epoch, model);
    }
  }
  return log;
}

}  // namespace edl
