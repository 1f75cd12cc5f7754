#pragma once

// Teacher (coupled local/global triplet) loss, distillation hybrid loss and
// the contrastive / triplet-margin baselines.
//
// All losses use the non-squared Euclidean distance except the contrastive
// loss, which uses the classic squared form. Every function optionally fills
// a gradient batch with the same layout as its input. At a zero distance and
// at hinge kinks the zero subgradient is used.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gemini/common.hpp"
#include "gemini/tensor.hpp"

namespace gemini::losses {

enum class Reduction { Sum, Mean };

struct GeminiLossParams {
  double beta = 0.5;
  double margin = 1.0;
  Reduction reduction = Reduction::Sum;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0,1], got " + std::to_string(beta));
    if (!(margin > 0.0)) throw ConfigError("teacher margin must be > 0, got " + std::to_string(margin));
  }
};

struct HybridLossParams {
  double gamma = 0.5;
  Reduction reduction = Reduction::Sum;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0,1), got " + std::to_string(gamma));
  }
};

/// One teacher triplet: intermediate (stream) outputs of anchor and positive,
/// final (global) embeddings of all three samples.
template <typename T>
struct GeminiSample {
  std::vector<T> f_anchor, f_positive;
  std::vector<T> g_anchor, g_positive, g_negative;
};

template <typename T>
struct HybridSample {
  std::vector<T> z;       // student embedding
  std::vector<T> z_hat;   // teacher target
  int label = 0;
  std::vector<T> logits;  // student classifier output
};

template <typename T>
struct PairSample {
  std::vector<T> e1, e2;
  bool same = false;
};

template <typename T>
struct TripletSample {
  std::vector<T> anchor, positive, negative;
};

/// Loss value split into its two additive components (first + second = total).
struct LossTerms {
  double total = 0.0;
  double first = 0.0;
  double second = 0.0;
};

namespace detail {

inline double reduce_scale(Reduction r, std::size_t n) {
  return r == Reduction::Mean && n > 0 ? 1.0 / static_cast<double>(n) : 1.0;
}

template <typename T>
void require_same_size(const std::vector<T>& a, const std::vector<T>& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": size " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
}

// d(a,b) and, when requested, adds scale * d/da into ga and scale * d/db into gb.
template <typename T>
double distance_with_grad(const std::vector<T>& a, const std::vector<T>& b, double scale, std::vector<T>* ga,
                          std::vector<T>* gb) {
  const double d = static_cast<double>(euclidean_distance(a, b));
  if (d > 0.0 && scale != 0.0 && (ga != nullptr || gb != nullptr)) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double g = scale * (static_cast<double>(a[i]) - static_cast<double>(b[i])) / d;
      if (ga != nullptr) (*ga)[i] += static_cast<T>(g);
      if (gb != nullptr) (*gb)[i] -= static_cast<T>(g);
    }
  }
  return d;
}

template <typename T>
std::vector<T> zeros_like(const std::vector<T>& v) {
  return std::vector<T>(v.size(), T{});
}

}  // namespace detail

/// Sum over triplets of beta*d(f_a, f_p) + (1-beta)*[d(g_a, g_p) + m - d(g_a, g_n)]+.
/// Gradients flow through the adaptive margin d(g_a, g_p) as well.
template <typename T>
LossTerms gemini_loss_terms(std::span<const GeminiSample<T>> batch, const GeminiLossParams& params,
                            std::vector<GeminiSample<T>>* grads = nullptr) {
  params.validate();
  if (batch.empty()) throw InvalidInputError("gemini_loss: empty batch");
  const double scale = detail::reduce_scale(params.reduction, batch.size());
  if (grads != nullptr) grads->resize(batch.size());
  LossTerms out;
  for (std::size_t t = 0; t < batch.size(); ++t) {
    const auto& s = batch[t];
    detail::require_same_size(s.f_anchor, s.f_positive, "gemini_loss intermediate pair");
    detail::require_same_size(s.g_anchor, s.g_positive, "gemini_loss embedding triple");
    detail::require_same_size(s.g_anchor, s.g_negative, "gemini_loss embedding triple");
    GeminiSample<T>* g = nullptr;
    if (grads != nullptr) {
      g = &(*grads)[t];
      g->f_anchor = detail::zeros_like(s.f_anchor);
      g->f_positive = detail::zeros_like(s.f_positive);
      g->g_anchor = detail::zeros_like(s.g_anchor);
      g->g_positive = detail::zeros_like(s.g_positive);
      g->g_negative = detail::zeros_like(s.g_negative);
    }
    const double local = detail::distance_with_grad(s.f_anchor, s.f_positive, scale * params.beta,
                                                    g ? &g->f_anchor : nullptr, g ? &g->f_positive : nullptr);
    const double d_ap = static_cast<double>(euclidean_distance(s.g_anchor, s.g_positive));
    const double d_an = static_cast<double>(euclidean_distance(s.g_anchor, s.g_negative));
    const double hinge = std::max(0.0, d_ap + params.margin - d_an);
    if (g != nullptr && hinge > 0.0) {
      const double w = scale * (1.0 - params.beta);
      detail::distance_with_grad(s.g_anchor, s.g_positive, w, &g->g_anchor, &g->g_positive);
      detail::distance_with_grad(s.g_anchor, s.g_negative, -w, &g->g_anchor, &g->g_negative);
    }
    out.first += scale * params.beta * local;
    out.second += scale * (1.0 - params.beta) * hinge;
  }
  out.total = out.first + out.second;
  return out;
}

template <typename T>
double gemini_loss(std::span<const GeminiSample<T>> batch, const GeminiLossParams& params,
                   std::vector<GeminiSample<T>>* grads = nullptr) {
  return gemini_loss_terms(batch, params, grads).total;
}

/// Numerically stable -log softmax(logits)[label]; fills d/dlogits when asked.
template <typename T>
double cross_entropy(const std::vector<T>& logits, int label, double scale = 1.0, std::vector<T>* grad = nullptr) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw InvalidInputError("class index " + std::to_string(label) + " outside [0, " +
                            std::to_string(logits.size()) + ")");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double denom = 0.0;
  for (T v : logits) denom += std::exp(static_cast<double>(v) - mx);
  const double log_z = mx + std::log(denom);
  if (grad != nullptr) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double p = std::exp(static_cast<double>(logits[i]) - log_z);
      (*grad)[i] += static_cast<T>(scale * (p - (static_cast<int>(i) == label ? 1.0 : 0.0)));
    }
  }
  return log_z - static_cast<double>(logits[static_cast<std::size_t>(label)]);
}

/// Sum over the batch of gamma*||z - z_hat|| + CE(y, softmax(logits)).
/// first = distance term, second = cross-entropy term.
template <typename T>
LossTerms hybrid_loss_terms(std::span<const HybridSample<T>> batch, const HybridLossParams& params,
                            std::vector<HybridSample<T>>* grads = nullptr) {
  params.validate();
  if (batch.empty()) throw InvalidInputError("hybrid_loss: empty batch");
  const double scale = detail::reduce_scale(params.reduction, batch.size());
  if (grads != nullptr) grads->resize(batch.size());
  LossTerms out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    detail::require_same_size(s.z, s.z_hat, "hybrid_loss embedding/target");
    HybridSample<T>* g = nullptr;
    if (grads != nullptr) {
      g = &(*grads)[i];
      g->z = detail::zeros_like(s.z);
      g->z_hat = detail::zeros_like(s.z_hat);
      g->logits = detail::zeros_like(s.logits);
      g->label = s.label;
    }
    const double d = detail::distance_with_grad(s.z, s.z_hat, scale * params.gamma, g ? &g->z : nullptr,
                                                g ? &g->z_hat : nullptr);
    const double ce = cross_entropy(s.logits, s.label, scale, g ? &g->logits : nullptr);
    out.first += scale * params.gamma * d;
    out.second += scale * ce;
  }
  out.total = out.first + out.second;
  return out;
}

template <typename T>
double hybrid_loss(std::span<const HybridSample<T>> batch, const HybridLossParams& params,
                   std::vector<HybridSample<T>>* grads = nullptr) {
  return hybrid_loss_terms(batch, params, grads).total;
}

/// Sum of d^2 over same pairs and [margin - d]+^2 over different pairs.
template <typename T>
double contrastive_loss(std::span<const PairSample<T>> pairs, double margin, std::vector<PairSample<T>>* grads = nullptr,
                        Reduction reduction = Reduction::Sum) {
  if (!(margin > 0.0)) throw ConfigError("contrastive margin must be > 0");
  if (pairs.empty()) throw InvalidInputError("contrastive_loss: empty batch");
  const double scale = detail::reduce_scale(reduction, pairs.size());
  if (grads != nullptr) grads->resize(pairs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    detail::require_same_size(p.e1, p.e2, "contrastive_loss pair");
    PairSample<T>* g = nullptr;
    if (grads != nullptr) {
      g = &(*grads)[i];
      g->e1 = detail::zeros_like(p.e1);
      g->e2 = detail::zeros_like(p.e2);
      g->same = p.same;
    }
    const double d = static_cast<double>(euclidean_distance(p.e1, p.e2));
    if (p.same) {
      total += scale * d * d;
      if (g != nullptr) {
        // d(d^2)/da = 2(a - b)
        for (std::size_t j = 0; j < p.e1.size(); ++j) {
          const double gj = 2.0 * scale * (static_cast<double>(p.e1[j]) - static_cast<double>(p.e2[j]));
          g->e1[j] += static_cast<T>(gj);
          g->e2[j] -= static_cast<T>(gj);
        }
      }
    } else {
      const double h = std::max(0.0, margin - d);
      total += scale * h * h;
      if (g != nullptr && h > 0.0) detail::distance_with_grad(p.e1, p.e2, -2.0 * scale * h, &g->e1, &g->e2);
    }
  }
  return total;
}

/// Sum of [d(a,p) - d(a,n) + margin]+.
template <typename T>
double triplet_margin_loss(std::span<const TripletSample<T>> triplets, double margin,
                           std::vector<TripletSample<T>>* grads = nullptr, Reduction reduction = Reduction::Sum) {
  if (!(margin > 0.0)) throw ConfigError("triplet margin must be > 0");
  if (triplets.empty()) throw InvalidInputError("triplet_margin_loss: empty batch");
  const double scale = detail::reduce_scale(reduction, triplets.size());
  if (grads != nullptr) grads->resize(triplets.size());
  double total = 0.0;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    detail::require_same_size(t.anchor, t.positive, "triplet_margin_loss");
    detail::require_same_size(t.anchor, t.negative, "triplet_margin_loss");
    TripletSample<T>* g = nullptr;
    if (grads != nullptr) {
      g = &(*grads)[i];
      g->anchor = detail::zeros_like(t.anchor);
      g->positive = detail::zeros_like(t.positive);
      g->negative = detail::zeros_like(t.negative);
    }
    const double d_ap = static_cast<double>(euclidean_distance(t.anchor, t.positive));
    const double d_an = static_cast<double>(euclidean_distance(t.anchor, t.negative));
    const double h = std::max(0.0, d_ap - d_an + margin);
    total += scale * h;
    if (g != nullptr && h > 0.0) {
      detail::distance_with_grad(t.anchor, t.positive, scale, &g->anchor, &g->positive);
      detail::distance_with_grad(t.anchor, t.negative, -scale, &g->anchor, &g->negative);
    }
  }
  return total;
}

}  // namespace gemini::losses
