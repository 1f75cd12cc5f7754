#pragma once

// Two-view fusion of frozen surface/section students: embedding
// concatenation, or stacking of the last spatial feature maps followed by
// max-pooling over views and channels. Only a linear softmax head is trained.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gemini/common.hpp"
#include "gemini/datapipe.hpp"
#include "gemini/evaluation.hpp"
#include "gemini/losses.hpp"
#include "gemini/models.hpp"
#include "gemini/nn.hpp"
#include "gemini/training.hpp"

namespace gemini::fusion {

enum class Strategy { Concat, StackMaxPool };

inline std::string to_string(Strategy s) { return s == Strategy::Concat ? "concat" : "stack_maxpool"; }

inline Strategy parse_strategy(const std::string& s) {
  if (s == "concat") return Strategy::Concat;
  if (s == "stack_maxpool") return Strategy::StackMaxPool;
  throw ConfigError("unknown fusion strategy '" + s + "' (valid: concat, stack_maxpool)");
}

struct FusionConfig {
  Strategy strategy = Strategy::Concat;
  int epochs = 10;
  double learning_rate = 1e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || epochs > training::kMaxEpochs) throw ConfigError("fusion epochs must lie in [1, 60]");
    if (!(learning_rate > 0.0)) throw ConfigError("fusion learning rate must be > 0");
    if (batch_size < 1) throw ConfigError("fusion batch size must be >= 1");
  }
};

/// Indices of a surface patch and a same-class section patch.
struct PairedSample {
  std::size_t surface = 0;
  std::size_t section = 0;
  int label = 0;
};

/// Surface embedding followed by section embedding.
template <typename T>
std::vector<T> fuse_concat(std::span<const T> surface, std::span<const T> section) {
  std::vector<T> out(surface.begin(), surface.end());
  out.insert(out.end(), section.begin(), section.end());
  return out;
}

/// Stack the two (C, H, W) maps on a view axis, max over views, then max
/// over channels: (H, W, 1), returned flattened row-major.
template <typename T>
std::vector<T> fuse_stack_maxpool(const Tensor<T>& surface, const Tensor<T>& section) {
  if (!(surface.shape() == section.shape())) {
    throw ShapeError("view feature maps differ: " + to_string(surface.shape()) + " vs " + to_string(section.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(surface.height()) * surface.width();
  std::vector<T> out(plane, -std::numeric_limits<T>::infinity());
  for (int c = 0; c < surface.channels(); ++c) {
    const T* a = surface.channel(c);
    const T* b = section.channel(c);
    for (std::size_t i = 0; i < plane; ++i) out[i] = std::max(out[i], std::max(a[i], b[i]));
  }
  return out;
}

/// For each surface patch, a uniformly drawn section patch of the same class.
inline std::vector<PairedSample> make_paired_samples(std::span<const data::PatchRecord> surface,
                                                     std::span<const data::PatchRecord> section, std::uint64_t seed,
                                                     std::uint64_t stream_id) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < section.size(); ++i) by_class[section[i].label.index].push_back(i);
  Rng rng = make_rng(seed, stream::kFusion, stream_id);
  std::vector<PairedSample> out;
  out.reserve(surface.size());
  for (std::size_t i = 0; i < surface.size(); ++i) {
    const auto it = by_class.find(surface[i].label.index);
    if (it == by_class.end()) throw SamplingError("no section patch for class " + surface[i].label.name);
    out.push_back({i, it->second[uniform_index(rng, it->second.size())], surface[i].label.index});
  }
  return out;
}

struct ViewData {
  const models::StudentModel<float>* model = nullptr;
  std::span<const data::PatchRecord> train;
  std::span<const data::PatchRecord> test;
};

struct FusionResult {
  models::ModelState head;
  eval::MetricsRow test_metrics;
  int epochs_run = 0;
  int fused_dim = 0;
  std::vector<models::EpochLoss> loss_curve;
};

namespace detail {

inline std::vector<std::vector<float>> view_features(const models::StudentModel<float>& m,
                                                     std::span<const data::PatchRecord> patches, Strategy s,
                                                     std::vector<Tensor<float>>* maps) {
  std::vector<std::vector<float>> out;
  for (const auto& p : patches) {
    if (s == Strategy::Concat) {
      out.push_back(m.forward(p.values).embedding);
    } else {
      maps->push_back(m.features(p.values));
    }
  }
  return out;
}

struct FeatureTable {
  std::vector<std::vector<float>> sur_vec, sec_vec;
  std::vector<Tensor<float>> sur_map, sec_map;
};

inline std::vector<float> fused(const FeatureTable& f, Strategy s, const PairedSample& p) {
  if (s == Strategy::Concat) {
    return fuse_concat<float>(f.sur_vec[p.surface], f.sec_vec[p.section]);
  }
  return fuse_stack_maxpool(f.sur_map[p.surface], f.sec_map[p.section]);
}

inline FeatureTable features(const ViewData& sur, const ViewData& sec, bool train, Strategy s) {
  FeatureTable t;
  t.sur_vec = view_features(*sur.model, train ? sur.train : sur.test, s, &t.sur_map);
  t.sec_vec = view_features(*sec.model, train ? sec.train : sec.test, s, &t.sec_map);
  return t;
}

inline int argmax(const std::vector<float>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

/// Trains a linear softmax head on fused features of frozen per-view
/// students for cfg.epochs at cfg.learning_rate, then scores it on seeded
/// same-class test pairs.
inline FusionResult train_fusion(const ViewData& surface, const ViewData& section, const FusionConfig& cfg) {
  cfg.validate();
  if (surface.model == nullptr || section.model == nullptr) throw ConfigError("fusion needs both per-view models");
  const int n_classes = surface.model->config().n_classes;
  if (section.model->config().n_classes != n_classes) throw ConfigError("per-view models disagree on class count");
  if (surface.train.empty() || surface.test.empty()) throw ConfigError("fusion needs train and test patches");

  const detail::FeatureTable train_f = detail::features(surface, section, true, cfg.strategy);
  const detail::FeatureTable test_f = detail::features(surface, section, false, cfg.strategy);
  const auto test_pairs = make_paired_samples(surface.test, section.test, cfg.seed, 0xFFFF'FFFF);

  int fused_dim = 0;
  if (cfg.strategy == Strategy::Concat) {
    fused_dim = surface.model->config().embedding_dim + section.model->config().embedding_dim;
  } else {
    const Shape3 a = surface.model->feature_shape();
    if (!(a == section.model->feature_shape())) throw ShapeError("stack_maxpool needs equal feature-map shapes");
    fused_dim = a.height * a.width;
  }

  nn::Linear<float> head("fusion.head", fused_dim, n_classes);
  {
    Rng rng = make_rng(cfg.seed, stream::kInit, stream::kFusion);
    head.initialize(rng);
  }
  auto params = head.params();
  nn::Adam<float> adam(cfg.learning_rate);
  FusionResult out;
  out.fused_dim = fused_dim;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto pairs = make_paired_samples(surface.train, section.train, cfg.seed, static_cast<std::uint64_t>(epoch));
    Rng rng = make_rng(cfg.seed, stream::kFusion, 0x5348'5546, static_cast<std::uint64_t>(epoch));
    std::shuffle(pairs.begin(), pairs.end(), rng);
    models::EpochLoss loss{epoch + 1, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < pairs.size(); start += bs) {
      nn::zero_grad(params);
      const std::size_t end = std::min(pairs.size(), start + bs);
      for (std::size_t i = start; i < end; ++i) {
        nn::Cache<float> cache;
        const auto logits = head.forward(Tensor<float>::from_vector(detail::fused(train_f, cfg.strategy, pairs[i])), &cache).storage();
        std::vector<float> g(logits.size(), 0.0f);
        loss.total += losses::cross_entropy(logits, pairs[i].label, 1.0, &g);
        head.backward(Tensor<float>::from_vector(g), cache, false);
      }
      adam.step(params);
    }
    training::detail::check_finite(loss.total, epoch, 0, "fusion");
    loss.second = loss.total;
    out.loss_curve.push_back(loss);
    ++out.epochs_run;
  }

  std::vector<int> truth, pred;
  for (const auto& p : test_pairs) {
    truth.push_back(p.label);
    pred.push_back(detail::argmax(head.forward(Tensor<float>::from_vector(detail::fused(test_f, cfg.strategy, p)), nullptr).storage()));
  }
  out.test_metrics = eval::compute_metrics(truth, pred, n_classes);

  models::TrainingMeta meta;
  meta.seed = cfg.seed;
  meta.epoch = out.epochs_run;
  meta.loss_curve = out.loss_curve;
  meta.extra = {{"kind", "fusion"},
                {"strategy", to_string(cfg.strategy)},
                {"learning_rate", cfg.learning_rate},
                {"batch_size", cfg.batch_size},
                {"fused_dim", fused_dim}};
  out.head = {models::FusionHeadConfig{n_classes, fused_dim, to_string(cfg.strategy)}, models::export_params(params),
              std::move(meta)};
  return out;
}

/// One row per fused model: method, accuracy, precision, recall, f1, strategy.
inline void write_fusion_csv(std::ostream& os, const std::string& method, const eval::MetricsRow& m, Strategy s,
                             bool header = true) {
  if (header) os << "method,accuracy,precision,recall,f1,strategy\n";
  os << method << ',' << eval::format_fixed(m.accuracy) << ',' << eval::format_fixed(m.precision) << ','
     << eval::format_fixed(m.recall) << ',' << eval::format_fixed(m.f1) << ',' << to_string(s) << '\n';
}

}  // namespace gemini::fusion
