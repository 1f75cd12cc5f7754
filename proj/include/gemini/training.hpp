#pragma once

// Teacher training, offline distillation into the student, and the Siamese /
// Triplet baselines. Every run is a deterministic function of (data, config,
// seed): batch contents come from streams keyed by (seed, epoch, batch).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gemini/common.hpp"
#include "gemini/datapipe.hpp"
#include "gemini/losses.hpp"
#include "gemini/models.hpp"
#include "gemini/nn.hpp"
#include "gemini/sampling.hpp"

namespace gemini::training {

using models::EpochLoss;
using models::ModelState;
using models::StudentModel;
using models::TeacherModel;

inline constexpr int kMaxEpochs = 60;

struct RunConfig {
  int max_epochs = 20;
  double learning_rate = 1e-3;
  int batch_size = 32;
  /// Samples (triplets, pairs or patches) per epoch; 0 = one per training patch.
  int samples_per_epoch = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_epochs < 1 || max_epochs > kMaxEpochs) {
      throw ConfigError("epochs must lie in [1, " + std::to_string(kMaxEpochs) + "], got " + std::to_string(max_epochs));
    }
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (samples_per_epoch < 0) throw ConfigError("samples_per_epoch must be >= 0");
  }
};

inline models::json to_json(const RunConfig& r) {
  return {{"max_epochs", r.max_epochs},
          {"learning_rate", r.learning_rate},
          {"batch_size", r.batch_size},
          {"samples_per_epoch", r.samples_per_epoch},
          {"seed", r.seed},
          {"optimizer", "adam"}};
}

/// Everything needed to continue a run after the last completed epoch.
struct Progress {
  int epochs_done = 0;
  std::vector<std::vector<float>> params;
  nn::Adam<float>::State optimizer;
  std::vector<EpochLoss> loss_curve;
  std::vector<std::vector<float>> best_params;
  int best_epoch = 0;
};

struct TrainHooks {
  std::function<void(const Progress&)> on_epoch_end;
  std::optional<Progress> resume;
};

struct TrainRun {
  models::json config;
  std::uint64_t seed = 0;
  int max_epochs = 0;
  std::string optimizer = "adam";
  double learning_rate = 0.0;
  std::vector<EpochLoss> loss_curve;
  int best_epoch = 0;
  ModelState state;
};

/// patch_id -> teacher embedding.
using DistillationTargets = std::map<std::string, std::vector<float>>;

namespace detail {

inline std::size_t samples_per_epoch(const RunConfig& run, std::size_t n_train) {
  return run.samples_per_epoch > 0 ? static_cast<std::size_t>(run.samples_per_epoch) : n_train;
}

inline std::uint64_t batch_key(int epoch, std::size_t batch) {
  return (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(batch);
}

inline void check_finite(double v, int epoch, std::size_t batch, const char* what) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("non-finite ") + what + " loss (" + std::to_string(v) + ") at epoch " +
                       std::to_string(epoch + 1) + ", batch " + std::to_string(batch));
  }
}

inline void check_params_finite(const std::vector<nn::Param<float>*>& params, int epoch) {
  for (const auto* p : params) {
    for (float v : p->value) {
      if (!std::isfinite(v)) {
        throw NumericError("parameter " + p->name + " became non-finite during epoch " + std::to_string(epoch + 1));
      }
    }
  }
}

// Shared epoch loop. `run_epoch(epoch)` performs the optimizer steps and
// returns the epoch loss; the best epoch (lowest loss) is kept.
template <typename RunEpoch>
void epoch_loop(const RunConfig& run, const std::vector<nn::Param<float>*>& params, nn::Adam<float>& adam,
                TrainHooks& hooks, TrainRun& out, RunEpoch&& run_epoch) {
  Progress prog;
  if (hooks.resume) {
    prog = *hooks.resume;
    if (prog.epochs_done > run.max_epochs) throw ConfigError("resume state is past the epoch budget");
    nn::restore_values(params, prog.params);
    adam.set_state(prog.optimizer);
  } else {
    prog.best_params = nn::snapshot_values(params);
  }
  for (int epoch = prog.epochs_done; epoch < run.max_epochs; ++epoch) {
    const EpochLoss loss = run_epoch(epoch);
    check_params_finite(params, epoch);
    prog.loss_curve.push_back(loss);
    const bool best = prog.best_epoch == 0 || loss.total < prog.loss_curve[static_cast<std::size_t>(prog.best_epoch - 1)].total;
    if (best) {
      prog.best_epoch = epoch + 1;
      prog.best_params = nn::snapshot_values(params);
    }
    prog.epochs_done = epoch + 1;
    if (hooks.on_epoch_end) {
      prog.params = nn::snapshot_values(params);
      prog.optimizer = adam.state();
      hooks.on_epoch_end(prog);
    }
  }
  nn::restore_values(params, prog.best_params);
  out.loss_curve = prog.loss_curve;
  out.best_epoch = prog.best_epoch;
  out.max_epochs = run.max_epochs;
  out.seed = run.seed;
  out.learning_rate = run.learning_rate;
}

inline models::TrainingMeta make_meta(const TrainRun& r, const std::string& kind) {
  models::TrainingMeta m;
  m.seed = r.seed;
  m.epoch = r.best_epoch;
  m.loss_curve = r.loss_curve;
  m.extra = {{"kind", kind}, {"epochs_run", r.loss_curve.size()}, {"run", r.config}};
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Teacher

/// Minimizes the coupled local/global loss over seeded triplet batches. The
/// negative sample goes through its own class's stream.
inline TrainRun train_teacher(const data::DatasetSplit& split, const models::TeacherConfig& cfg,
                              const losses::GeminiLossParams& loss_params, const RunConfig& run,
                              TrainHooks hooks = {}) {
  run.validate();
  loss_params.validate();
  cfg.validate();
  const sampling::ClassIndex index(split.train);
  if (index.classes().size() < 2) throw ConfigError("teacher training needs at least 2 classes in the train split");
  for (int c : index.classes()) {
    if (c >= cfg.n_classes) throw ConfigError("train split has class index beyond the teacher's stream count");
  }
  TeacherModel<float> model(cfg, run.seed);
  auto params = model.params();
  nn::Adam<float> adam(run.learning_rate);
  TrainRun out;
  out.config = {{"teacher", cfg}, {"beta", loss_params.beta}, {"margin", loss_params.margin}, {"run", to_json(run)}};
  const std::size_t per_epoch = detail::samples_per_epoch(run, split.train.size());
  const auto bs = static_cast<std::size_t>(run.batch_size);

  detail::epoch_loop(run, params, adam, hooks, out, [&](int epoch) {
    EpochLoss acc{epoch + 1, 0.0, 0.0, 0.0};
    const std::size_t n_batches = (per_epoch + bs - 1) / bs;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t n = std::min(bs, per_epoch - b * bs);
      const auto triplets = sampling::make_triplets(split.train, n, run.seed, detail::batch_key(epoch, b));
      struct Caches {
        nn::Cache<float> la, lp, ln, ga, gp, gn;
      };
      std::vector<Caches> caches(triplets.size());
      std::vector<losses::GeminiSample<float>> batch(triplets.size());
      for (std::size_t t = 0; t < triplets.size(); ++t) {
        const auto& a = split.train[triplets[t].anchor];
        const auto& p = split.train[triplets[t].positive];
        const auto& ng = split.train[triplets[t].negative];
        auto& c = caches[t];
        const Tensor<float> fa = model.forward_local(a.values, a.label.index, &c.la);
        const Tensor<float> fp = model.forward_local(p.values, p.label.index, &c.lp);
        const Tensor<float> fn = model.forward_local(ng.values, ng.label.index, &c.ln);
        batch[t].g_anchor = model.forward_global(fa, &c.ga).storage();
        batch[t].g_positive = model.forward_global(fp, &c.gp).storage();
        batch[t].g_negative = model.forward_global(fn, &c.gn).storage();
        batch[t].f_anchor = fa.storage();
        batch[t].f_positive = fp.storage();
      }
      std::vector<losses::GeminiSample<float>> grads;
      const losses::LossTerms terms =
          losses::gemini_loss_terms(std::span<const losses::GeminiSample<float>>(batch), loss_params, &grads);
      detail::check_finite(terms.total, epoch, b, "teacher");
      nn::zero_grad(params);
      for (std::size_t t = 0; t < triplets.size(); ++t) {
        const auto& a = split.train[triplets[t].anchor];
        const auto& p = split.train[triplets[t].positive];
        const auto& ng = split.train[triplets[t].negative];
        const auto& c = caches[t];
        const auto& g = grads[t];
        Tensor<float> dfa = model.backward_global(Tensor<float>::from_vector(g.g_anchor), c.ga);
        Tensor<float> dfp = model.backward_global(Tensor<float>::from_vector(g.g_positive), c.gp);
        const Tensor<float> dfn = model.backward_global(Tensor<float>::from_vector(g.g_negative), c.gn);
        for (std::size_t i = 0; i < dfa.size(); ++i) {
          dfa[i] += g.f_anchor[i];
          dfp[i] += g.f_positive[i];
        }
        model.backward_local(a.label.index, dfa, c.la);
        model.backward_local(p.label.index, dfp, c.lp);
        model.backward_local(ng.label.index, dfn, c.ln);
      }
      adam.step(params);
      acc.total += terms.total;
      acc.first += terms.first;
      acc.second += terms.second;
    }
    return acc;
  });
  out.state = model.to_state(detail::make_meta(out, "teacher"));
  return out;
}

/// Each training patch routed through its own class's stream, then the
/// global component. The teacher is only read.
inline DistillationTargets compute_distillation_targets(const ModelState& teacher_state,
                                                        std::span<const data::PatchRecord> train) {
  const TeacherModel<float> teacher(teacher_state);
  DistillationTargets targets;
  for (const auto& p : train) {
    if (p.label.index < 0 || p.label.index >= teacher.config().n_classes) {
      throw InvalidInputError("patch " + p.patch_id + " has no usable label; teacher routing requires one");
    }
    if (!targets.emplace(p.patch_id, teacher.embed(p.values, p.label.index).storage()).second) {
      throw InvalidInputError("duplicate patch id " + p.patch_id);
    }
  }
  return targets;
}

inline DistillationTargets compute_distillation_targets(const ModelState& teacher_state,
                                                        const data::DatasetSplit& split) {
  return compute_distillation_targets(teacher_state, std::span<const data::PatchRecord>(split.train));
}

// ---------------------------------------------------------------------------
// Student

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::size_t count, std::uint64_t seed, int epoch) {
  Rng rng = make_rng(seed, stream::kBatch, 0x5354'5544, static_cast<std::uint64_t>(epoch));
  std::vector<std::size_t> order;
  order.reserve(count);
  while (order.size() < count) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n && order.size() < count; ++i) order.push_back(perm[i]);
  }
  return order;
}

}  // namespace detail

/// Minimizes gamma * ||z - z_hat|| + CE over uniformly shuffled batches.
/// loss_curve.first is the distance term, .second the cross-entropy term.
inline TrainRun train_student(const data::DatasetSplit& split, const DistillationTargets& targets,
                              const models::StudentConfig& cfg, const losses::HybridLossParams& loss_params,
                              const RunConfig& run, TrainHooks hooks = {}) {
  run.validate();
  loss_params.validate();
  cfg.validate();
  if (split.train.empty()) throw ConfigError("student training needs a non-empty train split");
  for (const auto& p : split.train) {
    const auto it = targets.find(p.patch_id);
    if (it == targets.end()) throw ConfigError("no distillation target for training patch " + p.patch_id);
    if (static_cast<int>(it->second.size()) != cfg.embedding_dim) {
      throw ConfigError("teacher embedding dim " + std::to_string(it->second.size()) +
                        " does not match student embedding dim " + std::to_string(cfg.embedding_dim));
    }
  }
  StudentModel<float> model(cfg, run.seed);
  auto params = model.params();
  nn::Adam<float> adam(run.learning_rate);
  TrainRun out;
  out.config = {{"student", cfg}, {"gamma", loss_params.gamma}, {"run", to_json(run)}};
  const std::size_t per_epoch = detail::samples_per_epoch(run, split.train.size());
  const auto bs = static_cast<std::size_t>(run.batch_size);

  detail::epoch_loop(run, params, adam, hooks, out, [&](int epoch) {
    EpochLoss acc{epoch + 1, 0.0, 0.0, 0.0};
    const auto order = detail::epoch_order(split.train.size(), per_epoch, run.seed, epoch);
    for (std::size_t start = 0, b = 0; start < order.size(); start += bs, ++b) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<StudentModel<float>::ForwardCache> caches(end - start);
      std::vector<losses::HybridSample<float>> batch(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& p = split.train[order[i]];
        auto o = model.forward(p.values, &caches[i - start]);
        batch[i - start] = {std::move(o.embedding), targets.at(p.patch_id), p.label.index, std::move(o.logits)};
      }
      std::vector<losses::HybridSample<float>> grads;
      const losses::LossTerms terms =
          losses::hybrid_loss_terms(std::span<const losses::HybridSample<float>>(batch), loss_params, &grads);
      detail::check_finite(terms.total, epoch, b, "student");
      nn::zero_grad(params);
      for (std::size_t i = 0; i < batch.size(); ++i) model.backward(caches[i], grads[i].z, grads[i].logits);
      adam.step(params);
      acc.total += terms.total;
      acc.first += terms.first;
      acc.second += terms.second;
    }
    return acc;
  });
  out.state = model.to_state(detail::make_meta(out, "student"));
  return out;
}

// ---------------------------------------------------------------------------
// Baselines

enum class BaselineKind { Siamese, Triplet };

inline std::string to_string(BaselineKind k) { return k == BaselineKind::Siamese ? "siamese" : "triplet"; }

/// Siamese: contrastive loss over seeded 50/50 pairs. Triplet: class-uniform
/// batches, every same-class (anchor, positive) pair in the batch takes its
/// semi-hard negative from the batch; pairs without one are skipped.
inline TrainRun train_baseline(const data::DatasetSplit& split, BaselineKind kind, const models::StudentConfig& cfg,
                               double margin, const RunConfig& run, TrainHooks hooks = {}) {
  run.validate();
  cfg.validate();
  if (!(margin > 0.0)) throw ConfigError("baseline margin must be > 0");
  const sampling::ClassIndex index(split.train);
  if (index.classes().size() < 2) throw ConfigError("baseline training needs at least 2 classes in the train split");
  StudentModel<float> model(cfg, run.seed);
  auto params = model.params();
  nn::Adam<float> adam(run.learning_rate);
  TrainRun out;
  out.config = {{"student", cfg}, {"baseline", to_string(kind)}, {"margin", margin}, {"run", to_json(run)}};
  const std::size_t per_epoch = detail::samples_per_epoch(run, split.train.size());
  const auto bs = static_cast<std::size_t>(run.batch_size);
  using Cache = StudentModel<float>::ForwardCache;

  detail::epoch_loop(run, params, adam, hooks, out, [&](int epoch) {
    EpochLoss acc{epoch + 1, 0.0, 0.0, 0.0};
    const std::size_t n_batches = (per_epoch + bs - 1) / bs;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t n = std::min(bs, per_epoch - b * bs);
      const std::uint64_t key = detail::batch_key(epoch, b);
      nn::zero_grad(params);
      double loss = 0.0;
      if (kind == BaselineKind::Siamese) {
        const auto pairs = sampling::make_pairs(split.train, std::max<std::size_t>(1, n / 2), run.seed, 0.5, key);
        std::vector<Cache> c1(pairs.size()), c2(pairs.size());
        std::vector<losses::PairSample<float>> batch(pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          batch[i].e1 = model.forward(split.train[pairs[i].first].values, &c1[i]).embedding;
          batch[i].e2 = model.forward(split.train[pairs[i].second].values, &c2[i]).embedding;
          batch[i].same = pairs[i].same_class;
        }
        std::vector<losses::PairSample<float>> grads;
        loss = losses::contrastive_loss(std::span<const losses::PairSample<float>>(batch), margin, &grads);
        detail::check_finite(loss, epoch, b, "siamese");
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          model.backward(c1[i], grads[i].e1, {});
          model.backward(c2[i], grads[i].e2, {});
        }
      } else {
        const auto idx = sampling::make_balanced_batch(split.train, n, run.seed, key);
        std::vector<Cache> caches(idx.size());
        std::vector<std::vector<float>> emb(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) emb[i] = model.forward(split.train[idx[i]].values, &caches[i]).embedding;
        std::vector<std::array<std::size_t, 3>> mined;
        for (std::size_t a = 0; a < idx.size(); ++a) {
          const int la = split.train[idx[a]].label.index;
          std::vector<std::size_t> neg_ids;
          std::vector<double> neg_d;
          for (std::size_t j = 0; j < idx.size(); ++j) {
            if (split.train[idx[j]].label.index != la) {
              neg_ids.push_back(j);
              neg_d.push_back(static_cast<double>(euclidean_distance(emb[a], emb[j])));
            }
          }
          if (neg_ids.empty()) continue;
          for (std::size_t p = 0; p < idx.size(); ++p) {
            if (p == a || idx[p] == idx[a] || split.train[idx[p]].label.index != la) continue;
            const double d_ap = static_cast<double>(euclidean_distance(emb[a], emb[p]));
            if (const auto k = sampling::mine_semi_hard_distances(d_ap, neg_d, margin)) {
              mined.push_back({a, p, neg_ids[*k]});
            }
          }
        }
        if (!mined.empty()) {
          std::vector<losses::TripletSample<float>> batch;
          batch.reserve(mined.size());
          for (const auto& m : mined) batch.push_back({emb[m[0]], emb[m[1]], emb[m[2]]});
          std::vector<losses::TripletSample<float>> grads;
          loss = losses::triplet_margin_loss(std::span<const losses::TripletSample<float>>(batch), margin, &grads);
          detail::check_finite(loss, epoch, b, "triplet");
          std::vector<std::vector<float>> gemb(idx.size(), std::vector<float>(emb.front().size(), 0.0f));
          for (std::size_t t = 0; t < mined.size(); ++t) {
            for (std::size_t d = 0; d < gemb[0].size(); ++d) {
              gemb[mined[t][0]][d] += grads[t].anchor[d];
              gemb[mined[t][1]][d] += grads[t].positive[d];
              gemb[mined[t][2]][d] += grads[t].negative[d];
            }
          }
          for (std::size_t i = 0; i < idx.size(); ++i) model.backward(caches[i], gemb[i], {});
        }
      }
      if (loss > 0.0) adam.step(params);
      acc.total += loss;
    }
    acc.first = acc.total;
    return acc;
  });
  out.state = model.to_state(detail::make_meta(out, to_string(kind)));
  return out;
}

}  // namespace gemini::training
