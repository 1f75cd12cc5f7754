#pragma once

// k-NN classification in an embedding space, support-weighted metrics,
// multi-seed Student-t confidence intervals, PCA projection and the
// (embedding size x k) sweep.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "gemini/common.hpp"
#include "gemini/datapipe.hpp"
#include "gemini/models.hpp"

namespace gemini::eval {

enum class SplitTag { Train, Test };

inline std::string to_string(SplitTag s) { return s == SplitTag::Train ? "train" : "test"; }

struct Provenance {
  std::string model_id;
  std::uint64_t seed = 0;
  int embedding_dim = 0;
};

/// N x D embeddings (row-major) with labels.
struct EmbeddingSet {
  std::vector<double> values;
  std::vector<int> labels;
  int dim = 0;
  SplitTag split = SplitTag::Train;
  Provenance provenance;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] std::span<const double> row(std::size_t i) const {
    return {values.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }

  void push_back(std::span<const float> e, int label) {
    if (dim == 0 && labels.empty()) dim = static_cast<int>(e.size());
    if (static_cast<int>(e.size()) != dim) throw ShapeError("embedding of size " + std::to_string(e.size()) +
                                                            " added to a set of dim " + std::to_string(dim));
    values.insert(values.end(), e.begin(), e.end());
    labels.push_back(label);
  }

  void validate(int n_classes = -1) const {
    if (labels.empty()) throw InvalidInputError("embedding set is empty");
    if (values.size() != labels.size() * static_cast<std::size_t>(dim)) throw ShapeError("embedding matrix size mismatch");
    for (double v : values) {
      if (!std::isfinite(v)) throw InvalidInputError("embedding set contains a non-finite value");
    }
    for (int l : labels) {
      if (l < 0 || (n_classes > 0 && l >= n_classes)) throw InvalidInputError("label out of range in embedding set");
    }
  }
};

/// Student embeddings for a list of patches (inference mode).
inline EmbeddingSet embed_patches(const models::StudentModel<float>& model, std::span<const data::PatchRecord> patches,
                                  SplitTag split, Provenance prov = {}) {
  EmbeddingSet set;
  set.dim = model.config().embedding_dim;
  set.split = split;
  prov.embedding_dim = set.dim;
  set.provenance = std::move(prov);
  for (const auto& p : patches) {
    const auto out = model.forward(p.values);
    set.push_back(out.embedding, p.label.index);
  }
  return set;
}

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Euclidean k-NN with uniform votes. k is clamped to the train size.
/// Neighbours are ordered by (distance, train index); a vote tie goes to
/// the tied class whose member appears first in that order.
inline std::vector<int> knn_classify(const EmbeddingSet& train, const EmbeddingSet& test, int k) {
  if (k < 1) throw InvalidInputError("k must be >= 1");
  if (train.size() == 0) throw InvalidInputError("k-NN needs a non-empty train set");
  if (train.dim != test.dim) {
    throw ShapeError("train dim " + std::to_string(train.dim) + " != test dim " + std::to_string(test.dim));
  }
  const int max_label = *std::max_element(train.labels.begin(), train.labels.end());
  const std::size_t k_eff = std::min<std::size_t>(static_cast<std::size_t>(k), train.size());
  std::vector<int> out;
  out.reserve(test.size());
  std::vector<std::pair<double, std::size_t>> dist(train.size());
  std::vector<int> votes(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t q = 0; q < test.size(); ++q) {
    for (std::size_t i = 0; i < train.size(); ++i) dist[i] = {detail::squared_distance(test.row(q), train.row(i)), i};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_eff), dist.end());
    std::fill(votes.begin(), votes.end(), 0);
    int top = 0;
    for (std::size_t j = 0; j < k_eff; ++j) top = std::max(top, ++votes[static_cast<std::size_t>(train.labels[dist[j].second])]);
    int pred = -1;
    for (std::size_t j = 0; j < k_eff && pred < 0; ++j) {
      const int l = train.labels[dist[j].second];
      if (votes[static_cast<std::size_t>(l)] == top) pred = l;
    }
    out.push_back(pred);
  }
  return out;
}

struct MetricsRow {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<MetricsRow> per_seed;
  MetricsRow ci95_halfwidth;
  int k = 0;
  int embedding_dim = 0;
};

/// confusion[true][pred].
inline std::vector<std::vector<long>> confusion_matrix(std::span<const int> truth, std::span<const int> pred,
                                                       int n_classes) {
  if (truth.size() != pred.size()) throw ShapeError("label vectors differ in length");
  if (truth.empty()) throw InvalidInputError("no labels to score");
  std::vector<std::vector<long>> cm(static_cast<std::size_t>(n_classes), std::vector<long>(static_cast<std::size_t>(n_classes)));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes || pred[i] < 0 || pred[i] >= n_classes) {
      throw InvalidInputError("label outside [0, " + std::to_string(n_classes) + ")");
    }
    ++cm[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  return cm;
}

/// Accuracy plus per-class precision/recall/F1 averaged with support weights
/// (so weighted recall equals accuracy). Classes never predicted get
/// precision 0; F1 is 0 when precision + recall is 0.
inline MetricsRow compute_metrics(std::span<const int> truth, std::span<const int> pred, int n_classes) {
  const auto cm = confusion_matrix(truth, pred, n_classes);
  const auto n = static_cast<double>(truth.size());
  MetricsRow m;
  long correct = 0;
  for (int c = 0; c < n_classes; ++c) correct += cm[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
  m.accuracy = static_cast<double>(correct) / n;
  for (int c = 0; c < n_classes; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    const long tp = cm[cc][cc];
    long support = 0;
    long predicted = 0;
    for (int j = 0; j < n_classes; ++j) {
      support += cm[cc][static_cast<std::size_t>(j)];
      predicted += cm[static_cast<std::size_t>(j)][cc];
    }
    if (support == 0) continue;
    const double w = static_cast<double>(support) / n;
    const double p = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    const double r = static_cast<double>(tp) / static_cast<double>(support);
    const double f = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    m.precision += w * p;
    m.recall += w * r;
    m.f1 += w * f;
  }
  return m;
}

/// t_{0.975, dof}.
inline double student_t_975(int dof) {
  if (dof < 1) throw InvalidInputError("Student-t needs at least 1 degree of freedom");
  return boost::math::quantile(boost::math::students_t(static_cast<double>(dof)), 0.975);
}

/// Mean and 95% half-width t_{0.975,n-1} * s / sqrt(n) per metric, folded in seed order.
inline MetricsReport aggregate_seeds(std::span<const MetricsRow> rows, int k = 0, int embedding_dim = 0) {
  if (rows.size() < 2) throw InvalidInputError("confidence interval undefined for fewer than 2 seeds");
  const auto n = static_cast<double>(rows.size());
  const double t = student_t_975(static_cast<int>(rows.size()) - 1);
  auto stats = [&](double MetricsRow::*field, double& mean, double& half) {
    double s = 0.0;
    for (const auto& r : rows) s += r.*field;
    mean = s / n;
    double ss = 0.0;
    for (const auto& r : rows) ss += (r.*field - mean) * (r.*field - mean);
    half = t * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  };
  MetricsReport rep;
  stats(&MetricsRow::accuracy, rep.accuracy, rep.ci95_halfwidth.accuracy);
  stats(&MetricsRow::precision, rep.precision, rep.ci95_halfwidth.precision);
  stats(&MetricsRow::recall, rep.recall, rep.ci95_halfwidth.recall);
  stats(&MetricsRow::f1, rep.f1, rep.ci95_halfwidth.f1);
  rep.per_seed.assign(rows.begin(), rows.end());
  rep.k = k;
  rep.embedding_dim = embedding_dim;
  return rep;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaResult {
  std::vector<double> projection;  // N x out_dim, row-major
  std::vector<double> explained_variance_ratio;
  std::vector<double> components;  // out_dim x D, row-major
  int out_dim = 0;
};

/// Mean-centred projection onto the top principal components. Each
/// component's sign is fixed so its largest-magnitude loading is positive
/// (the first such loading, on exact magnitude ties).
inline PcaResult pca_project(const EmbeddingSet& set, int out_dim = 2) {
  const auto n = static_cast<Eigen::Index>(set.size());
  const Eigen::Index d = set.dim;
  if (out_dim < 1 || out_dim > d) throw InvalidInputError("PCA output dim must lie in [1, D]");
  if (n < out_dim) throw InvalidInputError("PCA needs at least out_dim points");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> x(set.values.data(), n, d);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const RowMat centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Eigen::VectorXd evals = solver.eigenvalues();  // ascending
  const double total = std::max(evals.sum(), 0.0);
  PcaResult r;
  r.out_dim = out_dim;
  Eigen::MatrixXd comps(d, out_dim);
  for (int c = 0; c < out_dim; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < d; ++i) {
      if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
    }
    if (v(arg) < 0.0) v = -v;
    comps.col(c) = v;
    r.explained_variance_ratio.push_back(total > 0.0 ? std::max(evals(d - 1 - c), 0.0) / total : 0.0);
    for (Eigen::Index i = 0; i < d; ++i) r.components.push_back(v(i));
  }
  const RowMat proj = centered * comps;
  r.projection.assign(proj.data(), proj.data() + proj.size());
  return r;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepGrid {
  std::vector<int> embedding_dims;
  std::vector<int> k_values;
  std::vector<std::uint64_t> seeds;
};

struct SweepRow {
  std::string view;
  int embedding_dim = 0;
  int k = 0;
  MetricsReport report;
};

/// Returns (train, test) embeddings of a model trained at (dim, seed).
using TrainFn = std::function<std::pair<EmbeddingSet, EmbeddingSet>(int embedding_dim, std::uint64_t seed)>;

/// One aggregated report per (dim, k); train_fn is called once per (dim, seed).
inline std::vector<SweepRow> sweep(const TrainFn& train_fn, const SweepGrid& grid, int n_classes,
                                   const std::string& view = "") {
  if (grid.embedding_dims.empty() || grid.k_values.empty() || grid.seeds.empty()) {
    throw ConfigError("sweep grid must be non-empty on every axis");
  }
  std::vector<SweepRow> rows;
  for (int dim : grid.embedding_dims) {
    std::vector<std::vector<MetricsRow>> per_k(grid.k_values.size());
    for (std::uint64_t seed : grid.seeds) {
      const auto [train, test] = train_fn(dim, seed);
      for (std::size_t ki = 0; ki < grid.k_values.size(); ++ki) {
        const auto pred = knn_classify(train, test, grid.k_values[ki]);
        per_k[ki].push_back(compute_metrics(test.labels, pred, n_classes));
      }
    }
    for (std::size_t ki = 0; ki < grid.k_values.size(); ++ki) {
      SweepRow row{view, dim, grid.k_values[ki], {}};
      if (per_k[ki].size() >= 2) {
        row.report = aggregate_seeds(per_k[ki], grid.k_values[ki], dim);
      } else {
        const auto& m = per_k[ki].front();
        row.report = {m.accuracy, m.precision, m.recall, m.f1, per_k[ki], {}, grid.k_values[ki], dim};
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  os << "view,embedding_dim,k,accuracy,accuracy_ci95,precision,precision_ci95,recall,recall_ci95,f1,f1_ci95,n_seeds\n";
  for (const auto& r : rows) {
    const auto& m = r.report;
    os << r.view << ',' << r.embedding_dim << ',' << r.k << ',' << format_fixed(m.accuracy) << ','
       << format_fixed(m.ci95_halfwidth.accuracy) << ',' << format_fixed(m.precision) << ','
       << format_fixed(m.ci95_halfwidth.precision) << ',' << format_fixed(m.recall) << ','
       << format_fixed(m.ci95_halfwidth.recall) << ',' << format_fixed(m.f1) << ','
       << format_fixed(m.ci95_halfwidth.f1) << ',' << m.per_seed.size() << '\n';
  }
}

inline models::json sweep_to_json(std::span<const SweepRow> rows) {
  models::json out = models::json::array();
  for (const auto& r : rows) {
    models::json seeds = models::json::array();
    for (const auto& s : r.report.per_seed) {
      seeds.push_back({{"accuracy", s.accuracy}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}});
    }
    out.push_back({{"view", r.view},
                   {"embedding_dim", r.embedding_dim},
                   {"k", r.k},
                   {"accuracy", r.report.accuracy},
                   {"precision", r.report.precision},
                   {"recall", r.report.recall},
                   {"f1", r.report.f1},
                   {"ci95_halfwidth",
                    {{"accuracy", r.report.ci95_halfwidth.accuracy},
                     {"precision", r.report.ci95_halfwidth.precision},
                     {"recall", r.report.ci95_halfwidth.recall},
                     {"f1", r.report.ci95_halfwidth.f1}}},
                   {"per_seed", seeds}});
  }
  return out;
}

/// x,y,label,split rows for a 2-D scatter.
inline void write_scatter_csv(std::ostream& os, const PcaResult& pca, std::span<const int> labels,
                              std::span<const SplitTag> splits, const std::vector<std::string>& class_names) {
  if (pca.out_dim != 2) throw ShapeError("scatter export needs a 2-D projection");
  os << "x,y,label,split\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = static_cast<std::size_t>(labels[i]);
    os << format_fixed(pca.projection[2 * i]) << ',' << format_fixed(pca.projection[2 * i + 1]) << ','
       << (l < class_names.size() ? class_names[l] : std::to_string(labels[i])) << ',' << to_string(splits[i]) << '\n';
  }
}

/// Mean over triplets of d(a,n) - d(a,p).
inline double mean_triplet_margin(const EmbeddingSet& set, std::span<const std::array<std::size_t, 3>> triplets) {
  if (triplets.empty()) throw InvalidInputError("no triplets to score");
  double s = 0.0;
  for (const auto& t : triplets) {
    s += std::sqrt(detail::squared_distance(set.row(t[0]), set.row(t[2]))) -
         std::sqrt(detail::squared_distance(set.row(t[0]), set.row(t[1])));
  }
  return s / static_cast<double>(triplets.size());
}

}  // namespace gemini::eval
