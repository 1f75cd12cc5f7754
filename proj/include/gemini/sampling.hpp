#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gemini/common.hpp"
#include "gemini/datapipe.hpp"
#include "gemini/tensor.hpp"

namespace gemini::sampling {

/// Indices into the patch list the triplet was drawn from.
struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct TripletBatch {
  std::vector<Triplet> triplets;
  std::uint64_t batch_id = 0;
};

struct Pair {
  std::size_t first = 0;
  std::size_t second = 0;
  bool same_class = false;
  friend bool operator==(const Pair&, const Pair&) = default;
};

/// Patch indices grouped by class index, in list order.
class ClassIndex {
 public:
  explicit ClassIndex(std::span<const data::PatchRecord> patches) {
    for (std::size_t i = 0; i < patches.size(); ++i) {
      const auto& l = patches[i].label;
      members_[l.index].push_back(i);
      names_[l.index] = l.name;
    }
    for (const auto& [cls, idx] : members_) {
      classes_.push_back(cls);
      if (idx.size() >= 2) anchor_classes_.push_back(cls);
    }
  }

  [[nodiscard]] const std::vector<int>& classes() const { return classes_; }
  /// Classes with at least two patches.
  [[nodiscard]] const std::vector<int>& anchor_classes() const { return anchor_classes_; }
  [[nodiscard]] const std::vector<std::size_t>& members(int cls) const { return members_.at(cls); }
  [[nodiscard]] const std::string& name(int cls) const { return names_.at(cls); }
  [[nodiscard]] std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [c, m] : members_) n += m.size();
    return n;
  }

 private:
  std::map<int, std::vector<std::size_t>> members_;
  std::map<int, std::string> names_;
  std::vector<int> classes_;
  std::vector<int> anchor_classes_;
};

namespace detail {

inline std::size_t draw_other(const ClassIndex& index, int cls, Rng& rng) {
  const std::size_t others = index.total() - index.members(cls).size();
  if (others == 0) throw SamplingError("no negative available for class " + index.name(cls));
  std::size_t pick = uniform_index(rng, others);
  for (int c : index.classes()) {
    if (c == cls) continue;
    const auto& m = index.members(c);
    if (pick < m.size()) return m[pick];
    pick -= m.size();
  }
  throw SamplingError("negative draw out of range");
}

inline int draw_anchor_class(const ClassIndex& index, Rng& rng) {
  if (index.anchor_classes().empty()) {
    const std::string name = index.classes().empty() ? std::string("<none>") : index.name(index.classes().front());
    throw SamplingError("no class has two patches; no positive available for class " + name);
  }
  return index.anchor_classes()[uniform_index(rng, index.anchor_classes().size())];
}

inline std::pair<std::size_t, std::size_t> draw_positive_pair(const ClassIndex& index, int cls, Rng& rng) {
  const auto& m = index.members(cls);
  const std::size_t a = uniform_index(rng, m.size());
  std::size_t p = uniform_index(rng, m.size() - 1);
  if (p >= a) ++p;
  return {m[a], m[p]};
}

}  // namespace detail

/// Anchor class uniform over classes (that can supply a positive), positive
/// uniform within that class excluding the anchor, negative uniform over the
/// patches of every other class.
inline std::vector<Triplet> make_triplets(std::span<const data::PatchRecord> patches, std::size_t n_triplets,
                                          std::uint64_t seed, std::uint64_t batch_id = 0) {
  const ClassIndex index(patches);
  Rng rng = make_rng(seed, stream::kTriplets, batch_id);
  std::vector<Triplet> out;
  out.reserve(n_triplets);
  for (std::size_t t = 0; t < n_triplets; ++t) {
    const int cls = detail::draw_anchor_class(index, rng);
    const auto [a, p] = detail::draw_positive_pair(index, cls, rng);
    const std::size_t n = detail::draw_other(index, cls, rng);
    out.push_back({a, p, n});
  }
  return out;
}

inline TripletBatch make_triplet_batch(std::span<const data::PatchRecord> patches, std::size_t batch_size,
                                       std::uint64_t seed, std::uint64_t batch_id) {
  return {make_triplets(patches, batch_size, seed, batch_id), batch_id};
}

/// True when the triplet honours the label invariants against `patches`.
inline bool is_valid(const Triplet& t, std::span<const data::PatchRecord> patches) {
  const auto& a = patches[t.anchor];
  const auto& p = patches[t.positive];
  const auto& n = patches[t.negative];
  return a.label.index == p.label.index && n.label.index != a.label.index && a.patch_id != p.patch_id;
}

/// Each pair is positive with probability positive_fraction. Positive pairs
/// pick a class uniformly; negative pairs pick the first patch's class
/// uniformly and the second patch uniformly among other classes.
inline std::vector<Pair> make_pairs(std::span<const data::PatchRecord> patches, std::size_t n_pairs, std::uint64_t seed,
                                    double positive_fraction = 0.5, std::uint64_t batch_id = 0) {
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
    throw ConfigError("positive_fraction must lie in [0,1]");
  }
  const ClassIndex index(patches);
  if (index.classes().empty()) throw SamplingError("cannot draw pairs from an empty patch list");
  Rng rng = make_rng(seed, stream::kPairs, batch_id);
  std::bernoulli_distribution coin(positive_fraction);
  std::vector<Pair> out;
  out.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    if (coin(rng)) {
      const int cls = detail::draw_anchor_class(index, rng);
      const auto [a, b] = detail::draw_positive_pair(index, cls, rng);
      out.push_back({a, b, true});
    } else {
      const int cls = index.classes()[uniform_index(rng, index.classes().size())];
      const auto& m = index.members(cls);
      const std::size_t a = m[uniform_index(rng, m.size())];
      out.push_back({a, detail::draw_other(index, cls, rng), false});
    }
  }
  return out;
}

/// Class-uniform sample of patch indices (with replacement across batches,
/// without replacement inside a class while it lasts).
inline std::vector<std::size_t> make_balanced_batch(std::span<const data::PatchRecord> patches, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t batch_id) {
  const ClassIndex index(patches);
  if (index.classes().empty()) throw SamplingError("cannot draw a batch from an empty patch list");
  Rng rng = make_rng(seed, stream::kBatch, batch_id);
  std::map<int, std::vector<std::size_t>> pools;
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const int cls = index.classes()[uniform_index(rng, index.classes().size())];
    auto& pool = pools[cls];
    if (pool.empty()) {
      pool = index.members(cls);
      std::shuffle(pool.begin(), pool.end(), rng);
    }
    out.push_back(pool.back());
    pool.pop_back();
  }
  return out;
}

/// Semi-hard negative: d(a,p) < d(a,n) < d(a,p) + margin; the smallest such
/// d(a,n) wins, with the lower index breaking exact ties.
template <typename T>
std::optional<std::size_t> mine_semi_hard(std::span<const T> anchor, std::span<const T> positive,
                                          const std::vector<std::vector<T>>& negatives, double margin) {
  if (!(margin > 0.0)) throw ConfigError("mining margin must be > 0");
  if (negatives.empty()) throw InvalidInputError("mine_semi_hard: empty negative list");
  const double d_ap = static_cast<double>(euclidean_distance(anchor, positive));
  std::optional<std::size_t> best;
  double best_d = 0.0;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const double d_an = static_cast<double>(euclidean_distance(anchor, std::span<const T>(negatives[i])));
    if (d_an > d_ap && d_an < d_ap + margin && (!best || d_an < best_d)) {
      best = i;
      best_d = d_an;
    }
  }
  return best;
}

/// Variant taking precomputed anchor-negative distances.
inline std::optional<std::size_t> mine_semi_hard_distances(double d_ap, std::span<const double> d_an, double margin) {
  if (!(margin > 0.0)) throw ConfigError("mining margin must be > 0");
  if (d_an.empty()) throw InvalidInputError("mine_semi_hard: empty negative list");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < d_an.size(); ++i) {
    if (d_an[i] > d_ap && d_an[i] < d_ap + margin && (!best || d_an[i] < d_an[*best])) best = i;
  }
  return best;
}

}  // namespace gemini::sampling
