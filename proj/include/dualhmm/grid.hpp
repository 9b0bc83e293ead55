#pragma once

// Integer-grid index sets and log-domain weight maps.  These carry the
// support Λ and the mixture weights of every filtering / smoothing /
// cost-to-go recursion in the library.

#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <utility>
#include <vector>

#include "dualhmm/common.hpp"

namespace dualhmm {

// A point m = (m_1, ..., m_K) on the nonnegative integer grid, with its
// coordinate sum ("norm") cached.
class GridIndex {
 public:
  GridIndex() = default;
  explicit GridIndex(std::vector<int> coords) : coords_(std::move(coords)) {
    for (int c : coords_)
      require(c >= 0, "GridIndex: coordinates must be nonnegative");
    norm_ = std::accumulate(coords_.begin(), coords_.end(), 0);
  }
  GridIndex(std::initializer_list<int> coords)
      : GridIndex(std::vector<int>(coords)) {}

  static GridIndex zeros(int dim) {
    return GridIndex(std::vector<int>(static_cast<std::size_t>(dim), 0));
  }

  int dim() const { return static_cast<int>(coords_.size()); }
  int norm() const { return norm_; }
  int operator[](int j) const { return coords_[static_cast<std::size_t>(j)]; }
  const std::vector<int>& coords() const { return coords_; }

  // Coordinate-wise partial order.
  bool leq(const GridIndex& other) const {
    if (dim() != other.dim()) throw ValidationError("GridIndex: dim mismatch");
    for (int j = 0; j < dim(); ++j)
      if (coords_[static_cast<std::size_t>(j)] > other[j]) return false;
    return true;
  }

  GridIndex plus(const GridIndex& other) const {
    if (dim() != other.dim()) throw ValidationError("GridIndex: dim mismatch");
    std::vector<int> c(coords_);
    for (int j = 0; j < dim(); ++j) c[static_cast<std::size_t>(j)] += other[j];
    return GridIndex(std::move(c));
  }

  // Requires other <= *this.
  GridIndex minus(const GridIndex& other) const {
    if (dim() != other.dim()) throw ValidationError("GridIndex: dim mismatch");
    std::vector<int> c(coords_);
    for (int j = 0; j < dim(); ++j) {
      c[static_cast<std::size_t>(j)] -= other[j];
      require(c[static_cast<std::size_t>(j)] >= 0,
              "GridIndex: subtraction went negative");
    }
    return GridIndex(std::move(c));
  }

  friend bool operator==(const GridIndex& a, const GridIndex& b) {
    return a.coords_ == b.coords_;
  }
  // Lexicographic order: the library-wide deterministic iteration order.
  friend bool operator<(const GridIndex& a, const GridIndex& b) {
    return a.coords_ < b.coords_;
  }

  friend std::ostream& operator<<(std::ostream& os, const GridIndex& g) {
    os << '(';
    for (int j = 0; j < g.dim(); ++j) os << (j ? "," : "") << g[j];
    return os << ')';
  }

 private:
  std::vector<int> coords_;
  int norm_ = 0;
};

// A finite set of grid points of common dimension, kept sorted
// lexicographically (deterministic iteration, no duplicates).
class IndexSet {
 public:
  IndexSet() = default;
  explicit IndexSet(std::vector<GridIndex> members) {
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    if (!members.empty()) {
      const int k = members.front().dim();
      for (const auto& m : members)
        require(m.dim() == k, "IndexSet: mixed dimensions");
    }
    members_ = std::move(members);
  }

  static IndexSet single(GridIndex m) { return IndexSet({std::move(m)}); }

  bool empty() const { return members_.empty(); }
  std::size_t size() const { return members_.size(); }
  int dim() const {
    require(!empty(), "IndexSet: dimension of empty set");
    return members_.front().dim();
  }
  const std::vector<GridIndex>& members() const { return members_; }
  auto begin() const { return members_.begin(); }
  auto end() const { return members_.end(); }

  bool contains(const GridIndex& g) const {
    return std::binary_search(members_.begin(), members_.end(), g);
  }

  friend bool operator==(const IndexSet& a, const IndexSet& b) {
    return a.members_ == b.members_;
  }

 private:
  std::vector<GridIndex> members_;
};

namespace detail {
inline void enumerate_box(const GridIndex& top, std::vector<GridIndex>& out) {
  const int k = top.dim();
  std::vector<int> cur(static_cast<std::size_t>(k), 0);
  while (true) {
    out.emplace_back(cur);
    int j = k - 1;
    while (j >= 0 && cur[static_cast<std::size_t>(j)] == top[j]) {
      cur[static_cast<std::size_t>(j)] = 0;
      --j;
    }
    if (j < 0) break;
    ++cur[static_cast<std::size_t>(j)];
  }
}
}  // namespace detail

// Down-set operator B(Λ) = { n : n <= m for some m in Λ }.
inline IndexSet below(const IndexSet& lambda) {
  require(!lambda.empty(), "below: empty index set");
  std::vector<GridIndex> out;
  for (const auto& m : lambda) detail::enumerate_box(m, out);
  return IndexSet(std::move(out));
}

// Elementwise translation { m + y : m in Λ }.
inline IndexSet shift(const IndexSet& lambda, const GridIndex& y) {
  require(!lambda.empty(), "shift: empty index set");
  require(lambda.dim() == y.dim(), "shift: dimension mismatch");
  std::vector<GridIndex> out;
  out.reserve(lambda.size());
  for (const auto& m : lambda) out.push_back(m.plus(y));
  return IndexSet(std::move(out));
}

// A GridIndex -> log-weight mapping in lexicographic key order.  Weights are
// kept in log-domain throughout; `normalized` records whether the entries
// currently log-sum-exp to zero.
class LogWeightMap {
 public:
  LogWeightMap() = default;

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  bool normalized() const { return normalized_; }

  // Inserts or log-accumulates (log-add-exp) a contribution.
  void accumulate(const GridIndex& key, double log_w) {
    auto [it, inserted] = entries_.try_emplace(key, log_w);
    if (!inserted) it->second = log_add_exp(it->second, log_w);
    normalized_ = false;
  }

  // Inserts a fresh entry; key must not already be present.
  void insert(const GridIndex& key, double log_w) {
    auto [it, inserted] = entries_.try_emplace(key, log_w);
    (void)it;
    require(inserted, "LogWeightMap: duplicate key");
    normalized_ = false;
  }

  // Inserts a fresh entry known to sort after every existing key, in O(1)
  // amortized instead of a tree search.  The ordering requirement is checked.
  void append(GridIndex key, double log_w) {
    require(entries_.empty() || entries_.rbegin()->first < key,
            "LogWeightMap: append keys must be strictly increasing");
    entries_.emplace_hint(entries_.end(), std::move(key), log_w);
    normalized_ = false;
  }

  double at(const GridIndex& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? neg_inf : it->second;
  }
  bool contains(const GridIndex& key) const { return entries_.count(key) > 0; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  IndexSet support() const {
    std::vector<GridIndex> keys;
    keys.reserve(entries_.size());
    for (const auto& [k, v] : entries_) keys.push_back(k);
    return IndexSet(std::move(keys));
  }

  // log of sum_m exp(log_w_m).
  double log_total() const {
    double hi = neg_inf;
    for (const auto& [k, v] : entries_) hi = std::max(hi, v);
    if (hi == neg_inf) return neg_inf;
    double acc = 0.0;
    for (const auto& [k, v] : entries_) acc += std::exp(v - hi);
    return hi + std::log(acc);
  }

  // Rescales all entries so they log-sum-exp to zero; returns the log of the
  // pre-normalization total.  Relative ordering of entries is preserved.
  double normalize() {
    const double z = log_total();
    require(z != neg_inf, "LogWeightMap: cannot normalize, all weights zero");
    for (auto& [k, v] : entries_) v -= z;
    normalized_ = true;
    return z;
  }

  // Uniformly shifts every log-weight (multiplies all weights by exp(c)).
  void scale_log(double c) {
    for (auto& [k, v] : entries_) v += c;
    if (c != 0.0) normalized_ = false;
  }

  void mark_normalized() { normalized_ = true; }

  GridIndex argmax() const {
    require(!entries_.empty(), "LogWeightMap: argmax of empty map");
    auto best = entries_.begin();
    for (auto it = entries_.begin(); it != entries_.end(); ++it)
      if (it->second > best->second) best = it;
    return best->first;
  }

  friend bool operator==(const LogWeightMap& a, const LogWeightMap& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::map<GridIndex, double> entries_;
  bool normalized_ = false;
};

// Normalizes a copy of `w` and reports the log pre-normalization total.
inline std::pair<LogWeightMap, double> logsumexp_normalize(LogWeightMap w) {
  const double z = w.normalize();
  return {std::move(w), z};
}

}  // namespace dualhmm
