#ifndef DRDTR_FOREST_HPP_
#define DRDTR_FOREST_HPP_

// CART forest with bootstrap resampling, variance-reduction splits and
// leaf-mean predictions. Targets may have several outputs; with one-hot
// class targets the summed-variance criterion equals Gini impurity and the
// leaf means are class frequencies, so the same code serves as the
// classification forest.

#include "drdtr/core.hpp"
#include "drdtr/rng.hpp"

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace drdtr {

struct ForestParams {
  int num_trees = 100;
  int max_depth = 0;  // 0: grow until min_leaf or purity stops the split
  int min_leaf = 5;
  double mtry_fraction = 1.0;  // share of features tried at each split, in (0, 1]
  bool bootstrap = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_trees < 1) throw Error("forest: trees-count must be >= 1");
    if (min_leaf < 1) throw Error("forest: min-leaf-size must be >= 1");
    if (max_depth < 0) throw Error("forest: max-depth must be >= 0");
    if (!(mtry_fraction > 0.0 && mtry_fraction <= 1.0))
      throw Error("forest: features-per-split-fraction must lie in (0, 1]");
  }
};

class Forest {
 public:
  Forest() = default;

  /// x: n x p features, y: n x m targets.
  static Forest fit(const Matrix& x, const Matrix& y, const ForestParams& params, int jobs = 1) {
    params.validate();
    if (x.rows() != y.rows()) throw Error("forest: feature and target row counts differ");
    if (x.rows() < 1) throw Error("forest: no training rows");
    Forest forest;
    forest.num_features_ = static_cast<std::size_t>(x.cols());
    forest.num_outputs_ = static_cast<std::size_t>(y.cols());

    const auto n = static_cast<std::size_t>(x.rows());
    const auto p = static_cast<std::size_t>(x.cols());
    std::vector<std::vector<int>> order(p, std::vector<int>(n));
    for (std::size_t f = 0; f < p; ++f) {
      std::iota(order[f].begin(), order[f].end(), 0);
      std::stable_sort(order[f].begin(), order[f].end(), [&](int a, int b) {
        return x(a, static_cast<Eigen::Index>(f)) < x(b, static_cast<Eigen::Index>(f));
      });
    }

    forest.trees_.resize(static_cast<std::size_t>(params.num_trees));
    parallel_for(forest.trees_.size(), jobs, [&](std::size_t t) {
      Rng rng(derive_seed(params.seed, {t}));
      forest.trees_[t] = TreeBuilder(x, y, order, params, rng).build();
    });
    return forest;
  }

  std::size_t num_outputs() const { return num_outputs_; }
  std::size_t num_features() const { return num_features_; }
  std::size_t num_trees() const { return trees_.size(); }

  /// Averages the leaf values reached in every tree into `out` (size m).
  void predict(std::span<const double> x, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& tree : trees_) {
      const double* v = tree.leaf(x);
      for (std::size_t o = 0; o < num_outputs_; ++o) out[o] += v[o];
    }
    const double inv = 1.0 / static_cast<double>(trees_.size());
    for (auto& o : out) o *= inv;
  }

  double predict(std::span<const double> x) const {
    double out = 0.0;
    predict(x, std::span<double>(&out, 1));
    return out;
  }

 private:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::size_t value = 0;  // offset into Tree::values for leaves
  };

  struct Tree {
    std::vector<Node> nodes;
    std::vector<double> values;

    const double* leaf(std::span<const double> x) const {
      std::size_t k = 0;
      while (nodes[k].feature >= 0) {
        const Node& nd = nodes[k];
        k = static_cast<std::size_t>(x[static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right);
      }
      return values.data() + nodes[k].value;
    }
  };

  // Presorted CART growth: every node owns the same [lo, hi) range in each
  // per-feature sorted array, and splits partition those ranges stably.
  class TreeBuilder {
   public:
    TreeBuilder(const Matrix& x, const Matrix& y, const std::vector<std::vector<int>>& order,
                const ForestParams& params, Rng& rng)
        : x_(x), y_(y), params_(params), rng_(rng),
          p_(static_cast<std::size_t>(x.cols())), m_(static_cast<std::size_t>(y.cols())) {
      const auto n = static_cast<std::size_t>(x.rows());
      std::vector<int> count(n, params.bootstrap ? 0 : 1);
      if (params.bootstrap)
        for (std::size_t s = 0; s < n; ++s) ++count[rng_.below(n)];
      std::vector<int> first(n + 1, 0);
      for (std::size_t r = 0; r < n; ++r) first[r + 1] = first[r] + count[r];
      sample_row_.resize(static_cast<std::size_t>(first[n]));
      for (std::size_t r = 0; r < n; ++r)
        for (int c = 0; c < count[r]; ++c) sample_row_[static_cast<std::size_t>(first[r] + c)] = static_cast<int>(r);
      sorted_.assign(p_, {});
      for (std::size_t f = 0; f < p_; ++f) {
        auto& s = sorted_[f];
        s.reserve(sample_row_.size());
        for (int r : order[f])
          for (int c = 0; c < count[static_cast<std::size_t>(r)]; ++c) s.push_back(first[static_cast<std::size_t>(r)] + c);
      }
      goes_left_.assign(sample_row_.size(), 0);
      scratch_.resize(sample_row_.size());
      features_.resize(p_);
      std::iota(features_.begin(), features_.end(), std::size_t{0});
      mtry_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(params.mtry_fraction * static_cast<double>(p_) - 1e-9)));
      mtry_ = std::min(mtry_, std::max<std::size_t>(p_, 1));
    }

    Tree build() {
      struct Pending {
        std::size_t node, lo, hi;
        int depth;
      };
      tree_.nodes.emplace_back();
      std::vector<Pending> stack{{0, 0, sample_row_.size(), 0}};
      while (!stack.empty()) {
        const Pending job = stack.back();
        stack.pop_back();
        Split split;
        if (can_split(job.lo, job.hi, job.depth)) split = best_split(job.lo, job.hi);
        if (split.feature < 0) {
          make_leaf(job.node, job.lo, job.hi);
          continue;
        }
        const std::size_t mid = partition(job.lo, job.hi, split);
        const auto left = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        tree_.nodes.emplace_back();
        Node& nd = tree_.nodes[job.node];
        nd.feature = split.feature;
        nd.threshold = split.threshold;
        nd.left = left;
        nd.right = left + 1;
        stack.push_back({static_cast<std::size_t>(left + 1), mid, job.hi, job.depth + 1});
        stack.push_back({static_cast<std::size_t>(left), job.lo, mid, job.depth + 1});
      }
      return std::move(tree_);
    }

   private:
    struct Split {
      int feature = -1;
      double threshold = 0.0;
    };

    double xv(int sample, std::size_t f) const {
      return x_(sample_row_[static_cast<std::size_t>(sample)], static_cast<Eigen::Index>(f));
    }
    double yv(int sample, std::size_t o) const {
      return y_(sample_row_[static_cast<std::size_t>(sample)], static_cast<Eigen::Index>(o));
    }

    bool can_split(std::size_t lo, std::size_t hi, int depth) const {
      if (p_ == 0) return false;
      if (params_.max_depth > 0 && depth >= params_.max_depth) return false;
      return hi - lo >= 2 * static_cast<std::size_t>(params_.min_leaf);
    }

    Split best_split(std::size_t lo, std::size_t hi) {
      const std::size_t count = hi - lo;
      const auto& any = sorted_[0];
      std::vector<double> total(m_, 0.0);
      for (std::size_t i = lo; i < hi; ++i)
        for (std::size_t o = 0; o < m_; ++o) total[o] += yv(any[i], o);
      double sse = 0.0, sumsq = 0.0;
      for (std::size_t o = 0; o < m_; ++o) {
        const double mu = total[o] / static_cast<double>(count);
        for (std::size_t i = lo; i < hi; ++i) {
          const double v = yv(any[i], o);
          sse += (v - mu) * (v - mu);
          sumsq += v * v;
        }
      }
      if (!(sse > 1e-14 * sumsq)) return {};
      double parent = 0.0;
      for (std::size_t o = 0; o < m_; ++o) parent += total[o] * total[o] / static_cast<double>(count);

      // Candidate features come from a running Fisher-Yates draw. At least
      // mtry are examined, and the draw continues past mtry until some
      // feature admits a split, so constant columns never end a node early.
      const auto min_leaf = static_cast<std::size_t>(params_.min_leaf);
      Split best;
      double best_score = parent + 1e-10 * sse;
      bool admissible = false;
      std::vector<double> left(m_);
      for (std::size_t k = 0; k < p_ && (k < mtry_ || !admissible); ++k) {
        std::swap(features_[k], features_[k + rng_.below(p_ - k)]);
        const std::size_t f = features_[k];
        const auto& s = sorted_[f];
        std::fill(left.begin(), left.end(), 0.0);
        for (std::size_t i = lo; i + 1 < hi; ++i) {
          for (std::size_t o = 0; o < m_; ++o) left[o] += yv(s[i], o);
          const std::size_t n_left = i - lo + 1;
          if (n_left < min_leaf) continue;
          if (count - n_left < min_leaf) break;
          const double a = xv(s[i], f), b = xv(s[i + 1], f);
          if (!(a < b)) continue;
          admissible = true;
          double score = 0.0;
          for (std::size_t o = 0; o < m_; ++o) {
            const double r = total[o] - left[o];
            score += left[o] * left[o] / static_cast<double>(n_left) +
                     r * r / static_cast<double>(count - n_left);
          }
          if (score > best_score ||
              (score == best_score && best.feature >= 0 && static_cast<int>(f) < best.feature)) {
            best_score = score;
            double thr = std::midpoint(a, b);
            if (!(a < thr)) thr = b;
            best = {static_cast<int>(f), thr};
          }
        }
      }
      return best;
    }

    std::size_t partition(std::size_t lo, std::size_t hi, const Split& split) {
      const auto f = static_cast<std::size_t>(split.feature);
      std::size_t n_left = 0;
      for (std::size_t i = lo; i < hi; ++i) {
        const int s = sorted_[f][i];
        const bool left = xv(s, f) < split.threshold;
        goes_left_[static_cast<std::size_t>(s)] = left ? 1 : 0;
        n_left += left ? 1 : 0;
      }
      for (std::size_t g = 0; g < p_; ++g) {
        auto& s = sorted_[g];
        std::size_t l = lo, r = lo + n_left;
        for (std::size_t i = lo; i < hi; ++i) {
          const int v = s[i];
          if (goes_left_[static_cast<std::size_t>(v)]) scratch_[l++] = v;
          else scratch_[r++] = v;
        }
        std::copy(scratch_.begin() + static_cast<std::ptrdiff_t>(lo), scratch_.begin() + static_cast<std::ptrdiff_t>(hi),
                  s.begin() + static_cast<std::ptrdiff_t>(lo));
      }
      return lo + n_left;
    }

    void make_leaf(std::size_t node, std::size_t lo, std::size_t hi) {
      Node& nd = tree_.nodes[node];
      nd.feature = -1;
      nd.value = tree_.values.size();
      const auto& any = p_ > 0 ? sorted_[0] : identity();
      for (std::size_t o = 0; o < m_; ++o) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += yv(any[i], o);
        tree_.values.push_back(hi > lo ? s / static_cast<double>(hi - lo) : 0.0);
      }
    }

    const std::vector<int>& identity() {
      if (identity_.empty()) {
        identity_.resize(sample_row_.size());
        std::iota(identity_.begin(), identity_.end(), 0);
      }
      return identity_;
    }

    const Matrix& x_;
    const Matrix& y_;
    const ForestParams& params_;
    Rng& rng_;
    std::size_t p_, m_;
    std::size_t mtry_ = 1;
    std::vector<int> sample_row_;
    std::vector<std::vector<int>> sorted_;
    std::vector<char> goes_left_;
    std::vector<int> scratch_;
    std::vector<std::size_t> features_;
    std::vector<int> identity_;
    Tree tree_;
  };

  std::vector<Tree> trees_;
  std::size_t num_features_ = 0;
  std::size_t num_outputs_ = 0;
};

}  // namespace drdtr

#endif  // DRDTR_FOREST_HPP_
