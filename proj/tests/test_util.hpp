#ifndef DSDN_TESTS_TEST_UTIL_HPP
#define DSDN_TESTS_TEST_UTIL_HPP

// Shared helpers for the test suite: independent scalar-loop reference
// implementations ("oracles") and a central finite-difference gradient
// checker. Everything here deliberately avoids the library's vectorized
// code paths: loops over scalar indices only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "dsdn/autodiff.hpp"
#include "dsdn/corpus.hpp"

namespace testutil {

using dsdn::Mat;

inline Mat rand_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                    double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// Central finite differences on a subsample of coordinates of `t`, compared
// against the analytic gradient `analytic` (typically t.grad captured after
// one backward pass). `forward` must recompute the scalar loss from the
// current t.value. Returns the worst relative error over checked coords.
inline double fd_max_rel_err(dsdn::Tensor& t, const Mat& analytic,
                             const std::function<double()>& forward,
                             std::mt19937_64& rng, int max_coords = 8,
                             double h0 = 1e-5) {
  const Eigen::Index n = t.value.size();
  std::vector<Eigen::Index> coords(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
  if (n > max_coords) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(max_coords));
  }
  double worst = 0.0;
  for (Eigen::Index flat : coords) {
    const Eigen::Index r = flat % t.value.rows();
    const Eigen::Index c = flat / t.value.rows();
    const double x = t.value(r, c);
    const double h = h0 * std::max(1.0, std::abs(x));
    t.value(r, c) = x + h;
    const double up = forward();
    t.value(r, c) = x - h;
    const double dn = forward();
    t.value(r, c) = x;
    const double fd = (up - dn) / (2.0 * h);
    worst = std::max(worst, rel_err(fd, analytic(r, c)));
  }
  return worst;
}

namespace oracle {

// Plain scalar-loop matrix product.
inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index k = 0; k < b.cols(); ++k)
      for (Eigen::Index j = 0; j < a.cols(); ++j)
        out(i, k) += a(i, j) * b(j, k);
  return out;
}

// Scaled dot-product multi-head attention, one scalar loop per operation.
// Convention matches the library: projections right-multiply (x * W), heads
// are contiguous column slices, concat(heads) * Wo at the end.
inline Mat mha(const Mat& query, const Mat& keys, const Mat& values,
               const Mat& wq, const Mat& wk, const Mat& wv, const Mat& wo,
               int n_heads, const std::vector<std::uint8_t>& mask) {
  const Eigen::Index d = query.cols();
  const Eigen::Index dh = d / n_heads;
  const Mat q = matmul(query, wq);
  const Mat k = matmul(keys, wk);
  const Mat v = matmul(values, wv);
  Mat merged(query.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    for (Eigen::Index i = 0; i < query.rows(); ++i) {
      // scores over key positions, masked softmax
      std::vector<double> score(static_cast<std::size_t>(keys.rows()), 0.0);
      for (Eigen::Index l = 0; l < keys.rows(); ++l) {
        double s = 0.0;
        for (Eigen::Index c = 0; c < dh; ++c)
          s += q(i, h * dh + c) * k(l, h * dh + c);
        score[static_cast<std::size_t>(l)] = s / std::sqrt(static_cast<double>(dh));
      }
      double mx = -1e300;
      for (Eigen::Index l = 0; l < keys.rows(); ++l)
        if (mask[static_cast<std::size_t>(l)])
          mx = std::max(mx, score[static_cast<std::size_t>(l)]);
      double z = 0.0;
      std::vector<double> w(static_cast<std::size_t>(keys.rows()), 0.0);
      for (Eigen::Index l = 0; l < keys.rows(); ++l) {
        if (!mask[static_cast<std::size_t>(l)]) continue;
        w[static_cast<std::size_t>(l)] =
            std::exp(score[static_cast<std::size_t>(l)] - mx);
        z += w[static_cast<std::size_t>(l)];
      }
      for (Eigen::Index c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (Eigen::Index l = 0; l < keys.rows(); ++l)
          acc += w[static_cast<std::size_t>(l)] / z * v(l, h * dh + c);
        merged(i, h * dh + c) = acc;
      }
    }
  }
  return matmul(merged, wo);
}

// Mean binary cross-entropy over all cells, probabilities clamped as the
// library does before the log.
inline double bce(const Mat& p, const dsdn::SopLabelMatrix& labels) {
  double total = 0.0;
  for (int j = 0; j < labels.n_slots; ++j)
    for (int t = 0; t < labels.n_turns; ++t) {
      double q = std::min(1.0 - 1e-7, std::max(1e-7, p(j, t)));
      const double y = labels.at(j, t);
      total += -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
    }
  return total / (static_cast<double>(labels.n_slots) * labels.n_turns);
}

// (1/(pairs)) sum of per-pair coordinate-mean squared differences.
inline double mse_pairs(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  double total = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    double pair = 0.0;
    for (Eigen::Index i = 0; i < a[k].rows(); ++i)
      for (Eigen::Index j = 0; j < a[k].cols(); ++j) {
        const double d = a[k](i, j) - b[k](i, j);
        pair += d * d;
      }
    total += pair / static_cast<double>(a[k].size());
  }
  return total / static_cast<double>(a.size());
}

inline double cosine(const Mat& z, Eigen::Index a, Eigen::Index b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    dot += z(a, c) * z(b, c);
    na += z(a, c) * z(a, c);
    nb += z(b, c) * z(b, c);
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// NT-Xent by literal enumeration: anchors are label-1 cells; positives are
// other label-1 slots at the same turn; turn-level negatives the label-0
// slots at that turn; dialogue-level negatives the anchor slot at the other
// turns. Row layout of z: slot * n_turns + turn.
inline double nt_xent(const Mat& z, const dsdn::SopLabelMatrix& labels,
                      double tau, bool dialogue_negatives) {
  const int J = labels.n_slots, T = labels.n_turns;
  double total = 0.0;
  for (int j = 0; j < J; ++j) {
    for (int t = 0; t < T; ++t) {
      if (!labels.at(j, t)) continue;
      std::vector<Eigen::Index> pos, index_set;
      for (int p = 0; p < J; ++p) {
        if (p == j) continue;
        const Eigen::Index cell = static_cast<Eigen::Index>(p) * T + t;
        index_set.push_back(cell);
        if (labels.at(p, t)) pos.push_back(cell);
      }
      if (pos.empty()) continue;
      if (dialogue_negatives)
        for (int u = 0; u < T; ++u)
          if (u != t) index_set.push_back(static_cast<Eigen::Index>(j) * T + u);
      const Eigen::Index a = static_cast<Eigen::Index>(j) * T + t;
      double denom_max = -1e300;
      for (Eigen::Index n : index_set)
        denom_max = std::max(denom_max, cosine(z, a, n) / tau);
      double denom = 0.0;
      for (Eigen::Index n : index_set)
        denom += std::exp(cosine(z, a, n) / tau - denom_max);
      const double log_denom = denom_max + std::log(denom);
      double anchor = 0.0;
      for (Eigen::Index p : pos) anchor += -(cosine(z, a, p) / tau - log_denom);
      total += anchor / static_cast<double>(pos.size());
    }
  }
  return total / (static_cast<double>(T) * J);
}

inline Mat layer_norm_row(const Mat& x, const Mat& g, const Mat& b,
                          double eps = 1e-9) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(i, c);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      var += (x(i, c) - mean) * (x(i, c) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      out(i, c) = g(0, c) * (x(i, c) - mean) / std::sqrt(var + eps) + b(0, c);
  }
  return out;
}

// Softmax of negative Euclidean distances to each candidate row.
inline std::vector<double> dist_softmax(const Mat& o, const Mat& cand) {
  std::vector<double> d(static_cast<std::size_t>(cand.rows()), 0.0);
  for (Eigen::Index k = 0; k < cand.rows(); ++k) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < cand.cols(); ++c)
      s += (o(0, c) - cand(k, c)) * (o(0, c) - cand(k, c));
    d[static_cast<std::size_t>(k)] = std::sqrt(s);
  }
  double z = 0.0;
  for (double v : d) z += std::exp(-v);
  std::vector<double> p;
  for (double v : d) p.push_back(std::exp(-v) / z);
  return p;
}

inline double value_nll(const Mat& o, const Mat& cand, Eigen::Index gold) {
  return -std::log(dist_softmax(o, cand)[static_cast<std::size_t>(gold)]);
}

using CellSet = std::set<std::pair<int, int>>;

struct SampleSetsRef {
  CellSet positives, negatives_turn, negatives_dialogue;
};

// Exhaustive double-loop enumeration of the contrastive sample sets.
inline SampleSetsRef select_samples(const dsdn::SopLabelMatrix& labels, int j,
                                    int t) {
  SampleSetsRef out;
  for (int p = 0; p < labels.n_slots; ++p)
    for (int u = 0; u < labels.n_turns; ++u) {
      if (u == t && p != j) {
        if (labels.at(p, u))
          out.positives.insert({p, u});
        else
          out.negatives_turn.insert({p, u});
      }
      if (p == j && u != t) out.negatives_dialogue.insert({p, u});
    }
  return out;
}

inline CellSet as_set(const std::vector<std::pair<int, int>>& v) {
  return CellSet(v.begin(), v.end());
}

}  // namespace oracle

// Small schema with K non-"none" values per slot; slot names "dom-slotN".
inline dsdn::Schema toy_schema(int n_slots, int n_values) {
  dsdn::Schema schema;
  for (int j = 0; j < n_slots; ++j) {
    dsdn::SlotDef def;
    def.name = "dom-slot" + std::to_string(j);
    def.values.push_back("none");
    for (int v = 0; v < n_values; ++v)
      def.values.push_back("val" + std::to_string(j) + "x" + std::to_string(v));
    schema.slots.push_back(std::move(def));
  }
  return schema;
}

inline dsdn::SopLabelMatrix random_labels(std::mt19937_64& rng, int J, int T,
                                          double p_one = 0.4) {
  std::bernoulli_distribution bit(p_one);
  dsdn::SopLabelMatrix labels(J, T);
  for (int j = 0; j < J; ++j)
    for (int t = 0; t < T; ++t) labels.at(j, t) = bit(rng) ? 1 : 0;
  return labels;
}

}  // namespace testutil

#endif  // DSDN_TESTS_TEST_UTIL_HPP
