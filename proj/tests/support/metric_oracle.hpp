// Brute-force metric oracle: counts outcomes per sample straight from label
// pairs and evaluates the textbook formulas, without a confusion matrix.
#ifndef GLPATH_TESTS_METRIC_ORACLE_HPP
#define GLPATH_TESTS_METRIC_ORACLE_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "glpath/eval.hpp"

namespace glpath::testing {

struct OracleCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline OracleCounts count_outcomes(const std::vector<std::size_t>& truth,
                                   const std::vector<std::size_t>& pred, std::size_t k) {
  OracleCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool actual = truth[i] == k, guessed = pred[i] == k;
    if (actual && guessed) ++c.tp;
    else if (!actual && guessed) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double safe_div(double a, double b) { return b == 0 ? 0.0 : a / b; }

inline MetricValues oracle_metrics(const OracleCounts& c) {
  const double tp = double(c.tp), fp = double(c.fp), tn = double(c.tn), fn = double(c.fn);
  MetricValues v;
  v.accuracy = safe_div(tp + tn, tp + fp + tn + fn);
  v.recall = safe_div(tp, tp + fn);
  v.precision = safe_div(tp, tp + fp);
  v.specificity = safe_div(tn, tn + fp);
  v.f1 = safe_div(2.0 * v.precision * v.recall, v.precision + v.recall);
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  v.mcc = den == 0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(den);
  return v;
}

inline bool same_metrics(const MetricValues& a, const MetricValues& b) {
  return a.accuracy == b.accuracy && a.recall == b.recall && a.precision == b.precision &&
         a.specificity == b.specificity && a.f1 == b.f1 && a.mcc == b.mcc;
}

struct RandomLabels {
  std::vector<std::size_t> truth, pred;
};

/// Label/prediction pairs of random length with a random accuracy level.
inline RandomLabels random_labels(std::mt19937_64& gen, std::size_t classes, std::size_t max_n) {
  RandomLabels r;
  const std::size_t n = std::uniform_int_distribution<std::size_t>(1, max_n)(gen);
  const double hit = std::uniform_real_distribution<double>(0, 1)(gen);
  std::uniform_int_distribution<std::size_t> label(0, classes - 1);
  std::bernoulli_distribution correct(hit);
  for (std::size_t i = 0; i < n; ++i) {
    r.truth.push_back(label(gen));
    r.pred.push_back(correct(gen) ? r.truth.back() : label(gen));
  }
  return r;
}

/// Checks one randomized case against the oracle; returns false on any exact
/// mismatch or a violated micro identity.
inline bool matches_oracle(const RandomLabels& r, std::size_t classes) {
  const auto cm = confusion_from_predictions(r.truth, r.pred, classes);
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = 0; j < classes; ++j) {
      std::uint64_t pairs = 0;
      for (std::size_t s = 0; s < r.truth.size(); ++s) pairs += r.truth[s] == i && r.pred[s] == j;
      if (cm(i, j) != pairs) return false;
    }
  }
  const auto report = aggregate(cm);
  OracleCounts pooled;
  MetricValues mean;
  for (std::size_t k = 0; k < classes; ++k) {
    const auto c = count_outcomes(r.truth, r.pred, k);
    const auto b = one_vs_rest(cm, k);
    if (b.tp != c.tp || b.fp != c.fp || b.tn != c.tn || b.fn != c.fn) return false;
    const auto v = oracle_metrics(c);
    if (!same_metrics(report.per_class[k], v)) return false;
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.tn += c.tn;
    pooled.fn += c.fn;
    mean.recall += v.recall / classes;
  }
  if (!same_metrics(report.micro, oracle_metrics(pooled))) return false;
  if (std::abs(report.macro.recall - mean.recall) > 1e-12) return false;
  std::uint64_t correct = 0;
  for (std::size_t s = 0; s < r.truth.size(); ++s) correct += r.truth[s] == r.pred[s];
  const double acc = double(correct) / double(r.truth.size());
  return std::abs(report.multiclass_accuracy - acc) <= 1e-12 &&
         std::abs(report.micro.recall - acc) <= 1e-12 &&
         std::abs(report.micro.precision - acc) <= 1e-12 && std::abs(report.micro.f1 - acc) <= 1e-12;
}

}  // namespace glpath::testing

#endif  // GLPATH_TESTS_METRIC_ORACLE_HPP
