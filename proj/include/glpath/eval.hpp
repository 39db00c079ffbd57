// Confusion matrices and classification metrics with per-class, micro and
// macro aggregation. Every ratio whose denominator is zero evaluates to 0.
#ifndef GLPATH_EVAL_HPP
#define GLPATH_EVAL_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "glpath/data.hpp"
#include "glpath/error.hpp"

namespace glpath {

/// K x K counts; entry (i, j) counts samples of true class i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = kNumClasses) : k_(classes), counts_(classes * classes, 0) {
    if (classes < 2) throw ConfigError("confusion matrix needs at least 2 classes");
  }

  std::size_t classes() const noexcept { return k_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_.at(truth * k_ + pred); }
  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts_.at(truth * k_ + pred); }

  void add(std::size_t truth, std::size_t pred) {
    if (truth >= k_ || pred >= k_) {
      throw DataError("label pair (" + std::to_string(truth) + ", " + std::to_string(pred) +
                      ") outside 0.." + std::to_string(k_ - 1));
    }
    ++counts_[truth * k_ + pred];
  }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }
  std::uint64_t correct() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < k_; ++i) s += (*this)(i, i);
    return s;
  }
  std::uint64_t row_sum(std::size_t i) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < k_; ++j) s += (*this)(i, j);
    return s;
  }
  std::uint64_t col_sum(std::size_t j) const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < k_; ++i) s += (*this)(i, j);
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion_from_predictions(std::span<const std::size_t> truth,
                                                  std::span<const std::size_t> predicted,
                                                  std::size_t classes = kNumClasses) {
  if (truth.size() != predicted.size()) {
    throw DataError("confusion matrix: " + std::to_string(truth.size()) + " labels vs " +
                    std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

struct BinaryCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  friend bool operator==(const BinaryCounts&, const BinaryCounts&) = default;
};

inline BinaryCounts one_vs_rest(const ConfusionMatrix& cm, std::size_t k) {
  if (k >= cm.classes()) throw DataError("one_vs_rest: class " + std::to_string(k) + " out of range");
  BinaryCounts b;
  b.tp = cm(k, k);
  b.fn = cm.row_sum(k) - b.tp;
  b.fp = cm.col_sum(k) - b.tp;
  b.tn = cm.total() - b.tp - b.fn - b.fp;
  return b;
}

namespace detail {

inline void require_nonempty(const BinaryCounts& b) {
  if (b.total() == 0) throw DataError("metrics are undefined for empty counts");
}

inline double ratio(double num, double den) { return den == 0 ? 0.0 : num / den; }

}  // namespace detail

inline double accuracy(const BinaryCounts& b) {
  detail::require_nonempty(b);
  return detail::ratio(double(b.tp + b.tn), double(b.total()));
}
inline double recall(const BinaryCounts& b) {
  detail::require_nonempty(b);
  return detail::ratio(double(b.tp), double(b.tp + b.fn));
}
inline double specificity(const BinaryCounts& b) {
  detail::require_nonempty(b);
  return detail::ratio(double(b.tn), double(b.tn + b.fp));
}
inline double precision(const BinaryCounts& b) {
  detail::require_nonempty(b);
  return detail::ratio(double(b.tp), double(b.tp + b.fp));
}
inline double f1(const BinaryCounts& b) {
  const double p = precision(b), r = recall(b);
  return detail::ratio(2.0 * p * r, p + r);
}

/// (TP*TN - FP*FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN)).
inline double mcc_binary(const BinaryCounts& b) {
  detail::require_nonempty(b);
  const double tp = double(b.tp), fp = double(b.fp), tn = double(b.tn), fn = double(b.fn);
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  return den == 0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(den);
}

/// Generalized correlation over the full matrix:
///   (c s - sum p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2))
/// with c the diagonal sum, s the total, p column sums and t row sums.
inline double mcc_multiclass(const ConfusionMatrix& cm) {
  const double s = double(cm.total());
  if (s == 0) throw DataError("metrics are undefined for an empty confusion matrix");
  const double c = double(cm.correct());
  double pt = 0, pp = 0, tt = 0;
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    const double p = double(cm.col_sum(k)), t = double(cm.row_sum(k));
    pt += p * t;
    pp += p * p;
    tt += t * t;
  }
  const double den = (s * s - pp) * (s * s - tt);
  return den == 0 ? 0.0 : (c * s - pt) / std::sqrt(den);
}

struct MetricValues {
  double accuracy = 0, recall = 0, precision = 0, specificity = 0, f1 = 0, mcc = 0;
};

inline MetricValues binary_metrics(const BinaryCounts& b) {
  return {glpath::accuracy(b), glpath::recall(b), glpath::precision(b), glpath::specificity(b),
          glpath::f1(b),       mcc_binary(b)};
}

struct MetricReport {
  std::vector<std::string> class_names;
  std::vector<MetricValues> per_class;
  /// Formulas applied to one-vs-rest counts pooled over classes.
  MetricValues micro;
  /// Unweighted mean of the per-class values; micro.mcc and macro.mcc are
  /// the binary MCC of the pooled counts and the mean per-class binary MCC.
  MetricValues macro;
  double multiclass_accuracy = 0;
  double mcc_binary_macro = 0;
  double mcc_multiclass = 0;
  std::uint64_t samples = 0;
};

inline MetricReport aggregate(const ConfusionMatrix& cm, std::vector<std::string> class_names = {}) {
  const std::size_t k = cm.classes();
  if (cm.total() == 0) throw DataError("metrics are undefined for an empty confusion matrix");
  if (class_names.empty()) {
    for (std::size_t i = 0; i < k; ++i) {
      class_names.push_back(k == kNumClasses ? std::string(class_name(i)) : std::to_string(i));
    }
  }
  if (class_names.size() != k) throw ConfigError("aggregate: class name count mismatch");
  MetricReport r;
  r.class_names = std::move(class_names);
  r.samples = cm.total();
  BinaryCounts pooled;
  for (std::size_t c = 0; c < k; ++c) {
    const BinaryCounts b = one_vs_rest(cm, c);
    pooled.tp += b.tp;
    pooled.fp += b.fp;
    pooled.tn += b.tn;
    pooled.fn += b.fn;
    const MetricValues v = binary_metrics(b);
    r.per_class.push_back(v);
    r.macro.accuracy += v.accuracy;
    r.macro.recall += v.recall;
    r.macro.precision += v.precision;
    r.macro.specificity += v.specificity;
    r.macro.f1 += v.f1;
    r.macro.mcc += v.mcc;
  }
  const double kd = double(k);
  r.macro.accuracy /= kd;
  r.macro.recall /= kd;
  r.macro.precision /= kd;
  r.macro.specificity /= kd;
  r.macro.f1 /= kd;
  r.macro.mcc /= kd;
  r.micro = binary_metrics(pooled);
  r.multiclass_accuracy = double(cm.correct()) / double(cm.total());
  r.mcc_binary_macro = r.macro.mcc;
  r.mcc_multiclass = mcc_multiclass(cm);
  return r;
}

namespace detail {

struct NamedMetric {
  const char* name;
  double MetricValues::*field;
};

inline constexpr NamedMetric kMetricFields[] = {
    {"accuracy", &MetricValues::accuracy},       {"recall", &MetricValues::recall},
    {"precision", &MetricValues::precision},     {"specificity", &MetricValues::specificity},
    {"f1", &MetricValues::f1},                   {"mcc", &MetricValues::mcc},
};

}  // namespace detail

/// CSV `metric,scope,value`; scope is a class name, micro, macro or overall.
inline std::string format_report_csv(const MetricReport& r) {
  std::string out = "metric,scope,value\n";
  auto row = [&](const std::string& metric, const std::string& scope, double v) {
    out += metric + "," + scope + "," + format_double(v) + "\n";
  };
  row("accuracy", "overall", r.multiclass_accuracy);
  row("mcc_multiclass", "overall", r.mcc_multiclass);
  row("mcc_binary_macro", "overall", r.mcc_binary_macro);
  row("samples", "overall", double(r.samples));
  for (const auto& m : detail::kMetricFields) {
    row(m.name, "micro", r.micro.*m.field);
    row(m.name, "macro", r.macro.*m.field);
    for (std::size_t c = 0; c < r.per_class.size(); ++c) row(m.name, r.class_names[c], r.per_class[c].*m.field);
  }
  return out;
}

inline std::string format_report_text(const MetricReport& r) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf, "samples: %llu\naccuracy: %.6f\nmcc (multiclass): %.6f\nmcc (binary, macro): %.6f\n\n",
                static_cast<unsigned long long>(r.samples), r.multiclass_accuracy, r.mcc_multiclass,
                r.mcc_binary_macro);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-8s %9s %9s %9s %11s %9s %9s\n", "scope", "accuracy", "recall",
                "precision", "specificity", "f1", "mcc");
  out += buf;
  auto line = [&](const std::string& scope, const MetricValues& v) {
    std::snprintf(buf, sizeof buf, "%-8s %9.6f %9.6f %9.6f %11.6f %9.6f %9.6f\n", scope.c_str(), v.accuracy,
                  v.recall, v.precision, v.specificity, v.f1, v.mcc);
    out += buf;
  };
  for (std::size_t c = 0; c < r.per_class.size(); ++c) line(r.class_names[c], r.per_class[c]);
  line("micro", r.micro);
  line("macro", r.macro);
  out += "ratios with a zero denominator are reported as 0\n";
  return out;
}

}  // namespace glpath

#endif  // GLPATH_EVAL_HPP
