#pragma once

// Confusion matrix and one-vs-rest metrics (SN, SP, PPV, NPV, FS, ACC)
// per class plus micro and macro averages.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace protograde::metrics {

/// counts[true][predicted].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  /// Throws ShapeError on non-square input.
  static ConfusionMatrix from_counts(const std::vector<std::vector<std::uint64_t>>& counts);

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  void add(std::size_t truth, std::size_t predicted);
  std::uint64_t total() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Throws ShapeError on length mismatch, DataError on labels outside [0, classes).
ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t classes);

struct OneVsRest {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};
OneVsRest one_vs_rest(const ConfusionMatrix& cm, std::size_t c);

/// nullopt marks a zero denominator.
using Value = std::optional<double>;

enum class Metric { sn, sp, ppv, npv, fs, acc };
inline constexpr std::array<Metric, 6> kAllMetrics{Metric::sn, Metric::sp, Metric::ppv,
                                                   Metric::npv, Metric::fs, Metric::acc};
std::string metric_name(Metric m);

struct MetricValues {
  Value sn, sp, ppv, npv, fs, acc;
  Value get(Metric m) const;
};

MetricValues metrics_from_counts(const OneVsRest& counts);
MetricValues per_class_metrics(const ConfusionMatrix& cm, std::size_t c);

struct Averages {
  MetricValues micro;
  MetricValues macro;
};
Averages averaged_metrics(const ConfusionMatrix& cm);

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<MetricValues> per_class;
  Averages averages;
};
MetricsReport make_report(const ConfusionMatrix& cm, std::vector<std::string> class_names);

/// 4 decimals, round-half-even on the scaled value; undefined renders "n/a".
std::string format_value(const Value& v);

/// `metric,<class...>` with one row per metric.
std::string per_class_csv(const MetricsReport& report);
/// `metric,micro,macro` with one row per metric.
std::string averages_csv(const MetricsReport& report);
/// `true\predicted,<class...>` then one row per true class.
std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);
/// Both tables as aligned plain text.
std::string report_text(const MetricsReport& report);

}  // namespace protograde::metrics
