#include "protograde/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "protograde/errors.hpp"

namespace protograde::metrics {
namespace {

Value ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string pad(const std::string& s, std::size_t width, bool left) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return left ? s + fill : fill + s;
}

std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths(header.size());
  for (std::size_t j = 0; j < header.size(); ++j) {
    widths[j] = header[j].size();
    for (const auto& r : rows) widths[j] = std::max(widths[j], r[j].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j > 0) out << "  ";
      out << pad(cells[j], widths[j], j == 0);
    }
    out << "\n";
  };
  line(header);
  std::size_t total = 2 * (header.size() - 1);
  for (auto w : widths) total += w;
  out << std::string(total, '-') << "\n";
  for (const auto& r : rows) line(r);
  return out.str();
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ShapeError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_counts(const std::vector<std::vector<std::uint64_t>>& counts) {
  ConfusionMatrix cm(counts.size());
  for (std::size_t t = 0; t < counts.size(); ++t) {
    if (counts[t].size() != counts.size()) throw ShapeError("confusion matrix rows must be square");
    for (std::size_t p = 0; p < counts.size(); ++p) cm.counts_[t * cm.classes_ + p] = counts[t][p];
  }
  return cm;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) throw DataError("label outside the confusion matrix");
  ++counts_[truth * classes_ + predicted];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t classes) {
  if (truth.size() != predicted.size())
    throw ShapeError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                     std::to_string(predicted.size()) + " predictions");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    const auto n = static_cast<int>(classes);
    if (t < 0 || t >= n || p < 0 || p >= n)
      throw DataError("record " + std::to_string(i) + ": label pair (" + std::to_string(t) + ", " +
                      std::to_string(p) + ") outside [0, " + std::to_string(n - 1) + "]");
    cm.add(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return cm;
}

OneVsRest one_vs_rest(const ConfusionMatrix& cm, std::size_t c) {
  OneVsRest r;
  const std::uint64_t total = cm.total();
  r.tp = cm.at(c, c);
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    if (k == c) continue;
    r.fn += cm.at(c, k);
    r.fp += cm.at(k, c);
  }
  r.tn = total - r.tp - r.fn - r.fp;
  return r;
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::sn: return "SN";
    case Metric::sp: return "SP";
    case Metric::ppv: return "PPV";
    case Metric::npv: return "NPV";
    case Metric::fs: return "FS";
    case Metric::acc: return "ACC";
  }
  return "?";
}

Value MetricValues::get(Metric m) const {
  switch (m) {
    case Metric::sn: return sn;
    case Metric::sp: return sp;
    case Metric::ppv: return ppv;
    case Metric::npv: return npv;
    case Metric::fs: return fs;
    case Metric::acc: return acc;
  }
  return std::nullopt;
}

MetricValues metrics_from_counts(const OneVsRest& k) {
  MetricValues m;
  m.sn = ratio(k.tp, k.tp + k.fn);
  m.sp = ratio(k.tn, k.tn + k.fp);
  m.ppv = ratio(k.tp, k.tp + k.fp);
  m.npv = ratio(k.tn, k.tn + k.fn);
  if (m.sn && m.ppv && *m.sn + *m.ppv > 0.0) m.fs = 2.0 * *m.ppv * *m.sn / (*m.ppv + *m.sn);
  m.acc = ratio(k.tp + k.tn, k.tp + k.tn + k.fp + k.fn);
  return m;
}

MetricValues per_class_metrics(const ConfusionMatrix& cm, std::size_t c) {
  return metrics_from_counts(one_vs_rest(cm, c));
}

Averages averaged_metrics(const ConfusionMatrix& cm) {
  OneVsRest pooled;
  std::vector<MetricValues> per;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto k = one_vs_rest(cm, c);
    pooled.tp += k.tp;
    pooled.fp += k.fp;
    pooled.fn += k.fn;
    pooled.tn += k.tn;
    per.push_back(metrics_from_counts(k));
  }
  Averages a;
  a.micro = metrics_from_counts(pooled);

  auto macro = [&](Metric m) -> Value {
    double s = 0.0;
    for (const auto& v : per) {
      const auto x = v.get(m);
      if (!x) return std::nullopt;
      s += *x;
    }
    return s / static_cast<double>(per.size());
  };
  a.macro.sn = macro(Metric::sn);
  a.macro.sp = macro(Metric::sp);
  a.macro.ppv = macro(Metric::ppv);
  a.macro.npv = macro(Metric::npv);
  a.macro.fs = macro(Metric::fs);
  a.macro.acc = macro(Metric::acc);
  // Accuracy is reported as the per-class mean in both rows.
  a.micro.acc = a.macro.acc;
  return a;
}

MetricsReport make_report(const ConfusionMatrix& cm, std::vector<std::string> class_names) {
  if (class_names.size() != cm.classes()) throw ShapeError("one class name per confusion-matrix class required");
  MetricsReport r;
  r.class_names = std::move(class_names);
  for (std::size_t c = 0; c < cm.classes(); ++c) r.per_class.push_back(per_class_metrics(cm, c));
  r.averages = averaged_metrics(cm);
  return r;
}

std::string format_value(const Value& v) {
  if (!v) return "n/a";
  // nearbyint follows the default round-to-nearest-even mode.
  const double scaled = std::nearbyint(*v * 1e4);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", scaled / 1e4);
  return buf;
}

std::string per_class_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "metric";
  for (const auto& n : report.class_names) out << ',' << n;
  out << "\n";
  for (auto m : kAllMetrics) {
    out << metric_name(m);
    for (const auto& v : report.per_class) out << ',' << format_value(v.get(m));
    out << "\n";
  }
  return out.str();
}

std::string averages_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "metric,micro,macro\n";
  for (auto m : kAllMetrics)
    out << metric_name(m) << ',' << format_value(report.averages.micro.get(m)) << ','
        << format_value(report.averages.macro.get(m)) << "\n";
  return out.str();
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& n : class_names) out << ',' << n;
  out << "\n";
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    out << class_names[t];
    for (std::size_t p = 0; p < cm.classes(); ++p) out << ',' << cm.at(t, p);
    out << "\n";
  }
  return out.str();
}

std::string report_text(const MetricsReport& report) {
  std::vector<std::string> header{"metric"};
  header.insert(header.end(), report.class_names.begin(), report.class_names.end());
  std::vector<std::vector<std::string>> rows, avg_rows;
  for (auto m : kAllMetrics) {
    std::vector<std::string> row{metric_name(m)};
    for (const auto& v : report.per_class) row.push_back(format_value(v.get(m)));
    rows.push_back(std::move(row));
    avg_rows.push_back({metric_name(m), format_value(report.averages.micro.get(m)),
                        format_value(report.averages.macro.get(m))});
  }
  return "Per-class\n" + table(header, rows) + "\nAverages\n" + table({"metric", "micro", "macro"}, avg_rows);
}

}  // namespace protograde::metrics
