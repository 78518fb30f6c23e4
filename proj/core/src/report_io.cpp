#include <cstdio>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "leafvit/metrics.hpp"

namespace leafvit {

namespace {

using nlohmann::ordered_json;

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string percent(double v) { return fixed(100.0 * v, 2) + "%"; }

}  // namespace

std::string report_to_json(const EvaluationReport& r) {
  ordered_json j;
  j["split"] = r.split;
  j["samples"] = r.samples;
  j["labels"] = r.labels;
  j["accuracy"] = r.accuracy;
  j["top1"] = r.top1;
  j["top5"] = r.top5;
  j["loss"] = r.loss;
  j["macro"] = {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}};

  ordered_json classes = ordered_json::array();
  for (std::size_t k = 0; k < r.classes.size(); ++k) {
    const auto& c = r.classes[k];
    classes.push_back({{"id", k},
                       {"label", c.label},
                       {"precision", c.precision.value},
                       {"recall", c.recall.value},
                       {"f1", c.f1.value},
                       {"precision_undefined", c.precision.undefined},
                       {"recall_undefined", c.recall.undefined},
                       {"f1_undefined", c.f1.undefined},
                       {"ovr_accuracy", c.ovr_accuracy},
                       {"support", c.support},
                       {"auc", optional_number(c.auc)}});
  }
  j["classes"] = std::move(classes);

  ordered_json cm = ordered_json::array();
  for (std::size_t t = 0; t < r.confusion.classes(); ++t) {
    ordered_json row = ordered_json::array();
    for (std::size_t p = 0; p < r.confusion.classes(); ++p) row.push_back(r.confusion.at(t, p));
    cm.push_back(std::move(row));
  }
  j["confusion_matrix"] = std::move(cm);

  ordered_json roc = ordered_json::array();
  for (std::size_t k = 0; k < r.roc.size(); ++k) {
    ordered_json pts = ordered_json::array();
    for (const auto& [fpr, tpr] : r.roc[k].points) pts.push_back({fpr, tpr});
    roc.push_back({{"label", r.labels.at(k)}, {"auc", optional_number(r.roc[k].auc)}, {"points", std::move(pts)}});
  }
  j["roc"] = std::move(roc);
  return j.dump(2) + "\n";
}

std::string bench_to_json(const BenchReport& r) {
  ordered_json j;
  j["model"] = r.model;
  j["params"] = r.params;
  j["macs"] = r.macs;
  j["gmacs"] = r.gmacs;
  j["fps"] = r.fps;
  j["latency_ms"] = {{"p50", r.latency_p50_ms}, {"p95", r.latency_p95_ms}};
  j["iters"] = r.iters;
  j["warmup"] = r.warmup;
  j["threads"] = r.threads;
  j["seed"] = r.seed;
  return j.dump(2) + "\n";
}

std::string confusion_to_csv(const EvaluationReport& r) {
  std::string out = "true\\pred";
  for (const auto& l : r.labels) out += "," + csv_field(l);
  out += "\n";
  for (std::size_t t = 0; t < r.confusion.classes(); ++t) {
    out += csv_field(r.labels.at(t));
    for (std::size_t p = 0; p < r.confusion.classes(); ++p) out += "," + std::to_string(r.confusion.at(t, p));
    out += "\n";
  }
  return out;
}

std::string roc_to_csv(const EvaluationReport& r) {
  std::string out = "class,label,fpr,tpr\n";
  for (std::size_t k = 0; k < r.roc.size(); ++k) {
    for (const auto& [fpr, tpr] : r.roc[k].points) {
      out += std::to_string(k) + "," + csv_field(r.labels.at(k)) + "," + fixed(fpr) + "," + fixed(tpr) + "\n";
    }
  }
  return out;
}

std::string format_report_table(const EvaluationReport& r) {
  std::size_t w = 5;  // "Total"
  for (const auto& l : r.labels) w = std::max(w, l.size());
  const int lw = static_cast<int>(w);
  auto rate = [](const Rate& x) { return x.undefined ? std::string("-") : percent(x.value); };

  std::ostringstream os;
  os << std::left << std::setw(lw) << "Class" << std::right << std::setw(11) << "Accuracy" << std::setw(11)
     << "Precision" << std::setw(10) << "Recall" << std::setw(10) << "F1-Score" << std::setw(9) << "Support"
     << "\n";
  for (const auto& c : r.classes) {
    os << std::left << std::setw(lw) << c.label << std::right << std::setw(11) << percent(c.ovr_accuracy)
       << std::setw(11) << rate(c.precision) << std::setw(10) << rate(c.recall) << std::setw(10) << rate(c.f1)
       << std::setw(9) << c.support << "\n";
  }
  os << std::left << std::setw(lw) << "Total" << std::right << std::setw(11) << percent(r.accuracy) << std::setw(11)
     << percent(r.macro_precision) << std::setw(10) << percent(r.macro_recall) << std::setw(10)
     << percent(r.macro_f1) << std::setw(9) << r.samples << "\n";
  os << "top-1 " << percent(r.top1) << "  top-5 " << percent(r.top5) << "  loss " << fixed(r.loss) << "\n";
  return os.str();
}

}  // namespace leafvit
