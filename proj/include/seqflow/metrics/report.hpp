#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqflow/core/error.hpp"

namespace seqflow {

struct MetricSummary {
  double mean = 0.0;
  std::optional<double> std;  // only with >= 2 seeds
  std::size_t count = 0;
};

// Mean and sample standard deviation of per-seed values. A -infinity entry
// (zero error) makes the mean -infinity.
inline MetricSummary summarize(const std::vector<double>& per_seed) {
  if (per_seed.empty()) throw ValidationError("no values to summarize");
  MetricSummary s;
  s.count = per_seed.size();
  for (double v : per_seed) s.mean += v;
  s.mean /= static_cast<double>(per_seed.size());
  if (per_seed.size() >= 2 && std::isfinite(s.mean)) {
    double v = 0.0;
    for (double x : per_seed) v += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(v / static_cast<double>(per_seed.size() - 1));
  }
  return s;
}

struct EvalReport {
  std::string task;
  std::string method;
  std::size_t nfe = 0;
  std::map<std::string, MetricSummary> metrics;
  std::vector<double> lead_time_rmse;  // forecasting only
  std::vector<std::uint64_t> seeds;
  nlohmann::json extra = nlohmann::json::object();

  void add(const std::string& name, const std::vector<double>& per_seed) { metrics[name] = summarize(per_seed); }
};

namespace detail {

// JSON has no infinities; non-finite values become null plus a flag.
inline nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace detail

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [name, s] : r.metrics) {
    nlohmann::json m = {{"mean", detail::json_number(s.mean)}, {"n", s.count}};
    if (!std::isfinite(s.mean)) m["non_finite"] = s.mean < 0 ? "-inf" : (std::isnan(s.mean) ? "nan" : "inf");
    if (s.std) m["std"] = *s.std;
    metrics[name] = m;
  }
  nlohmann::json j = {{"task", r.task}, {"method", r.method}, {"nfe", r.nfe}, {"metrics", metrics}, {"seeds", r.seeds}};
  if (!r.lead_time_rmse.empty()) j["lead_time_rmse"] = r.lead_time_rmse;
  if (!r.extra.empty()) j["extra"] = r.extra;
  return j;
}

inline void write_jsonl(std::ostream& os, const std::vector<EvalReport>& reports) {
  for (const auto& r : reports) os << to_json(r).dump() << '\n';
}

inline constexpr const char* kCsvHeader = "task,method,nfe,metric,mean,std,n_seeds";

// One row per task/method/nfe/metric; lead-time RMSEs appear as metrics
// named rmse_lead_<h>.
inline void write_csv(std::ostream& os, const std::vector<EvalReport>& reports, bool header = true) {
  if (header) os << kCsvHeader << '\n';
  for (const auto& r : reports) {
    for (const auto& [name, s] : r.metrics) {
      os << r.task << ',' << r.method << ',' << r.nfe << ',' << name << ',' << detail::csv_number(s.mean) << ','
         << (s.std ? detail::csv_number(*s.std) : "") << ',' << s.count << '\n';
    }
    for (std::size_t h = 0; h < r.lead_time_rmse.size(); ++h) {
      os << r.task << ',' << r.method << ',' << r.nfe << ",rmse_lead_" << h + 1 << ','
         << detail::csv_number(r.lead_time_rmse[h]) << ",," << r.seeds.size() << '\n';
    }
  }
}

}  // namespace seqflow
