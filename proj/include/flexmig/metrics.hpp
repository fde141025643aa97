#pragma once

// Simulation event log and the cluster metrics derived from it.

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flexmig/error.hpp"
#include "flexmig/mig_model.hpp"
#include "json.hpp"

namespace flexmig::sim {

struct Event {
  Seconds t = 0.0;
  std::string event;
  JobId job_id = -1;  // -1 for cluster-level events
  nlohmann::ordered_json detail = nlohmann::ordered_json::object();

  bool operator==(const Event&) const = default;
};

using EventLog = std::vector<Event>;

inline nlohmann::ordered_json to_json(const Event& e) {
  return {{"t", e.t}, {"event", e.event}, {"job_id", e.job_id}, {"detail", e.detail}};
}

inline std::string serialize_log(const EventLog& log) {
  std::string out;
  for (const auto& e : log) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

inline EventLog parse_log(std::string_view text) {
  EventLog log;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    const auto line = text.substr(
        pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() : end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::ordered_json::parse(line);
      log.push_back({j.at("t").get<double>(), j.at("event").get<std::string>(),
                     j.at("job_id").get<JobId>(), j.value("detail", nlohmann::ordered_json::object())});
    } catch (const nlohmann::json::exception& e) {
      throw parse_error(line_no, e.what());
    }
  }
  return log;
}

struct JobMetrics {
  JobId job_id = 0;
  Seconds wait_s = 0.0;
  Seconds jct_s = 0.0;
  Seconds ext_frag_s = 0.0;

  bool operator==(const JobMetrics&) const = default;
};

struct MetricsReport {
  Seconds makespan_s = 0.0;
  Seconds avg_jct_s = 0.0;
  Seconds avg_wait_s = 0.0;
  Seconds avg_ext_frag_delay_s = 0.0;
  double utilization = 0.0;
  int reconfig_count = 0;
  // Summed external-fragmentation delay over makespan.
  double ext_frag_share = 0.0;
  std::vector<JobMetrics> per_job;

  bool operator==(const MetricsReport&) const = default;
};

// Formats a double so that parsing it back yields the same bits.
inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, ptr);
}

inline double parse_number(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw error("ParseError", "bad number '" + std::string(s) + "'");
  }
  return v;
}

// Every job needs arrival, start and finish; utilization integrates the
// compute slices held between start/resume and pause/finish.
inline MetricsReport compute_metrics(const EventLog& log) {
  struct Track {
    std::optional<Seconds> arrival, start, finish;
    Seconds frag = 0.0;
    std::optional<Seconds> frag_open;
    std::optional<Seconds> run_open;
    int slices = 0;
  };
  std::map<JobId, Track> jobs;
  int total_slices = 0;
  int reconfigs = 0;
  double busy_slice_seconds = 0.0;

  auto incomplete = [](const std::string& what) {
    throw error("IncompleteLog", what);
  };

  for (const auto& e : log) {
    if (e.event == "cluster") {
      total_slices = e.detail.at("gpus").get<int>() * mig::kComputeSlices;
      continue;
    }
    if (e.event == "reconfig_begin") {
      ++reconfigs;
      continue;
    }
    if (e.job_id < 0) continue;
    auto& tr = jobs[e.job_id];
    if (e.event == "arrival") {
      tr.arrival = e.t;
    } else if (e.event == "start" || e.event == "resume") {
      if (e.event == "start") tr.start = e.t;
      tr.run_open = e.t;
      tr.slices = e.detail.at("slices").get<int>();
    } else if (e.event == "pause" || e.event == "finish") {
      if (!tr.run_open) incomplete("job " + std::to_string(e.job_id) + " " + e.event + " while not running");
      busy_slice_seconds += (e.t - *tr.run_open) * tr.slices;
      tr.run_open.reset();
      if (e.event == "finish") tr.finish = e.t;
    } else if (e.event == "frag_begin") {
      tr.frag_open = e.t;
    } else if (e.event == "frag_end") {
      if (!tr.frag_open) incomplete("unmatched frag_end for job " + std::to_string(e.job_id));
      tr.frag += e.t - *tr.frag_open;
      tr.frag_open.reset();
    }
  }

  MetricsReport r;
  r.reconfig_count = reconfigs;
  if (jobs.empty()) return r;

  Seconds first_start = 0.0;
  Seconds last_finish = 0.0;
  bool first = true;
  double sum_jct = 0.0, sum_wait = 0.0, sum_frag = 0.0;
  for (const auto& [id, tr] : jobs) {
    if (!tr.arrival || !tr.start || !tr.finish) {
      incomplete("job " + std::to_string(id) + " lacks arrival/start/finish");
    }
    if (tr.frag_open || tr.run_open) {
      incomplete("job " + std::to_string(id) + " has an open interval");
    }
    if (first || *tr.start < first_start) first_start = *tr.start;
    if (first || *tr.finish > last_finish) last_finish = *tr.finish;
    first = false;
    JobMetrics jm{id, *tr.start - *tr.arrival, *tr.finish - *tr.start, tr.frag};
    sum_jct += jm.jct_s;
    sum_wait += jm.wait_s;
    sum_frag += jm.ext_frag_s;
    r.per_job.push_back(jm);
  }
  const double n = static_cast<double>(jobs.size());
  r.makespan_s = last_finish - first_start;
  r.avg_jct_s = sum_jct / n;
  r.avg_wait_s = sum_wait / n;
  r.avg_ext_frag_delay_s = sum_frag / n;
  if (r.makespan_s > 0.0) {
    if (total_slices == 0) incomplete("missing cluster event");
    r.utilization = std::clamp(
        busy_slice_seconds / (static_cast<double>(total_slices) * r.makespan_s),
        0.0, 1.0);
    r.ext_frag_share = sum_frag / r.makespan_s;
  }
  return r;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json per_job = nlohmann::ordered_json::array();
  for (const auto& j : r.per_job) {
    per_job.push_back({{"job_id", j.job_id},
                       {"wait_s", j.wait_s},
                       {"jct_s", j.jct_s},
                       {"ext_frag_s", j.ext_frag_s}});
  }
  return {{"makespan_s", r.makespan_s},
          {"avg_jct_s", r.avg_jct_s},
          {"avg_wait_s", r.avg_wait_s},
          {"avg_ext_frag_delay_s", r.avg_ext_frag_delay_s},
          {"ext_frag_share", r.ext_frag_share},
          {"utilization", r.utilization},
          {"reconfig_count", r.reconfig_count},
          {"per_job", per_job}};
}

// Throws if a metrics document is missing a field or has an out-of-range
// value.
inline void validate_metrics_json(const nlohmann::ordered_json& j) {
  for (const char* key : {"makespan_s", "avg_jct_s", "avg_wait_s",
                          "avg_ext_frag_delay_s", "ext_frag_share",
                          "utilization", "reconfig_count", "per_job"}) {
    if (!j.contains(key)) throw error("SchemaViolation", std::string("missing ") + key);
  }
  for (const char* key : {"makespan_s", "avg_jct_s", "avg_wait_s",
                          "avg_ext_frag_delay_s", "ext_frag_share"}) {
    if (!j.at(key).is_number() || j.at(key).get<double>() < 0.0) {
      throw error("SchemaViolation", std::string(key) + " must be a nonnegative number");
    }
  }
  const double u = j.at("utilization").get<double>();
  if (u < 0.0 || u > 1.0) throw error("SchemaViolation", "utilization outside [0,1]");
  if (!j.at("per_job").is_array()) throw error("SchemaViolation", "per_job must be an array");
}

inline const std::vector<std::string>& metrics_csv_columns() {
  static const std::vector<std::string> cols = {
      "makespan_s",  "avg_jct_s",        "avg_wait_s",  "avg_ext_frag_delay_s",
      "ext_frag_share", "utilization", "reconfig_count", "jobs"};
  return cols;
}

inline std::vector<std::string> metrics_csv_values(const MetricsReport& r) {
  return {format_number(r.makespan_s),
          format_number(r.avg_jct_s),
          format_number(r.avg_wait_s),
          format_number(r.avg_ext_frag_delay_s),
          format_number(r.ext_frag_share),
          format_number(r.utilization),
          std::to_string(r.reconfig_count),
          std::to_string(r.per_job.size())};
}

}  // namespace flexmig::sim
