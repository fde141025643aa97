#pragma once

// Mode-comparison sweeps: trace configs x seeds x modes, run on a small
// worker pool, written as a per-run CSV plus a ratio summary that can be
// recomputed from that CSV alone.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flexmig/error.hpp"
#include "flexmig/metrics.hpp"
#include "flexmig/perf_model.hpp"
#include "flexmig/scheduler.hpp"
#include "flexmig/simulator.hpp"
#include "flexmig/workload.hpp"
#include "json.hpp"

namespace flexmig::exp {

namespace fs = std::filesystem;
using sched::Mode;

// Process exit codes shared by every CLI command.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kInvalidInput = 2,
  kTraceInvalidForMode = 3,
  kPartialFailure = 4,
};

struct ExperimentSpec {
  std::vector<workload::TraceConfig> trace_configs;
  std::vector<Mode> modes;
  sched::QueuePolicy policy = sched::QueuePolicy::fifo();
  std::vector<std::uint64_t> seeds;
  sim::PerfModel perf_model;
  mig::ReconfigCosts costs;
  int num_gpus = 2;
  std::string output_dir = "out";
  int workers = 0;  // 0 = one per hardware thread
};

inline sched::QueuePolicy policy_from_json(const nlohmann::json& j) {
  const auto kind = j.is_string() ? j.get<std::string>() : j.at("kind").get<std::string>();
  if (kind == "fifo" || kind == "FIFO") return sched::QueuePolicy::fifo();
  if (kind == "backfill" || kind == "Backfill") {
    const int depth = j.is_object() ? j.value("depth", sched::kDefaultBackfillDepth)
                                    : sched::kDefaultBackfillDepth;
    if (depth < 1) throw error("InvalidConfig", "backfill depth must be >= 1");
    return sched::QueuePolicy::backfill(depth);
  }
  throw error("InvalidConfig", "unknown policy '" + kind + "'");
}

inline nlohmann::ordered_json policy_to_json(const sched::QueuePolicy& p) {
  if (p.kind == sched::QueuePolicy::Kind::fifo) return {{"kind", "fifo"}};
  return {{"kind", "backfill"}, {"depth", p.depth}};
}

inline void validate(const ExperimentSpec& s) {
  auto bad = [](const std::string& what) { throw error("InvalidConfig", what); };
  if (s.trace_configs.empty()) bad("trace_configs must be nonempty");
  if (s.modes.empty()) bad("modes must be nonempty");
  if (s.seeds.empty()) bad("seeds must be nonempty");
  if (s.num_gpus < 1) bad("num_gpus must be >= 1");
  std::set<std::string> labels;
  for (const auto& c : s.trace_configs) {
    workload::validate(c);
    if (!labels.insert(c.label()).second) bad("duplicate trace label " + c.label());
  }
  std::set<Mode> modes(s.modes.begin(), s.modes.end());
  if (modes.size() != s.modes.size()) bad("duplicate mode");
  std::set<std::uint64_t> seeds(s.seeds.begin(), s.seeds.end());
  if (seeds.size() != s.seeds.size()) bad("duplicate seed");
  sim::validate(s.perf_model);
}

inline ExperimentSpec spec_from_json(const nlohmann::json& j) {
  ExperimentSpec s;
  try {
    for (const auto& c : j.at("trace_configs")) {
      s.trace_configs.push_back(workload::trace_config_from_json(c));
    }
    for (const auto& m : j.at("modes")) {
      s.modes.push_back(sched::mode_from_string(m.get<std::string>()));
    }
    if (j.contains("policy")) s.policy = policy_from_json(j.at("policy"));
    s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("perf_model")) s.perf_model = j.at("perf_model").get<sim::PerfModel>();
    if (j.contains("costs")) s.costs = j.at("costs").get<mig::ReconfigCosts>();
    s.num_gpus = j.value("num_gpus", 2);
    s.output_dir = j.value("output_dir", s.output_dir);
    s.workers = j.value("workers", 0);
  } catch (const nlohmann::json::exception& e) {
    throw error("InvalidConfig", e.what());
  } catch (const error& e) {
    if (e.code() == "InvalidConfig") throw;
    throw error("InvalidConfig", e.what());
  }
  validate(s);
  return s;
}

// ---------------------------------------------------------------------------
// Files

// Writes via a sibling temp file and rename so readers never see a
// partial file.
inline void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw error("IoError", "cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw error("IoError", "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("IoError", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw error("SchemaViolation", "missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

// Fields never contain commas or quotes, so plain splitting suffices.
inline CsvTable parse_csv(std::string_view text) {
  CsvTable t;
  auto split = [](std::string_view line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      out.emplace_back(line.substr(pos, comma == std::string_view::npos
                                            ? std::string_view::npos
                                            : comma - pos));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    return out;
  };
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    auto line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() : end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split(line);
    if (first) {
      t.header = std::move(fields);
      first = false;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw error("SchemaViolation", "row has " + std::to_string(fields.size()) +
                                         " fields, header has " +
                                         std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (first) throw error("SchemaViolation", "empty CSV");
  return t;
}

inline std::string to_csv(const CsvTable& t) {
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      s += v[i];
    }
    return s + '\n';
  };
  std::string out = join(t.header);
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw error("SchemaViolation", "ragged CSV row");
    for (const auto& f : r) {
      if (f.find_first_of(",\n\"") != std::string::npos) {
        throw error("SchemaViolation", "field '" + f + "' needs quoting");
      }
    }
    out += join(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs

inline const std::vector<std::string>& run_key_columns() {
  static const std::vector<std::string> cols = {
      "trace", "size_mix", "type_mix", "duration_source", "job_multiplier",
      "seed",  "mode",     "policy",   "depth"};
  return cols;
}

inline std::vector<std::string> runs_header() {
  auto h = run_key_columns();
  const auto& m = sim::metrics_csv_columns();
  h.insert(h.end(), m.begin(), m.end());
  return h;
}

struct RunTask {
  std::size_t config_index = 0;
  std::uint64_t seed = 0;
  Mode mode = Mode::fm;
};

struct RunOutcome {
  RunTask task;
  std::optional<sim::MetricsReport> report;
  std::string failure;
};

struct SweepResult {
  CsvTable runs;
  CsvTable summary;
  std::vector<std::string> warnings;
  std::vector<std::string> failures;  // "trace,seed,mode,reason"
};

inline std::string file_stem(const std::string& label, std::uint64_t seed, Mode mode) {
  std::string s = label;
  std::replace(s.begin(), s.end(), '/', '_');
  return s + "_s" + std::to_string(seed) + "_" + sched::to_string(mode);
}

// ---------------------------------------------------------------------------
// Summary

struct RatioPair {
  Mode num;
  Mode den;
};

inline const std::vector<RatioPair>& ratio_pairs() {
  static const std::vector<RatioPair> pairs = {
      {Mode::fm, Mode::dm}, {Mode::fm, Mode::sm}, {Mode::dm, Mode::sm}};
  return pairs;
}

inline const std::vector<std::string>& ratio_metrics() {
  static const std::vector<std::string> m = {"makespan_s", "avg_jct_s", "avg_wait_s",
                                             "utilization", "ext_frag_share"};
  return m;
}

inline std::vector<std::string> summary_header() {
  return {"trace", "metric", "comparison", "n", "mean", "min", "max"};
}

// Per-seed ratios aggregated as mean/min/max, then absolute per-mode
// statistics. Only the runs CSV is consulted.
inline CsvTable summarize(const CsvTable& runs) {
  const auto c_trace = runs.column("trace");
  const auto c_seed = runs.column("seed");
  const auto c_mode = runs.column("mode");

  std::vector<std::string> traces;
  std::vector<Mode> modes_seen;
  // trace -> mode -> seed -> row
  std::map<std::string, std::map<Mode, std::map<std::string, const std::vector<std::string>*>>> by;
  for (const auto& r : runs.rows) {
    if (std::find(traces.begin(), traces.end(), r[c_trace]) == traces.end()) {
      traces.push_back(r[c_trace]);
    }
    const Mode m = sched::mode_from_string(r[c_mode]);
    if (std::find(modes_seen.begin(), modes_seen.end(), m) == modes_seen.end()) {
      modes_seen.push_back(m);
    }
    by[r[c_trace]][m][r[c_seed]] = &r;
  }
  std::sort(modes_seen.begin(), modes_seen.end());

  CsvTable out;
  out.header = summary_header();
  auto emit = [&](const std::string& trace, const std::string& metric,
                  const std::string& cmp, const std::vector<double>& v) {
    std::vector<std::string> row = {trace, metric, cmp, std::to_string(v.size())};
    if (v.empty()) {
      row.insert(row.end(), {"", "", ""});
    } else {
      double sum = 0.0;
      for (double x : v) sum += x;
      row.push_back(sim::format_number(sum / static_cast<double>(v.size())));
      row.push_back(sim::format_number(*std::min_element(v.begin(), v.end())));
      row.push_back(sim::format_number(*std::max_element(v.begin(), v.end())));
    }
    out.rows.push_back(std::move(row));
  };

  for (const auto& trace : traces) {
    const auto& modes = by[trace];
    for (const auto& pair : ratio_pairs()) {
      if (!modes.count(pair.num) || !modes.count(pair.den)) continue;
      const std::string cmp = sched::to_string(pair.num) + "/" + sched::to_string(pair.den);
      for (const auto& metric : ratio_metrics()) {
        const auto col = runs.column(metric);
        std::vector<double> ratios;
        for (const auto& [seed, num_row] : modes.at(pair.num)) {
          auto it = modes.at(pair.den).find(seed);
          if (it == modes.at(pair.den).end()) continue;
          const double den = sim::parse_number((*it->second)[col]);
          if (den == 0.0) continue;
          ratios.push_back(sim::parse_number((*num_row)[col]) / den);
        }
        emit(trace, metric, cmp, ratios);
      }
    }
    for (Mode m : modes_seen) {
      if (!modes.count(m)) continue;
      for (const auto& metric : sim::metrics_csv_columns()) {
        if (metric == "jobs") continue;
        const auto col = runs.column(metric);
        std::vector<double> v;
        for (const auto& [seed, row] : modes.at(m)) v.push_back(sim::parse_number((*row)[col]));
        emit(trace, metric, sched::to_string(m), v);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

inline SweepResult run_sweep(const ExperimentSpec& spec, bool write_files = true) {
  validate(spec);
  SweepResult result;

  std::vector<workload::Trace> traces;  // [config][seed]
  std::vector<RunTask> tasks;
  for (std::size_t ci = 0; ci < spec.trace_configs.size(); ++ci) {
    for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
      auto cfg = spec.trace_configs[ci];
      cfg.seed = spec.seeds[si];
      traces.push_back(workload::generate_trace(cfg));
      for (Mode m : spec.modes) {
        if (m == Mode::sm && traces.back().max_size() > 4) {
          if (si == 0) {
            result.warnings.push_back("skipping SM for " + cfg.label() +
                                      ": trace has jobs larger than size 4");
          }
          continue;
        }
        tasks.push_back({ci, spec.seeds[si], m});
      }
    }
  }
  auto trace_of = [&](const RunTask& t) -> const workload::Trace& {
    const auto si = static_cast<std::size_t>(
        std::find(spec.seeds.begin(), spec.seeds.end(), t.seed) - spec.seeds.begin());
    return traces[t.config_index * spec.seeds.size() + si];
  };

  sim::SimOptions opt;
  opt.num_gpus = spec.num_gpus;
  opt.policy = spec.policy;
  opt.model = spec.perf_model;
  opt.costs = spec.costs;

  const fs::path out_dir(spec.output_dir);
  std::vector<RunOutcome> outcomes(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      auto& o = outcomes[i];
      o.task = tasks[i];
      try {
        o.report = sim::simulate(trace_of(tasks[i]), tasks[i].mode, opt).report;
        if (write_files) {
          const auto doc = sim::to_json(*o.report);
          sim::validate_metrics_json(doc);
          const auto& label = spec.trace_configs[tasks[i].config_index].label();
          write_atomic(out_dir / "runs" / (file_stem(label, tasks[i].seed, tasks[i].mode) + ".json"),
                       doc.dump(2) + "\n");
        }
      } catch (const std::exception& e) {
        o.report.reset();
        o.failure = e.what();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const auto n_workers = std::min<std::size_t>(
      tasks.size(), spec.workers > 0 ? static_cast<std::size_t>(spec.workers) : hw);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  result.runs.header = runs_header();
  for (const auto& o : outcomes) {
    const auto& cfg = spec.trace_configs[o.task.config_index];
    std::vector<std::string> row = {cfg.label(),
                                    workload::to_string(cfg.size_mix),
                                    workload::to_string(cfg.type_mix),
                                    cfg.duration_source,
                                    std::to_string(cfg.job_multiplier),
                                    std::to_string(o.task.seed),
                                    sched::to_string(o.task.mode),
                                    sched::to_string(spec.policy),
                                    std::to_string(spec.policy.examinable())};
    if (!o.report) {
      std::string why = o.failure;
      std::replace(why.begin(), why.end(), ',', ';');
      std::replace(why.begin(), why.end(), '\n', ' ');
      result.failures.push_back(cfg.label() + "," + std::to_string(o.task.seed) + "," +
                                sched::to_string(o.task.mode) + "," + why);
      continue;
    }
    const auto values = sim::metrics_csv_values(*o.report);
    row.insert(row.end(), values.begin(), values.end());
    result.runs.rows.push_back(std::move(row));
  }

  // The summary is derived from the serialized runs so that `report`
  // reproduces it exactly.
  const auto runs_text = to_csv(result.runs);
  result.summary = summarize(parse_csv(runs_text));

  if (write_files) {
    write_atomic(out_dir / "runs.csv", runs_text);
    write_atomic(out_dir / "summary.csv", to_csv(result.summary));
    if (!result.failures.empty()) {
      std::string text = "trace,seed,mode,reason\n";
      for (const auto& f : result.failures) text += f + "\n";
      write_atomic(out_dir / "failures.csv", text);
    }
  }
  return result;
}

// Mean of the per-seed ratios for one (trace, metric, comparison) row.
inline std::optional<double> summary_mean(const CsvTable& summary, const std::string& trace,
                                          const std::string& metric, const std::string& cmp) {
  const auto ct = summary.column("trace"), cm = summary.column("metric"),
             cc = summary.column("comparison"), cmean = summary.column("mean");
  for (const auto& r : summary.rows) {
    if (r[ct] == trace && r[cm] == metric && r[cc] == cmp) {
      if (r[cmean].empty()) return std::nullopt;
      return sim::parse_number(r[cmean]);
    }
  }
  return std::nullopt;
}

}  // namespace flexmig::exp
