// flexmig: trace generation, single runs, sweeps, bootstrap checks and
// summary reports. Exit codes are listed in FORMATS.md.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "flexmig/flexmig.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace flexmig;

namespace {

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(exp::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw error("InvalidConfig", path + ": " + e.what());
  }
}

sched::QueuePolicy make_policy(const std::string& name, int depth) {
  if (name == "fifo") return sched::QueuePolicy::fifo();
  if (name == "backfill") {
    if (depth < 1) throw error("InvalidConfig", "--backfill-depth must be >= 1");
    return sched::QueuePolicy::backfill(depth);
  }
  throw error("InvalidConfig", "unknown policy '" + name + "'");
}

int cmd_gen_trace(const std::string& config_path, std::optional<std::uint64_t> seed,
                  const std::string& out) {
  auto cfg = workload::trace_config_from_json(read_json(config_path));
  if (seed) cfg.seed = *seed;
  const auto trace = workload::generate_trace(cfg);
  exp::write_atomic(out, workload::serialize_trace(trace));
  std::map<std::pair<std::string, int>, int> counts;
  for (const auto& j : trace.jobs) ++counts[{workload::to_string(j.kind), j.size}];
  std::cout << "wrote " << trace.jobs.size() << " jobs to " << out << "\n";
  for (const auto& [key, n] : counts) {
    std::cout << "  " << key.first << " size " << key.second << ": " << n << "\n";
  }
  return exp::kOk;
}

struct RunArgs {
  std::string trace;
  std::string mode = "FM";
  std::string policy = "fifo";
  int depth = sched::kDefaultBackfillDepth;
  std::string perf_model;
  std::string costs;
  int gpus = 2;
  bool isolate_ranks = false;
  std::string out = "run_out";
};

int cmd_run(const RunArgs& a) {
  workload::Trace trace;
  try {
    trace = workload::parse_trace(exp::read_file(a.trace));
  } catch (const parse_error& e) {
    throw error("InvalidConfig", a.trace + ":" + std::to_string(e.line()) + ": " + e.what());
  }
  sim::SimOptions opt;
  opt.num_gpus = a.gpus;
  opt.policy = make_policy(a.policy, a.depth);
  opt.isolate_ranks = a.isolate_ranks;
  try {
    if (!a.perf_model.empty()) opt.model = read_json(a.perf_model).get<sim::PerfModel>();
    if (!a.costs.empty()) opt.costs = read_json(a.costs).get<mig::ReconfigCosts>();
  } catch (const nlohmann::json::exception& e) {
    throw error("InvalidConfig", e.what());
  }
  const auto mode = sched::mode_from_string(a.mode);
  const auto result = sim::simulate(trace, mode, opt);

  const fs::path dir(a.out);
  const auto doc = sim::to_json(result.report);
  sim::validate_metrics_json(doc);
  exp::write_atomic(dir / "events.jsonl", sim::serialize_log(result.log));
  exp::write_atomic(dir / "metrics.json", doc.dump(2) + "\n");
  exp::CsvTable row;
  row.header = {"mode", "policy", "depth"};
  const auto& cols = sim::metrics_csv_columns();
  row.header.insert(row.header.end(), cols.begin(), cols.end());
  std::vector<std::string> values = {sched::to_string(mode), sched::to_string(opt.policy),
                                     std::to_string(opt.policy.examinable())};
  const auto m = sim::metrics_csv_values(result.report);
  values.insert(values.end(), m.begin(), m.end());
  row.rows.push_back(values);
  exp::write_atomic(dir / "metrics.csv", exp::to_csv(row));

  const auto& r = result.report;
  std::printf("%s %s: makespan %.1f s, avg JCT %.1f s, avg wait %.1f s, "
              "utilization %.3f, reconfigs %d, ext-frag share %.3f\n",
              sched::to_string(mode).c_str(), sched::to_string(opt.policy).c_str(),
              r.makespan_s, r.avg_jct_s, r.avg_wait_s, r.utilization, r.reconfig_count,
              r.ext_frag_share);
  return exp::kOk;
}

void print_summary(const exp::CsvTable& summary) {
  const auto ct = summary.column("trace"), cm = summary.column("metric"),
             cc = summary.column("comparison"), cmean = summary.column("mean"),
             cmin = summary.column("min"), cmax = summary.column("max");
  std::string last;
  for (const auto& r : summary.rows) {
    if (r[cc].find('/') == std::string::npos) continue;
    if (r[ct] != last) {
      std::printf("%s\n", r[ct].c_str());
      last = r[ct];
    }
    if (r[cmean].empty()) {
      std::printf("  %-6s %-15s      n/a\n", r[cc].c_str(), r[cm].c_str());
      continue;
    }
    std::printf("  %-6s %-15s mean %.3f  [%.3f, %.3f]\n", r[cc].c_str(), r[cm].c_str(),
                sim::parse_number(r[cmean]), sim::parse_number(r[cmin]),
                sim::parse_number(r[cmax]));
  }
}

int cmd_sweep(const std::string& spec_path, const std::string& out, int workers) {
  auto spec = exp::spec_from_json(read_json(spec_path));
  if (!out.empty()) spec.output_dir = out;
  if (workers > 0) spec.workers = workers;
  const auto result = exp::run_sweep(spec);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << result.runs.rows.size() << " runs written to "
            << (fs::path(spec.output_dir) / "runs.csv").string() << "\n";
  print_summary(result.summary);
  if (!result.failures.empty()) {
    std::cerr << result.failures.size() << " runs failed:\n";
    for (const auto& f : result.failures) std::cerr << "  " << f << "\n";
    return exp::kPartialFailure;
  }
  return exp::kOk;
}

int cmd_bootstrap_check(const std::string& peers_path, bool legacy) {
  std::vector<comm::PeerInfo> peers;
  try {
    peers = comm::parse_peers(exp::read_file(peers_path));
  } catch (const parse_error& e) {
    throw error("InvalidConfig", peers_path + ":" + std::to_string(e.line()) + ": " + e.what());
  }
  const auto c = comm::discover_peers(peers, !legacy);
  nlohmann::json topo = c.topology;
  std::cout << "communicator: " << c.nranks << " ranks\n" << topo.dump(2) << "\n";
  for (std::size_t r = 1; r < c.peers.size(); ++r) {
    std::cout << "rank 0 <-> rank " << r << ": "
              << comm::to_string(comm::select_transport(c.peers[0], c.peers[r])) << "\n";
  }
  return exp::kOk;
}

int cmd_report(const std::string& runs_path, const std::string& out) {
  const auto summary = exp::summarize(exp::parse_csv(exp::read_file(runs_path)));
  if (!out.empty()) exp::write_atomic(out, exp::to_csv(summary));
  print_summary(summary);
  return exp::kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flex-MIG cluster simulator"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out;
  int workers = 0;

  auto* gen = app.add_subcommand("gen-trace", "generate a synthetic trace");
  std::string config_path;
  gen->add_option("config", config_path, "trace config JSON")->required();
  gen->add_option("--seed", seed, "override the config seed");
  gen->add_option("--out", out, "output trace file")->required();

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "replay one trace under one mode");
  run->add_option("trace", run_args.trace, "trace JSON-lines file")->required();
  run->add_option("--mode", run_args.mode, "FM, DM or SM")->capture_default_str();
  run->add_option("--policy", run_args.policy, "fifo or backfill")->capture_default_str();
  run->add_option("--backfill-depth", run_args.depth, "backfill window")->capture_default_str();
  run->add_option("--perf-model", run_args.perf_model, "perf model JSON");
  run->add_option("--costs", run_args.costs, "reconfiguration cost JSON");
  run->add_option("--gpus", run_args.gpus, "GPUs on the host")->capture_default_str();
  run->add_flag("--isolate-ranks", run_args.isolate_ranks,
                "give every rank its own host hash (forces NET)");
  run->add_option("--out", run_args.out, "output directory")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "run an experiment spec");
  std::string spec_path;
  sweep->add_option("spec", spec_path, "experiment spec JSON")->required();
  sweep->add_option("--out", out, "override output_dir");
  sweep->add_option("--workers", workers, "worker threads");

  auto* boot = app.add_subcommand("bootstrap-check", "validate a peer file");
  std::string peers_path;
  bool legacy = false;
  boot->add_option("peers", peers_path, "peer JSON-lines file")->required();
  boot->add_flag("--legacy", legacy, "use the pre-MIG duplicate check");

  auto* report = app.add_subcommand("report", "recompute a summary from runs.csv");
  std::string runs_path;
  report->add_option("runs", runs_path, "runs.csv from a sweep")->required();
  report->add_option("--out", out, "write summary CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exp::kOk : exp::kInvalidInput;
  }

  try {
    if (*gen) return cmd_gen_trace(config_path, seed, out);
    if (*run) return cmd_run(run_args);
    if (*sweep) return cmd_sweep(spec_path, out, workers);
    if (*boot) return cmd_bootstrap_check(peers_path, legacy);
    if (*report) return cmd_report(runs_path, out);
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.code() == "TraceInvalidForMode") return exp::kTraceInvalidForMode;
    return e.code() == "IoError" || e.code() == "Starvation" ? exp::kFailure
                                                             : exp::kInvalidInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exp::kFailure;
  }
  return exp::kFailure;
}
