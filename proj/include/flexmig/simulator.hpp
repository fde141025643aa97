#pragma once

// Event-driven replay of a trace on one host.
//
// At every event time the engine handles, in order: job completions,
// finished reconfigurations, arrivals, one scheduling step, and the
// external-fragmentation bookkeeping. Between events nothing changes, so
// each running job progresses linearly at rate 1, or 1/contention_factor
// while two or more jobs execute.

#include <algorithm>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "flexmig/error.hpp"
#include "flexmig/metrics.hpp"
#include "flexmig/mig_model.hpp"
#include "flexmig/perf_model.hpp"
#include "flexmig/scheduler.hpp"
#include "flexmig/workload.hpp"
#include "json.hpp"

namespace flexmig::sim {

using sched::Mode;

struct SimOptions {
  int num_gpus = 2;
  sched::QueuePolicy policy = sched::QueuePolicy::fifo();
  PerfModel model;
  mig::ReconfigCosts costs;
  bool isolate_ranks = false;
};

struct SimResult {
  MetricsReport report;
  EventLog log;
};

inline void validate_trace_for_mode(const workload::Trace& trace, Mode mode,
                                    int num_gpus) {
  auto bad = [](const std::string& what) {
    throw error("TraceInvalidForMode", what);
  };
  std::vector<JobId> ids;
  for (const auto& job : trace.jobs) {
    try {
      workload::validate(job);
    } catch (const error& e) {
      bad(e.what());
    }
    ids.push_back(job.job_id);
    if (mode == Mode::sm && job.size > 4) {
      bad("job " + std::to_string(job.job_id) + " has size " +
          std::to_string(job.size) + "; Static-MIG serves sizes up to 4");
    }
    if (mode == Mode::fm && job.size > mig::kComputeSlices * num_gpus) {
      bad("job " + std::to_string(job.job_id) + " needs more leaves than the host has");
    }
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    bad("duplicate job_id");
  }
}

namespace detail {

inline nlohmann::ordered_json decision_json(const sched::AllocationDecision& d) {
  nlohmann::ordered_json inst = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < d.instances.size(); ++k) {
    inst.push_back({{"gpu_id", d.instances[k].gpu_id},
                    {"instance_id", d.instances[k].instance_id},
                    {"profile", d.profiles[k].name}});
  }
  return {{"instances", inst},
          {"transport", sched::to_string(d.transport)},
          {"slices", d.slices()}};
}

inline nlohmann::ordered_json plan_json(const mig::ReconfigPlan& p) {
  nlohmann::json j = p;
  return nlohmann::ordered_json::parse(j.dump());
}

// Rounded request in compute slices for the one-to-one modes.
inline int request_slices(const workload::Job& job) {
  return workload::request_profile(job).compute_slices;
}

// True when the cluster as a whole has room for `job` but no single GPU
// can take it right now.
inline bool externally_fragmented(const sched::ClusterState& c,
                                  const workload::Job& job) {
  const int need = request_slices(job);
  int total = 0;
  bool hostable = false;
  if (c.mode == Mode::dm) {
    const auto& want = workload::request_profile(job);
    for (std::size_t g = 0; g < c.gpus.size(); ++g) {
      if (c.locked[g]) continue;
      int held = 0;
      for (const auto& i : c.gpus[g].instances) {
        if (!i.idle()) held += i.profile.compute_slices;
      }
      total += mig::kComputeSlices - held;
      if (sched::detail::drain_free_merge(c.gpus[g], want)) hostable = true;
    }
  } else if (c.mode == Mode::sm) {
    for (const auto& g : c.gpus) {
      for (const auto& i : g.instances) {
        if (!i.idle()) continue;
        total += i.profile.compute_slices;
        if (i.profile.compute_slices >= need) hostable = true;
      }
    }
  } else {
    return false;
  }
  return total >= need && !hostable;
}

}  // namespace detail

inline SimResult simulate(const workload::Trace& trace, Mode mode,
                          const SimOptions& opt) {
  validate(opt.model);
  if (opt.num_gpus < 1) throw error("InvalidConfig", "num_gpus must be >= 1");
  validate_trace_for_mode(trace, mode, opt.num_gpus);

  auto c = sched::make_cluster(mode, opt.num_gpus);
  c.isolate_ranks = opt.isolate_ranks;
  std::vector<workload::Job> arrivals = trace.jobs;
  std::stable_sort(arrivals.begin(), arrivals.end(),
                   [](const auto& a, const auto& b) {
                     return a.arrival_s != b.arrival_s ? a.arrival_s < b.arrival_s
                                                       : a.job_id < b.job_id;
                   });
  for (const auto& j : arrivals) c.jobs.emplace(j.job_id, j);

  struct Running {
    sched::AllocationDecision alloc;
    double remaining = 0.0;  // uncontended seconds of work left
    bool paused = false;
  };
  struct InFlight {
    Seconds done = 0.0;
    sched::ReconfigDecision r;
  };
  std::map<JobId, Running> running;
  std::vector<InFlight> reconfigs;
  std::map<JobId, Seconds> frag_open;

  SimResult out;
  auto& log = out.log;
  Seconds t = 0.0;
  auto emit = [&](std::string event, JobId id, nlohmann::ordered_json detail) {
    log.push_back({t, std::move(event), id, std::move(detail)});
  };
  emit("cluster", -1,
       {{"gpus", opt.num_gpus},
        {"mode", sched::to_string(mode)},
        {"policy", sched::to_string(opt.policy)},
        {"depth", opt.policy.examinable()}});

  auto start_job = [&](const sched::AllocationDecision& d) {
    const auto& job = c.job(d.job_id);
    running[d.job_id] = {d, estimate_jct(job, d, opt.model), false};
    emit("start", d.job_id, detail::decision_json(d));
  };

  std::size_t next_arrival = 0;
  while (true) {
    const auto executing = static_cast<int>(std::count_if(
        running.begin(), running.end(),
        [](const auto& kv) { return !kv.second.paused; }));
    const double rate = executing >= 2 ? 1.0 / opt.model.contention_factor : 1.0;

    double next = std::numeric_limits<double>::infinity();
    if (next_arrival < arrivals.size()) {
      next = std::max(t, arrivals[next_arrival].arrival_s);
    }
    for (const auto& f : reconfigs) next = std::min(next, f.done);
    std::map<JobId, double> finish_at;
    for (const auto& [id, r] : running) {
      if (r.paused) continue;
      finish_at[id] = t + r.remaining / rate;
      next = std::min(next, finish_at[id]);
    }
    if (next == std::numeric_limits<double>::infinity()) break;

    const double dt = next - t;
    for (auto& [id, r] : running) {
      if (!r.paused) r.remaining -= dt * rate;
    }
    t = next;
    c.clock_s = t;

    // Completions. Ties are broken by job id.
    for (const auto& [id, when] : finish_at) {
      if (when > t + 1e-9) continue;
      emit("finish", id, {{"slices", running[id].alloc.slices()}});
      sched::release(c, id);
      running.erase(id);
    }

    // Finished reconfigurations, oldest first.
    std::stable_sort(reconfigs.begin(), reconfigs.end(),
                     [](const auto& a, const auto& b) { return a.done < b.done; });
    while (!reconfigs.empty() && reconfigs.front().done <= t) {
      const auto f = reconfigs.front();
      reconfigs.erase(reconfigs.begin());
      emit("reconfig_complete", f.r.job_id, {{"gpu_id", f.r.plan.gpu_id}});
      for (auto& d : sched::complete_reconfig(c, f.r)) {
        auto it = running.find(d.job_id);
        if (it != running.end()) {
          it->second.alloc = d;
          it->second.paused = false;
          emit("resume", d.job_id, detail::decision_json(d));
        } else {
          start_job(d);
        }
      }
    }

    while (next_arrival < arrivals.size() &&
           arrivals[next_arrival].arrival_s <= t) {
      const auto& job = arrivals[next_arrival++];
      c.wait_queue.push_back(job.job_id);
      emit("arrival", job.job_id,
           {{"kind", workload::to_string(job.kind)}, {"size", job.size}});
    }

    std::vector<std::size_t> positions;
    {
      const std::deque<JobId> before = c.wait_queue;
      auto step = sched::schedule_step(c, opt.policy, opt.costs);
      if (!step.examined.empty()) {
        for (JobId id : step.examined) {
          positions.push_back(static_cast<std::size_t>(
              std::find(before.begin(), before.end(), id) - before.begin()));
        }
        emit("schedule", -1, {{"examined", step.examined}, {"positions", positions}});
      }
      for (auto& sel : step.decisions) {
        if (auto* a = std::get_if<sched::AllocationDecision>(&sel)) {
          emit("dispatch", a->job_id, {{"reconfig", false}});
          start_job(*a);
          continue;
        }
        const auto& r = std::get<sched::ReconfigDecision>(sel);
        emit("dispatch", r.job_id, {{"reconfig", true}});
        emit("reconfig_begin", r.job_id, detail::plan_json(r.plan));
        for (JobId d : r.plan.drained_jobs) {
          auto it = running.find(d);
          if (it == running.end()) continue;
          it->second.paused = true;
          emit("pause", d, {{"slices", it->second.alloc.slices()}});
        }
        reconfigs.push_back({t + r.plan.total_cost_s, r});
      }
    }

    // External fragmentation for the jobs a step could look at.
    std::vector<JobId> watch;
    const auto depth = static_cast<std::size_t>(std::max(opt.policy.examinable(), 0));
    for (std::size_t k = 0; k < c.wait_queue.size() && k < depth; ++k) {
      const JobId id = c.wait_queue[k];
      if (detail::externally_fragmented(c, c.job(id))) watch.push_back(id);
    }
    for (auto it = frag_open.begin(); it != frag_open.end();) {
      if (std::find(watch.begin(), watch.end(), it->first) == watch.end()) {
        emit("frag_end", it->first, nlohmann::ordered_json::object());
        it = frag_open.erase(it);
      } else {
        ++it;
      }
    }
    for (JobId id : watch) {
      if (frag_open.emplace(id, t).second) {
        emit("frag_begin", id, nlohmann::ordered_json::object());
      }
    }
  }

  if (!c.wait_queue.empty()) {
    throw error("Starvation", std::to_string(c.wait_queue.size()) +
                                  " jobs could never be placed");
  }
  out.report = compute_metrics(log);
  return out;
}

inline MetricsReport run_simulation(const workload::Trace& trace, Mode mode,
                                    const sched::QueuePolicy& policy,
                                    const PerfModel& model,
                                    const mig::ReconfigCosts& costs,
                                    int num_gpus = 2) {
  SimOptions opt;
  opt.num_gpus = num_gpus;
  opt.policy = policy;
  opt.model = model;
  opt.costs = costs;
  return simulate(trace, mode, opt).report;
}

}  // namespace flexmig::sim
