#pragma once

#include <algorithm>
#include <map>
#include <string>

#include "flexmig/error.hpp"
#include "flexmig/mig_model.hpp"
#include "flexmig/scheduler.hpp"
#include "flexmig/workload.hpp"
#include "json.hpp"

namespace flexmig::sim {

// Multiplier for uneven spreading of one job's leaves over GPUs.
// imbalance = max - min leaves per GPU.
struct PlacementPenalty {
  double slope = 0.03;
  double cap = 1.15;

  [[nodiscard]] double operator()(int imbalance) const {
    return std::min(cap, 1.0 + slope * std::max(imbalance, 0));
  }

  bool operator==(const PlacementPenalty&) const = default;
};

struct PerfModel {
  double speedup_1g10 = 0.8;     // size-1 job on 1g.10gb vs 1g.5gb
  double multi_overhead = 1.07;  // one-to-many synchronisation cost
  PlacementPenalty placement_penalty;
  double contention_factor = 1.06;  // while >= 2 jobs run on the host
  double net_transport_factor = 1.0;

  bool operator==(const PerfModel&) const = default;
};

inline void validate(const PerfModel& m) {
  auto bad = [](const std::string& what) {
    throw error("InvalidPerfModel", what);
  };
  if (!(m.speedup_1g10 > 0.0)) bad("speedup_1g10 must be positive");
  if (!(m.multi_overhead >= 1.0)) bad("multi_overhead must be >= 1");
  if (!(m.placement_penalty.slope >= 0.0)) bad("placement slope must be >= 0");
  if (!(m.placement_penalty.cap >= 1.0)) bad("placement cap must be >= 1");
  if (!(m.contention_factor >= 1.0)) bad("contention_factor must be >= 1");
  if (!(m.net_transport_factor >= 1.0)) bad("net_transport_factor must be >= 1");
}

inline int placement_imbalance(const sched::AllocationDecision& d) {
  std::map<int, int> per_gpu;
  for (int g = 0; g < d.host_gpus; ++g) per_gpu[g] = 0;
  for (const auto& ref : d.instances) ++per_gpu[ref.gpu_id];
  if (per_gpu.empty()) return 0;
  const auto [lo, hi] = std::minmax_element(
      per_gpu.begin(), per_gpu.end(),
      [](const auto& a, const auto& b) { return a.second < b.second; });
  return hi->second - lo->second;
}

// Uncontended run time of `job` on the instances of `decision`.
// Contention is applied by the engine, not here.
inline Seconds estimate_jct(const workload::Job& job,
                            const sched::AllocationDecision& d,
                            const PerfModel& m) {
  if (d.job_id != job.job_id || d.instances.empty() ||
      d.profiles.size() != d.instances.size()) {
    throw error("InvalidDecision",
                "decision does not describe job " + std::to_string(job.job_id));
  }
  if (d.instances.size() == 1) {
    const bool on_1g10 = d.profiles.front().name == "1g.10gb";
    return job.base_duration_s * (job.size == 1 && on_1g10 ? m.speedup_1g10 : 1.0);
  }
  if (static_cast<int>(d.instances.size()) != job.size) {
    throw error("InvalidDecision", "job " + std::to_string(job.job_id) +
                                       " of size " + std::to_string(job.size) +
                                       " spread over " +
                                       std::to_string(d.instances.size()) +
                                       " instances");
  }
  // Ranks progress at the pace of the slowest leaf, so mixing in 1g.10gb
  // leaves buys nothing.
  double f = m.multi_overhead * m.placement_penalty(placement_imbalance(d));
  if (d.transport == sched::TransportClass::net) f *= m.net_transport_factor;
  return job.base_duration_s * f;
}

inline void to_json(nlohmann::json& j, const PerfModel& m) {
  j = {{"speedup_1g10", m.speedup_1g10},
       {"multi_overhead", m.multi_overhead},
       {"placement_penalty",
        {{"slope", m.placement_penalty.slope}, {"cap", m.placement_penalty.cap}}},
       {"contention_factor", m.contention_factor},
       {"net_transport_factor", m.net_transport_factor}};
}

inline void from_json(const nlohmann::json& j, PerfModel& m) {
  m = PerfModel{};
  m.speedup_1g10 = j.value("speedup_1g10", m.speedup_1g10);
  m.multi_overhead = j.value("multi_overhead", m.multi_overhead);
  if (j.contains("placement_penalty")) {
    const auto& p = j.at("placement_penalty");
    m.placement_penalty.slope = p.value("slope", m.placement_penalty.slope);
    m.placement_penalty.cap = p.value("cap", m.placement_penalty.cap);
  }
  m.contention_factor = j.value("contention_factor", m.contention_factor);
  m.net_transport_factor = j.value("net_transport_factor", m.net_transport_factor);
  validate(m);
}

}  // namespace flexmig::sim

namespace flexmig::mig {

inline void to_json(nlohmann::json& j, const ReconfigCosts& c) {
  j = {{"reconfigure_s", c.reconfigure_s},
       {"checkpoint_save_s", c.checkpoint_save_s},
       {"checkpoint_load_s", c.checkpoint_load_s},
       {"pod_cycle_s", c.pod_cycle_s}};
}

inline void from_json(const nlohmann::json& j, ReconfigCosts& c) {
  c = ReconfigCosts{};
  c.reconfigure_s = j.value("reconfigure_s", c.reconfigure_s);
  c.checkpoint_save_s = j.value("checkpoint_save_s", c.checkpoint_save_s);
  c.checkpoint_load_s = j.value("checkpoint_load_s", c.checkpoint_load_s);
  c.pod_cycle_s = j.value("pod_cycle_s", c.pod_cycle_s);
  if (c.reconfigure_s < 0 || c.checkpoint_save_s < 0 ||
      c.checkpoint_load_s < 0 || c.pod_cycle_s < 0) {
    throw error("InvalidCosts", "reconfiguration costs must be nonnegative");
  }
}

}  // namespace flexmig::mig
