#pragma once

// Allocation modes and queue policies.
//
//   FM  Flex-MIG: every GPU fixed to six 1g.5gb + one 1g.10gb leaves; a job
//       of size s runs across s leaves (one-to-many).
//   DM  Dynamic-MIG: one instance per job, repartitioned on demand.
//   SM  Static-MIG: every GPU fixed to {4g.20gb, 2g.10gb, 1g.10gb}.

#include <algorithm>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "flexmig/commsim.hpp"
#include "flexmig/error.hpp"
#include "flexmig/mig_model.hpp"
#include "flexmig/workload.hpp"

namespace flexmig::sched {

using mig::GpuLayout;
using mig::InstanceRef;
using mig::MigProfile;
using workload::Job;
using workload::JobKind;

enum class Mode { fm, dm, sm };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::fm: return "FM";
    case Mode::dm: return "DM";
    case Mode::sm: return "SM";
  }
  return "FM";
}

inline Mode mode_from_string(std::string_view s) {
  if (s == "FM" || s == "fm") return Mode::fm;
  if (s == "DM" || s == "dm") return Mode::dm;
  if (s == "SM" || s == "sm") return Mode::sm;
  throw error("InvalidMode", std::string(s));
}

inline constexpr int kDefaultBackfillDepth = 14;

struct QueuePolicy {
  enum class Kind { fifo, backfill } kind = Kind::fifo;
  int depth = kDefaultBackfillDepth;

  // Queue positions a single scheduling step may look at.
  [[nodiscard]] int examinable() const { return kind == Kind::fifo ? 1 : depth; }

  static QueuePolicy fifo() { return {Kind::fifo, 1}; }
  static QueuePolicy backfill(int depth = kDefaultBackfillDepth) {
    return {Kind::backfill, depth};
  }

  bool operator==(const QueuePolicy&) const = default;
};

inline std::string to_string(const QueuePolicy& p) {
  return p.kind == QueuePolicy::Kind::fifo ? "fifo" : "backfill";
}

struct ClusterState {
  std::vector<GpuLayout> gpus;
  Mode mode = Mode::fm;
  std::deque<JobId> wait_queue;
  Seconds clock_s = 0.0;

  std::map<JobId, Job> jobs;
  // GPUs in the middle of a full-drain repartition accept nothing.
  std::vector<bool> locked;
  // When set every rank looks like its own host (containers/VMs per
  // instance), which forces network transport.
  bool isolate_ranks = false;

  [[nodiscard]] const Job& job(JobId id) const {
    auto it = jobs.find(id);
    if (it == jobs.end()) throw error("UnknownJob", std::to_string(id));
    return it->second;
  }
};

inline ClusterState make_cluster(Mode mode, int num_gpus) {
  ClusterState c;
  c.mode = mode;
  for (int g = 0; g < num_gpus; ++g) {
    switch (mode) {
      case Mode::fm: c.gpus.push_back(mig::flexmig_layout(g)); break;
      case Mode::sm: c.gpus.push_back(mig::static_mig_layout(g)); break;
      case Mode::dm: c.gpus.push_back(GpuLayout{g, {}}); break;
    }
  }
  c.locked.assign(static_cast<std::size_t>(num_gpus), false);
  return c;
}

enum class TransportClass { shm, net, local };

inline std::string to_string(TransportClass t) {
  switch (t) {
    case TransportClass::shm: return "SHM";
    case TransportClass::net: return "NET";
    case TransportClass::local: return "LOCAL";
  }
  return "LOCAL";
}

struct NewInstance {
  int gpu_id = 0;
  mig::ProfilePlacement spec;

  bool operator==(const NewInstance&) const = default;
};

struct AllocationDecision {
  JobId job_id = 0;
  std::vector<InstanceRef> instances;
  std::vector<MigProfile> profiles;  // parallel to instances
  TransportClass transport = TransportClass::local;
  int host_gpus = 1;
  // Set when the instance has to be carved from free slices first (DM).
  std::optional<NewInstance> create;

  [[nodiscard]] int slices() const {
    int s = 0;
    for (const auto& p : profiles) s += p.compute_slices;
    return s;
  }

  bool operator==(const AllocationDecision&) const = default;
};

struct ReconfigDecision {
  JobId job_id = 0;
  mig::ReconfigPlan plan;
  // assignments[i] is the job that will run on plan.create[i].
  std::vector<JobId> assignments;

  bool operator==(const ReconfigDecision&) const = default;
};

struct Wait {
  bool operator==(const Wait&) const = default;
};

using Selection = std::variant<Wait, AllocationDecision, ReconfigDecision>;

inline bool is_wait(const Selection& s) {
  return std::holds_alternative<Wait>(s);
}

namespace detail {

inline std::vector<const mig::Instance*> idle_of(const GpuLayout& g,
                                                 const MigProfile& profile) {
  std::vector<const mig::Instance*> out;
  for (const auto& i : g.instances) {
    if (i.idle() && i.profile == profile) out.push_back(&i);
  }
  return out;
}

inline void require_mode(const ClusterState& c, Mode m) {
  if (c.mode != m) {
    throw error("WrongMode", "cluster is " + to_string(c.mode) + ", not " +
                                 to_string(m));
  }
}

inline std::string bus_id_for(int gpu_id) {
  static constexpr char hex[] = "0123456789ABCDEF";
  const int bus = 0x4B + gpu_id * 0x40;
  std::string s = "00:00:00.0";
  s[3] = hex[(bus >> 4) & 0xF];
  s[4] = hex[bus & 0xF];
  return s;
}

// Runs the communicator bootstrap over the chosen leaves and reports the
// transport ranks will use.
inline TransportClass bootstrap_transport(const ClusterState& c,
                                          const std::vector<InstanceRef>& refs) {
  if (refs.size() < 2) return TransportClass::local;
  std::vector<comm::PeerInfo> peers;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    comm::PeerInfo p;
    p.rank = static_cast<int>(r);
    p.pcie_bus_id = bus_id_for(refs[r].gpu_id);
    p.mig_id = "MIG-" + std::to_string(refs[r].gpu_id) + "-" +
               std::to_string(refs[r].instance_id);
    p.host_hash = c.isolate_ranks ? 1000 + r : 1;
    p.pid_hash = 1 + r;
    peers.push_back(std::move(p));
  }
  const auto comm = comm::discover_peers(peers, /*mig_aware=*/true);
  for (std::size_t r = 1; r < comm.peers.size(); ++r) {
    if (comm::select_transport(comm.peers[0], comm.peers[r]) ==
        comm::Transport::net)
      return TransportClass::net;
  }
  return TransportClass::shm;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Flex-MIG

inline Selection fm_select(const Job& job, const ClusterState& c) {
  detail::require_mode(c, Mode::fm);
  const auto& small = mig::profile_by_name("1g.5gb");
  const auto& large = mig::profile_by_name("1g.10gb");

  std::vector<std::vector<const mig::Instance*>> free5(c.gpus.size());
  std::vector<std::vector<const mig::Instance*>> free10(c.gpus.size());
  int total5 = 0;
  int total10 = 0;
  for (std::size_t g = 0; g < c.gpus.size(); ++g) {
    free5[g] = detail::idle_of(c.gpus[g], small);
    free10[g] = detail::idle_of(c.gpus[g], large);
    total5 += static_cast<int>(free5[g].size());
    total10 += static_cast<int>(free10[g].size());
  }
  if (total5 + total10 < job.size) return Wait{};

  AllocationDecision d;
  d.job_id = job.job_id;
  d.host_gpus = static_cast<int>(c.gpus.size());

  auto free_leaves = [&](std::size_t g) {
    return free5[g].size() + free10[g].size();
  };

  if (job.size == 1) {
    // 1g.10gb first; among GPUs prefer the one with the most idle leaves.
    auto& pool = total10 > 0 ? free10 : free5;
    std::size_t best = c.gpus.size();
    for (std::size_t g = 0; g < c.gpus.size(); ++g) {
      if (pool[g].empty()) continue;
      if (best == c.gpus.size() || free_leaves(g) > free_leaves(best)) best = g;
    }
    const auto* inst = pool[best].front();
    d.instances.push_back({c.gpus[best].gpu_id, inst->instance_id});
    d.profiles.push_back(inst->profile);
    d.transport = TransportClass::local;
    return d;
  }

  // Round-robin over GPUs, starting from the one with the most idle
  // 1g.5gb leaves. 1g.10gb leaves are only drawn once 1g.5gb supply
  // cannot cover the job.
  std::vector<std::size_t> order(c.gpus.size());
  for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return free5[a].size() > free5[b].size();
  });
  int large_quota = std::max(0, job.size - total5);
  std::vector<std::size_t> next5(c.gpus.size(), 0);
  std::vector<std::size_t> next10(c.gpus.size(), 0);
  int taken = 0;
  while (taken < job.size) {
    for (auto g : order) {
      if (taken == job.size) break;
      const mig::Instance* inst = nullptr;
      if (next5[g] < free5[g].size()) {
        inst = free5[g][next5[g]++];
      } else if (large_quota > 0 && next10[g] < free10[g].size()) {
        inst = free10[g][next10[g]++];
        --large_quota;
      }
      if (inst == nullptr) continue;
      d.instances.push_back({c.gpus[g].gpu_id, inst->instance_id});
      d.profiles.push_back(inst->profile);
      ++taken;
    }
  }
  d.transport = detail::bootstrap_transport(c, d.instances);
  return d;
}

// ---------------------------------------------------------------------------
// Static-MIG

inline Selection sm_select(const Job& job, const ClusterState& c) {
  detail::require_mode(c, Mode::sm);
  if (job.size > 4) {
    throw error("OversizedJob", "job " + std::to_string(job.job_id) +
                                    " has size " + std::to_string(job.size) +
                                    "; Static-MIG serves sizes up to 4");
  }
  const auto& want = workload::request_profile(job);

  auto pick = [&](const mig::Instance* inst, int gpu_id) {
    AllocationDecision d;
    d.job_id = job.job_id;
    d.instances.push_back({gpu_id, inst->instance_id});
    d.profiles.push_back(inst->profile);
    d.transport = TransportClass::local;
    d.host_gpus = static_cast<int>(c.gpus.size());
    return d;
  };

  for (const auto& g : c.gpus) {
    for (const auto& i : g.instances) {
      if (i.idle() && i.profile == want) return pick(&i, g.gpu_id);
    }
  }
  const mig::Instance* best = nullptr;
  int best_gpu = -1;
  auto larger = [](const MigProfile& a, const MigProfile& b) {
    return a.compute_slices != b.compute_slices
               ? a.compute_slices > b.compute_slices
               : a.memory_gb > b.memory_gb;
  };
  for (const auto& g : c.gpus) {
    for (const auto& i : g.instances) {
      if (!i.idle() || !larger(i.profile, want)) continue;
      if (best == nullptr || larger(best->profile, i.profile)) {
        best = &i;
        best_gpu = g.gpu_id;
      }
    }
  }
  if (best == nullptr) return Wait{};
  return pick(best, best_gpu);
}

// ---------------------------------------------------------------------------
// Dynamic-MIG

namespace detail {

// Best fit: fewest available slices left over, ties by lowest gpu_id.
inline bool better_fit(const GpuLayout& a, const GpuLayout& b) {
  const int ea = a.available_slices();
  const int eb = b.available_slices();
  return ea != eb ? ea < eb : a.gpu_id < b.gpu_id;
}

inline bool has_pending(const GpuLayout& g) {
  return std::any_of(g.instances.begin(), g.instances.end(),
                     [](const mig::Instance& i) {
                       return i.state == mig::Occupancy::pending;
                     });
}

struct MergeChoice {
  mig::Placement placement;
  std::vector<InstanceRef> destroy;
};

// A placement of `target` whose slices are all free or held by idle
// instances; prefers destroying fewer instances, then the lowest start.
inline std::optional<MergeChoice> drain_free_merge(const GpuLayout& g,
                                                   const MigProfile& target) {
  std::optional<MergeChoice> best;
  for (const auto& p : mig::legal_placements(target)) {
    bool blocked = false;
    MergeChoice choice{p, {}};
    int same_left = 0;
    for (const auto& i : g.instances) {
      const bool overlap =
          (i.placement.compute_mask() & p.compute_mask()) != 0 ||
          (i.placement.memory_mask() & p.memory_mask()) != 0;
      if (overlap) {
        if (!i.idle()) {
          blocked = true;
          break;
        }
        choice.destroy.push_back({g.gpu_id, i.instance_id});
      } else if (i.profile == target) {
        ++same_left;
      }
    }
    if (blocked || same_left >= target.max_per_gpu) continue;
    if (!best || choice.destroy.size() < best->destroy.size()) {
      best = std::move(choice);
    }
  }
  return best;
}

}  // namespace detail

// Tiers, each scanned over all GPUs before moving on:
//   1. an idle instance of exactly the requested profile, or free slices
//      where it can be created directly;
//   2. a drain-free merge of idle instances (and free slices);
//   3. a full drain and repartition, unless an inference job would be
//      drained;
//   4. wait.
inline Selection dm_select(const Job& job, const ClusterState& c,
                           const mig::ReconfigCosts& costs) {
  detail::require_mode(c, Mode::dm);
  const auto& want = workload::request_profile(job);

  auto usable = [&](std::size_t g) { return !c.locked[g]; };
  auto pick_gpu = [&](auto&& pred) -> std::optional<std::size_t> {
    std::optional<std::size_t> best;
    for (std::size_t g = 0; g < c.gpus.size(); ++g) {
      if (!usable(g) || !pred(g)) continue;
      if (!best || detail::better_fit(c.gpus[g], c.gpus[*best])) best = g;
    }
    return best;
  };

  AllocationDecision d;
  d.job_id = job.job_id;
  d.transport = TransportClass::local;
  d.host_gpus = static_cast<int>(c.gpus.size());

  if (auto g = pick_gpu([&](std::size_t i) {
        return !detail::idle_of(c.gpus[i], want).empty();
      })) {
    const auto* inst = detail::idle_of(c.gpus[*g], want).front();
    d.instances.push_back({c.gpus[*g].gpu_id, inst->instance_id});
    d.profiles.push_back(want);
    return d;
  }
  if (auto g = pick_gpu([&](std::size_t i) {
        return mig::try_allocate(c.gpus[i], want).has_value();
      })) {
    d.create = NewInstance{c.gpus[*g].gpu_id,
                           {want, *mig::try_allocate(c.gpus[*g], want)}};
    d.profiles.push_back(want);
    return d;
  }

  if (auto g = pick_gpu([&](std::size_t i) {
        return detail::drain_free_merge(c.gpus[i], want).has_value();
      })) {
    const auto merge = *detail::drain_free_merge(c.gpus[*g], want);
    ReconfigDecision r;
    r.job_id = job.job_id;
    r.plan = mig::plan_merge(c.gpus[*g], merge.destroy, {want, merge.placement},
                             costs);
    r.assignments = {job.job_id};
    return r;
  }

  // Full drain. The drained jobs keep their profiles; the largest ones are
  // repacked next to the new job and the rest restart on free slices of
  // other GPUs. The plan is only taken if every drained job has a home.
  std::vector<ReconfigDecision> plans(c.gpus.size());
  auto g = pick_gpu([&](std::size_t i) {
    const auto& layout = c.gpus[i];
    if (detail::has_pending(layout)) return false;
    std::vector<const mig::Instance*> busy;
    for (const auto& inst : layout.instances) {
      if (inst.state != mig::Occupancy::busy) continue;
      if (c.job(inst.job_id).kind == JobKind::inference) return false;
      busy.push_back(&inst);
    }
    if (busy.empty()) return false;
    std::stable_sort(busy.begin(), busy.end(), [](auto* a, auto* b) {
      return a->profile.compute_slices > b->profile.compute_slices;
    });

    std::vector<MigProfile> kept = {want};
    std::vector<JobId> owners = {job.job_id};
    std::vector<GpuLayout> others = c.gpus;
    std::vector<mig::Relocation> moves;
    for (const auto* inst : busy) {
      kept.push_back(inst->profile);
      if (mig::pack_profiles(kept)) {
        owners.push_back(inst->job_id);
        continue;
      }
      kept.pop_back();
      std::optional<std::size_t> home;
      for (std::size_t o = 0; o < others.size(); ++o) {
        if (o == i || c.locked[o] || !mig::try_allocate(others[o], inst->profile))
          continue;
        if (!home || detail::better_fit(others[o], others[*home])) home = o;
      }
      if (!home) return false;
      const auto spot = *mig::try_allocate(others[*home], inst->profile);
      mig::create_instance(others[*home], inst->profile, spot,
                           mig::Occupancy::pending, inst->job_id);
      moves.push_back({inst->job_id, others[*home].gpu_id, {inst->profile, spot}});
    }
    const auto packed = mig::pack_profiles(kept);
    std::vector<mig::ProfilePlacement> target;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      target.push_back({kept[k], (*packed)[k]});
    }
    auto& r = plans[i];
    r.job_id = job.job_id;
    r.plan = mig::plan_reconfiguration(layout, target, costs);
    r.plan.relocate = std::move(moves);
    r.assignments = std::move(owners);
    return true;
  });
  if (g) return plans[*g];
  return Wait{};
}

inline Selection select(const Job& job, const ClusterState& c,
                        const mig::ReconfigCosts& costs) {
  switch (c.mode) {
    case Mode::fm: return fm_select(job, c);
    case Mode::dm: return dm_select(job, c, costs);
    case Mode::sm: return sm_select(job, c);
  }
  return Wait{};
}

// ---------------------------------------------------------------------------
// Applying decisions

namespace detail {

inline GpuLayout& gpu(ClusterState& c, int gpu_id) {
  for (auto& g : c.gpus) {
    if (g.gpu_id == gpu_id) return g;
  }
  throw error("UnknownGpu", std::to_string(gpu_id));
}

}  // namespace detail

inline void apply(ClusterState& c, AllocationDecision& d) {
  if (d.create) {
    auto& g = detail::gpu(c, d.create->gpu_id);
    const auto id =
        mig::create_instance(g, d.create->spec.profile, d.create->spec.placement);
    d.instances = {{g.gpu_id, id}};
  }
  for (const auto& ref : d.instances) {
    auto* inst = detail::gpu(c, ref.gpu_id).find(ref.instance_id);
    if (inst == nullptr || !inst->idle()) {
      throw error("InvalidDecision", "instance " +
                                         std::to_string(ref.instance_id) +
                                         " on gpu " + std::to_string(ref.gpu_id) +
                                         " is not idle");
    }
    inst->state = mig::Occupancy::busy;
    inst->job_id = d.job_id;
  }
}

inline void apply(ClusterState& c, const ReconfigDecision& r) {
  auto& g = detail::gpu(c, r.plan.gpu_id);
  for (auto id : r.plan.destroy) mig::destroy_instance(g, id);
  for (std::size_t k = 0; k < r.plan.create.size(); ++k) {
    const auto& spec = r.plan.create[k];
    mig::create_instance(g, spec.profile, spec.placement,
                         mig::Occupancy::pending, r.assignments[k]);
  }
  for (const auto& m : r.plan.relocate) {
    mig::create_instance(detail::gpu(c, m.gpu_id), m.spec.profile,
                         m.spec.placement, mig::Occupancy::pending, m.job_id);
  }
  if (r.plan.full_drain) {
    for (std::size_t i = 0; i < c.gpus.size(); ++i) {
      if (c.gpus[i].gpu_id == g.gpu_id) c.locked[i] = true;
    }
  }
}

// Pending instances of `plan` become busy; returns the allocation each
// assigned job now holds.
inline std::vector<AllocationDecision> complete_reconfig(
    ClusterState& c, const ReconfigDecision& r) {
  auto& g = detail::gpu(c, r.plan.gpu_id);
  std::vector<std::pair<JobId, GpuLayout*>> homes;
  for (JobId job : r.assignments) homes.emplace_back(job, &g);
  for (const auto& m : r.plan.relocate) {
    homes.emplace_back(m.job_id, &detail::gpu(c, m.gpu_id));
  }
  std::vector<AllocationDecision> out;
  for (auto& [job, home] : homes) {
    for (auto& inst : home->instances) {
      if (inst.state == mig::Occupancy::pending && inst.job_id == job) {
        inst.state = mig::Occupancy::busy;
        AllocationDecision d;
        d.job_id = job;
        d.instances = {{home->gpu_id, inst.instance_id}};
        d.profiles = {inst.profile};
        d.transport = TransportClass::local;
        d.host_gpus = static_cast<int>(c.gpus.size());
        out.push_back(std::move(d));
      }
    }
  }
  if (r.plan.full_drain) {
    for (std::size_t i = 0; i < c.gpus.size(); ++i) {
      if (c.gpus[i].gpu_id == g.gpu_id) c.locked[i] = false;
    }
  }
  return out;
}

// Frees every instance held by `job`. FM and SM keep the instance as an
// idle leaf; DM gives its slices back so the next request is carved to fit.
inline void release(ClusterState& c, JobId job) {
  auto held = [job](const mig::Instance& i) {
    return i.state == mig::Occupancy::busy && i.job_id == job;
  };
  if (c.mode == Mode::dm) {
    for (auto& g : c.gpus) std::erase_if(g.instances, held);
    return;
  }
  for (auto& g : c.gpus) {
    for (auto& inst : g.instances) {
      if (inst.state == mig::Occupancy::busy && inst.job_id == job) {
        inst.state = mig::Occupancy::idle;
        inst.job_id = -1;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Queue policies

struct StepResult {
  std::vector<Selection> decisions;  // applied, never Wait
  std::vector<JobId> examined;       // in queue order
};

// FIFO keeps dispatching the head until it has to wait. Backfill scans the
// first `depth` queue entries once and dispatches every job that fits,
// without reserving anything for the ones it skips.
inline StepResult schedule_step(ClusterState& c, const QueuePolicy& policy,
                                const mig::ReconfigCosts& costs = {}) {
  StepResult out;
  auto dispatch = [&](JobId id) -> bool {
    auto sel = select(c.job(id), c, costs);
    if (is_wait(sel)) return false;
    if (auto* a = std::get_if<AllocationDecision>(&sel)) {
      apply(c, *a);
    } else {
      apply(c, std::get<ReconfigDecision>(sel));
    }
    out.decisions.push_back(std::move(sel));
    return true;
  };

  if (policy.kind == QueuePolicy::Kind::fifo) {
    while (!c.wait_queue.empty()) {
      const JobId head = c.wait_queue.front();
      out.examined.push_back(head);
      if (!dispatch(head)) break;
      c.wait_queue.pop_front();
    }
    return out;
  }

  const auto limit = std::min<std::size_t>(
      c.wait_queue.size(), static_cast<std::size_t>(std::max(policy.depth, 0)));
  std::vector<JobId> window(c.wait_queue.begin(),
                            c.wait_queue.begin() + static_cast<long>(limit));
  for (JobId id : window) {
    out.examined.push_back(id);
    if (dispatch(id)) {
      c.wait_queue.erase(
          std::find(c.wait_queue.begin(), c.wait_queue.end(), id));
    }
  }
  return out;
}

}  // namespace flexmig::sched
