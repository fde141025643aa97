#pragma once

// MIG profile catalog and the per-GPU slice tree.
//
// A GPU exposes 7 compute slices and 8 memory slices of 5 GB. Every profile
// can only start at a fixed set of slice offsets (the tree alignment), and
// compute and memory occupancy are tracked separately so that 1g.10gb can
// hold one compute slice and two memory slices.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flexmig/error.hpp"
#include "json.hpp"

namespace flexmig::mig {

inline constexpr int kComputeSlices = 7;
inline constexpr int kMemorySlices = 8;
inline constexpr int kMemorySliceGb = 5;

struct MigProfile {
  std::string name;
  int compute_slices = 0;
  int memory_gb = 0;
  int max_per_gpu = 0;

  [[nodiscard]] int memory_slices() const { return memory_gb / kMemorySliceGb; }

  bool operator==(const MigProfile&) const = default;
};

// Ascending compute slices, then memory.
inline const std::vector<MigProfile>& profile_catalog() {
  static const std::vector<MigProfile> catalog = {
      {"1g.5gb", 1, 5, 7},   {"1g.10gb", 1, 10, 4}, {"2g.10gb", 2, 10, 2},
      {"3g.20gb", 3, 20, 2}, {"4g.20gb", 4, 20, 1}, {"7g.40gb", 7, 40, 1},
  };
  return catalog;
}

inline const MigProfile& profile_by_name(std::string_view name) {
  for (const auto& p : profile_catalog()) {
    if (p.name == name) return p;
  }
  throw error("UnknownProfile", std::string(name));
}

inline bool in_catalog(const MigProfile& profile) {
  const auto& c = profile_catalog();
  return std::find(c.begin(), c.end(), profile) != c.end();
}

struct Placement {
  int start_slice = 0;
  int span_slices = 0;
  int memory_slices = 0;

  [[nodiscard]] int compute_end() const { return start_slice + span_slices; }
  [[nodiscard]] int memory_end() const { return start_slice + memory_slices; }

  [[nodiscard]] std::uint8_t compute_mask() const {
    return static_cast<std::uint8_t>(((1u << span_slices) - 1u) << start_slice);
  }
  [[nodiscard]] std::uint8_t memory_mask() const {
    return static_cast<std::uint8_t>(((1u << memory_slices) - 1u) << start_slice);
  }

  bool operator==(const Placement&) const = default;
};

namespace detail {

inline std::vector<int> legal_starts(std::string_view name) {
  if (name == "1g.5gb") return {0, 1, 2, 3, 4, 5, 6};
  if (name == "1g.10gb") return {0, 2, 4, 6};
  if (name == "2g.10gb") return {0, 2, 4};
  if (name == "3g.20gb") return {0, 4};
  if (name == "4g.20gb") return {0};
  if (name == "7g.40gb") return {0};
  return {};
}

}  // namespace detail

inline std::vector<Placement> legal_placements(const MigProfile& profile) {
  if (!in_catalog(profile)) throw error("UnknownProfile", profile.name);
  std::vector<Placement> out;
  for (int start : detail::legal_starts(profile.name)) {
    out.push_back({start, profile.compute_slices, profile.memory_slices()});
  }
  return out;
}

inline bool is_legal(const MigProfile& profile, const Placement& placement) {
  if (!in_catalog(profile)) return false;
  const auto legal = legal_placements(profile);
  return std::find(legal.begin(), legal.end(), placement) != legal.end();
}

enum class Occupancy { idle, busy, pending };

struct Instance {
  InstanceId instance_id = 0;
  MigProfile profile;
  Placement placement;
  Occupancy state = Occupancy::idle;
  JobId job_id = -1;  // meaningful only when busy or pending

  [[nodiscard]] bool idle() const { return state == Occupancy::idle; }

  bool operator==(const Instance&) const = default;
};

// Instances are kept ordered by (start_slice, instance_id) so that two
// layouts holding the same instances compare equal.
struct GpuLayout {
  int gpu_id = 0;
  std::vector<Instance> instances;

  [[nodiscard]] const Instance* find(InstanceId id) const {
    for (const auto& i : instances) {
      if (i.instance_id == id) return &i;
    }
    return nullptr;
  }
  Instance* find(InstanceId id) {
    return const_cast<Instance*>(std::as_const(*this).find(id));
  }

  [[nodiscard]] std::uint8_t compute_mask() const {
    std::uint8_t m = 0;
    for (const auto& i : instances) m |= i.placement.compute_mask();
    return m;
  }
  [[nodiscard]] std::uint8_t memory_mask() const {
    std::uint8_t m = 0;
    for (const auto& i : instances) m |= i.placement.memory_mask();
    return m;
  }

  [[nodiscard]] int count(const MigProfile& profile) const {
    return static_cast<int>(std::count_if(
        instances.begin(), instances.end(),
        [&](const Instance& i) { return i.profile == profile; }));
  }

  [[nodiscard]] std::vector<JobId> busy_jobs() const {
    std::vector<JobId> jobs;
    for (const auto& i : instances) {
      if (i.state == Occupancy::busy) jobs.push_back(i.job_id);
    }
    return jobs;
  }

  // Compute slices not held by a busy or pending instance.
  [[nodiscard]] int available_slices() const {
    int held = 0;
    for (const auto& i : instances) {
      if (!i.idle()) held += i.placement.span_slices;
    }
    return kComputeSlices - held;
  }

  bool operator==(const GpuLayout&) const = default;
};

struct InstanceRef {
  int gpu_id = 0;
  InstanceId instance_id = 0;

  bool operator==(const InstanceRef&) const = default;
  auto operator<=>(const InstanceRef&) const = default;
};

struct ProfilePlacement {
  MigProfile profile;
  Placement placement;

  bool operator==(const ProfilePlacement&) const = default;
};

inline bool fits(std::uint8_t compute_used, std::uint8_t memory_used,
                 const Placement& p) {
  return (compute_used & p.compute_mask()) == 0 &&
         (memory_used & p.memory_mask()) == 0;
}

inline void validate(const GpuLayout& layout) {
  std::uint8_t compute = 0;
  std::uint8_t memory = 0;
  for (const auto& i : layout.instances) {
    if (!is_legal(i.profile, i.placement)) {
      throw error("InvalidLayout", "illegal placement for " + i.profile.name);
    }
    if (!fits(compute, memory, i.placement)) {
      throw error("InvalidLayout", "overlapping instances on gpu " +
                                       std::to_string(layout.gpu_id));
    }
    compute |= i.placement.compute_mask();
    memory |= i.placement.memory_mask();
    if (layout.count(i.profile) > i.profile.max_per_gpu) {
      throw error("InvalidLayout", "too many " + i.profile.name);
    }
  }
}

// Lowest-start legal placement whose compute and memory slices are free.
// Also enforces the per-GPU instance cap of the profile.
inline std::optional<Placement> try_allocate(const GpuLayout& layout,
                                             const MigProfile& profile) {
  if (layout.count(profile) >= profile.max_per_gpu) return std::nullopt;
  const auto compute = layout.compute_mask();
  const auto memory = layout.memory_mask();
  for (const auto& p : legal_placements(profile)) {
    if (fits(compute, memory, p)) return p;
  }
  return std::nullopt;
}

inline InstanceId next_instance_id(const GpuLayout& layout) {
  InstanceId id = 0;
  while (layout.find(id) != nullptr) ++id;
  return id;
}

inline InstanceId create_instance(GpuLayout& layout, const MigProfile& profile,
                                  const Placement& placement,
                                  Occupancy state = Occupancy::idle,
                                  JobId job_id = -1) {
  if (!is_legal(profile, placement)) {
    throw error("InvalidPlacement", profile.name + " at slice " +
                                        std::to_string(placement.start_slice));
  }
  if (!fits(layout.compute_mask(), layout.memory_mask(), placement) ||
      layout.count(profile) >= profile.max_per_gpu) {
    throw error("NoFit", profile.name + " at slice " +
                             std::to_string(placement.start_slice));
  }
  const InstanceId id = next_instance_id(layout);
  auto pos = std::find_if(layout.instances.begin(), layout.instances.end(),
                          [&](const Instance& i) {
                            return i.placement.start_slice >
                                   placement.start_slice;
                          });
  layout.instances.insert(pos, Instance{id, profile, placement, state, job_id});
  return id;
}

inline void destroy_instance(GpuLayout& layout, InstanceId id) {
  auto it = std::find_if(layout.instances.begin(), layout.instances.end(),
                         [&](const Instance& i) { return i.instance_id == id; });
  if (it == layout.instances.end()) {
    throw error("UnknownInstance", std::to_string(id));
  }
  layout.instances.erase(it);
}

namespace detail {

inline std::vector<const Instance*> resolve_idle(
    const GpuLayout& layout, std::span<const InstanceRef> refs) {
  std::vector<const Instance*> out;
  for (const auto& r : refs) {
    if (r.gpu_id != layout.gpu_id) {
      throw error("CrossGpuSet", "instance " + std::to_string(r.instance_id) +
                                     " lives on gpu " +
                                     std::to_string(r.gpu_id));
    }
    const Instance* inst = layout.find(r.instance_id);
    if (inst == nullptr) {
      throw error("UnknownInstance", std::to_string(r.instance_id));
    }
    if (!inst->idle()) {
      throw error("InstanceBusy", std::to_string(r.instance_id));
    }
    out.push_back(inst);
  }
  return out;
}

}  // namespace detail

// Placement of `target` that can be formed purely out of the compute slices
// of the candidate instances once they are destroyed, if any.
inline std::optional<Placement> merge_placement(
    const GpuLayout& layout, std::span<const InstanceRef> candidates,
    const MigProfile& target) {
  const auto chosen = detail::resolve_idle(layout, candidates);
  std::uint8_t freed_compute = 0;
  int freed_memory_gb = 0;
  for (const Instance* i : chosen) {
    freed_compute |= i->placement.compute_mask();
    freed_memory_gb += i->profile.memory_gb;
  }
  if (freed_memory_gb < target.memory_gb) return std::nullopt;

  std::uint8_t rest_compute = 0;
  std::uint8_t rest_memory = 0;
  int rest_same_profile = 0;
  for (const auto& i : layout.instances) {
    if (std::find(chosen.begin(), chosen.end(), &i) != chosen.end()) continue;
    rest_compute |= i.placement.compute_mask();
    rest_memory |= i.placement.memory_mask();
    if (i.profile == target) ++rest_same_profile;
  }
  if (rest_same_profile >= target.max_per_gpu) return std::nullopt;

  for (const auto& p : legal_placements(target)) {
    const bool covered = (p.compute_mask() & ~freed_compute) == 0;
    if (covered && fits(rest_compute, rest_memory, p)) return p;
  }
  return std::nullopt;
}

inline bool mergeable(const GpuLayout& layout,
                      std::span<const InstanceRef> candidates,
                      const MigProfile& target) {
  return merge_placement(layout, candidates, target).has_value();
}

struct ReconfigCosts {
  Seconds reconfigure_s = 110.0;
  Seconds checkpoint_save_s = 5.0;
  Seconds checkpoint_load_s = 5.0;
  Seconds pod_cycle_s = 5.0;

  [[nodiscard]] Seconds total(std::size_t drained) const {
    return reconfigure_s +
           static_cast<double>(drained) *
               (checkpoint_save_s + checkpoint_load_s + pod_cycle_s);
  }

  bool operator==(const ReconfigCosts&) const = default;
};

// A drained job restarted on free slices of another GPU.
struct Relocation {
  JobId job_id = 0;
  int gpu_id = 0;
  ProfilePlacement spec;

  bool operator==(const Relocation&) const = default;
};

struct ReconfigPlan {
  int gpu_id = 0;
  std::vector<JobId> drained_jobs;
  std::vector<InstanceId> destroy;
  std::vector<ProfilePlacement> create;
  Seconds total_cost_s = 0.0;
  // false for a drain-free merge that only touches idle instances.
  bool full_drain = true;
  std::vector<Relocation> relocate;

  bool operator==(const ReconfigPlan&) const = default;
};

inline void validate_target(std::span<const ProfilePlacement> target) {
  std::uint8_t compute = 0;
  std::uint8_t memory = 0;
  for (const auto& t : target) {
    if (!is_legal(t.profile, t.placement)) {
      throw error("InvalidTarget", "illegal placement for " + t.profile.name);
    }
    if (!fits(compute, memory, t.placement)) {
      throw error("InvalidTarget", "overlapping target instances");
    }
    compute |= t.placement.compute_mask();
    memory |= t.placement.memory_mask();
    const auto same = std::count_if(target.begin(), target.end(),
                                    [&](const ProfilePlacement& o) {
                                      return o.profile == t.profile;
                                    });
    if (same > t.profile.max_per_gpu) {
      throw error("InvalidTarget", "too many " + t.profile.name);
    }
  }
}

// Full repartition: every current instance is destroyed and every busy one
// is drained first.
inline ReconfigPlan plan_reconfiguration(
    const GpuLayout& layout, std::span<const ProfilePlacement> target,
    const ReconfigCosts& costs) {
  validate_target(target);
  ReconfigPlan plan;
  plan.gpu_id = layout.gpu_id;
  plan.drained_jobs = layout.busy_jobs();
  for (const auto& i : layout.instances) plan.destroy.push_back(i.instance_id);
  plan.create.assign(target.begin(), target.end());
  plan.total_cost_s = costs.total(plan.drained_jobs.size());
  plan.full_drain = true;
  return plan;
}

// Drain-free partial repartition: destroys idle instances only and creates
// `create` in the space they (and any free slices) leave behind.
inline ReconfigPlan plan_merge(const GpuLayout& layout,
                               std::span<const InstanceRef> destroy,
                               const ProfilePlacement& create,
                               const ReconfigCosts& costs) {
  const auto chosen = detail::resolve_idle(layout, destroy);
  std::uint8_t compute = 0;
  std::uint8_t memory = 0;
  int same = 0;
  for (const auto& i : layout.instances) {
    if (std::find(chosen.begin(), chosen.end(), &i) != chosen.end()) continue;
    compute |= i.placement.compute_mask();
    memory |= i.placement.memory_mask();
    if (i.profile == create.profile) ++same;
  }
  if (!is_legal(create.profile, create.placement) ||
      !fits(compute, memory, create.placement) ||
      same >= create.profile.max_per_gpu) {
    throw error("InvalidTarget", "merge target does not fit");
  }
  ReconfigPlan plan;
  plan.gpu_id = layout.gpu_id;
  for (const Instance* i : chosen) plan.destroy.push_back(i->instance_id);
  plan.create = {create};
  plan.total_cost_s = costs.total(0);
  plan.full_drain = false;
  return plan;
}

// Packs `demands` onto an empty GPU. Returns one placement per demand in
// input order, or nullopt. Larger profiles are placed first; within a
// profile the lowest legal start wins.
inline std::optional<std::vector<Placement>> pack_profiles(
    std::span<const MigProfile> demands) {
  std::vector<std::size_t> order(demands.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    const auto& pa = demands[a];
    const auto& pb = demands[b];
    if (pa.compute_slices != pb.compute_slices)
      return pa.compute_slices > pb.compute_slices;
    return pa.memory_gb > pb.memory_gb;
  });

  std::vector<Placement> chosen(demands.size());
  std::vector<int> per_profile(profile_catalog().size(), 0);
  auto profile_index = [](const MigProfile& p) {
    const auto& c = profile_catalog();
    return static_cast<std::size_t>(std::find(c.begin(), c.end(), p) -
                                    c.begin());
  };

  auto solve = [&](auto&& self, std::size_t k, std::uint8_t compute,
                   std::uint8_t memory) -> bool {
    if (k == order.size()) return true;
    const auto& prof = demands[order[k]];
    const auto idx = profile_index(prof);
    if (idx >= per_profile.size()) return false;
    if (per_profile[idx] >= prof.max_per_gpu) return false;
    for (const auto& p : legal_placements(prof)) {
      if (!fits(compute, memory, p)) continue;
      // Identical profiles are interchangeable: keep their starts ascending.
      if (k > 0 && demands[order[k - 1]] == prof &&
          p.start_slice < chosen[order[k - 1]].start_slice)
        continue;
      chosen[order[k]] = p;
      ++per_profile[idx];
      if (self(self, k + 1, static_cast<std::uint8_t>(compute | p.compute_mask()),
               static_cast<std::uint8_t>(memory | p.memory_mask())))
        return true;
      --per_profile[idx];
    }
    return false;
  };

  if (!solve(solve, 0, 0, 0)) return std::nullopt;
  return chosen;
}

// Six 1g.5gb leaves plus one 1g.10gb leaf: all 7 compute slices and all
// 40 GB of memory in use.
inline GpuLayout flexmig_layout(int gpu_id) {
  GpuLayout layout{gpu_id, {}};
  const auto& small = profile_by_name("1g.5gb");
  const auto& large = profile_by_name("1g.10gb");
  for (int s = 0; s < 6; ++s) {
    create_instance(layout, small, {s, 1, 1});
  }
  create_instance(layout, large, {6, 1, 2});
  return layout;
}

// {4g.20gb, 2g.10gb, 1g.10gb}, fixed for a whole Static-MIG run.
inline GpuLayout static_mig_layout(int gpu_id) {
  GpuLayout layout{gpu_id, {}};
  create_instance(layout, profile_by_name("4g.20gb"), {0, 4, 4});
  create_instance(layout, profile_by_name("2g.10gb"), {4, 2, 2});
  create_instance(layout, profile_by_name("1g.10gb"), {6, 1, 2});
  return layout;
}

// ---------------------------------------------------------------------------
// JSON

inline std::string to_string(Occupancy o) {
  switch (o) {
    case Occupancy::idle: return "idle";
    case Occupancy::busy: return "busy";
    case Occupancy::pending: return "pending";
  }
  return "idle";
}

inline Occupancy occupancy_from_string(std::string_view s) {
  if (s == "idle") return Occupancy::idle;
  if (s == "busy") return Occupancy::busy;
  if (s == "pending") return Occupancy::pending;
  throw error("ParseError", "unknown occupancy '" + std::string(s) + "'");
}

inline void to_json(nlohmann::json& j, const MigProfile& p) {
  j = {{"name", p.name},
       {"compute_slices", p.compute_slices},
       {"memory_gb", p.memory_gb},
       {"max_per_gpu", p.max_per_gpu}};
}
inline void from_json(const nlohmann::json& j, MigProfile& p) {
  p = profile_by_name(j.at("name").get<std::string>());
}

inline void to_json(nlohmann::json& j, const Placement& p) {
  j = {{"start_slice", p.start_slice},
       {"span_slices", p.span_slices},
       {"memory_slices", p.memory_slices}};
}
inline void from_json(const nlohmann::json& j, Placement& p) {
  j.at("start_slice").get_to(p.start_slice);
  j.at("span_slices").get_to(p.span_slices);
  j.at("memory_slices").get_to(p.memory_slices);
}

inline void to_json(nlohmann::json& j, const Instance& i) {
  j = {{"instance_id", i.instance_id},
       {"profile", i.profile.name},
       {"placement", i.placement},
       {"state", to_string(i.state)}};
  if (!i.idle()) j["job_id"] = i.job_id;
}
inline void from_json(const nlohmann::json& j, Instance& i) {
  j.at("instance_id").get_to(i.instance_id);
  i.profile = profile_by_name(j.at("profile").get<std::string>());
  j.at("placement").get_to(i.placement);
  i.state = occupancy_from_string(j.at("state").get<std::string>());
  i.job_id = i.idle() ? -1 : j.at("job_id").get<JobId>();
}

inline void to_json(nlohmann::json& j, const GpuLayout& l) {
  j = {{"gpu_id", l.gpu_id}, {"instances", l.instances}};
}
inline void from_json(const nlohmann::json& j, GpuLayout& l) {
  j.at("gpu_id").get_to(l.gpu_id);
  j.at("instances").get_to(l.instances);
  validate(l);
}

inline void to_json(nlohmann::json& j, const ProfilePlacement& p) {
  j = {{"profile", p.profile.name}, {"placement", p.placement}};
}
inline void from_json(const nlohmann::json& j, ProfilePlacement& p) {
  p.profile = profile_by_name(j.at("profile").get<std::string>());
  j.at("placement").get_to(p.placement);
}

inline void to_json(nlohmann::json& j, const Relocation& r) {
  j = {{"job_id", r.job_id}, {"gpu_id", r.gpu_id}, {"spec", r.spec}};
}
inline void from_json(const nlohmann::json& j, Relocation& r) {
  j.at("job_id").get_to(r.job_id);
  j.at("gpu_id").get_to(r.gpu_id);
  j.at("spec").get_to(r.spec);
}

inline void to_json(nlohmann::json& j, const ReconfigPlan& p) {
  j = {{"gpu_id", p.gpu_id},           {"drained_jobs", p.drained_jobs},
       {"destroy", p.destroy},         {"create", p.create},
       {"total_cost_s", p.total_cost_s}, {"full_drain", p.full_drain},
       {"relocate", p.relocate}};
}
inline void from_json(const nlohmann::json& j, ReconfigPlan& p) {
  j.at("gpu_id").get_to(p.gpu_id);
  j.at("drained_jobs").get_to(p.drained_jobs);
  j.at("destroy").get_to(p.destroy);
  j.at("create").get_to(p.create);
  j.at("total_cost_s").get_to(p.total_cost_s);
  p.full_drain = j.value("full_drain", true);
  if (j.contains("relocate")) j.at("relocate").get_to(p.relocate);
}

inline void to_json(nlohmann::json& j, const InstanceRef& r) {
  j = {{"gpu_id", r.gpu_id}, {"instance_id", r.instance_id}};
}
inline void from_json(const nlohmann::json& j, InstanceRef& r) {
  j.at("gpu_id").get_to(r.gpu_id);
  j.at("instance_id").get_to(r.instance_id);
}

}  // namespace flexmig::mig
