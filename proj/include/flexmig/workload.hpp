#pragma once

// Jobs, synthetic trace construction and the line-delimited JSON trace
// format.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "flexmig/error.hpp"
#include "flexmig/mig_model.hpp"
#include "flexmig/rng.hpp"
#include "json.hpp"

namespace flexmig::workload {

enum class JobKind { train, inference };

inline std::string to_string(JobKind k) {
  return k == JobKind::train ? "train" : "inference";
}

inline JobKind job_kind_from_string(std::string_view s) {
  if (s == "train") return JobKind::train;
  if (s == "inference") return JobKind::inference;
  throw error("InvalidJob", "unknown kind '" + std::string(s) + "'");
}

inline constexpr Seconds kMinDuration = 600.0;
inline constexpr Seconds kMaxDuration = 7200.0;
inline constexpr std::array<int, 5> kTrainSizes = {1, 2, 4, 6, 8};
inline constexpr std::array<int, 3> kInferenceSizes = {1, 2, 4};

struct Job {
  JobId job_id = 0;
  JobKind kind = JobKind::train;
  int size = 1;  // number of 1g units requested
  Seconds base_duration_s = kMinDuration;
  Seconds arrival_s = 0.0;
  std::string model_tag;

  bool operator==(const Job&) const = default;
};

inline void validate(const Job& job) {
  const bool size_ok =
      job.kind == JobKind::train
          ? std::find(kTrainSizes.begin(), kTrainSizes.end(), job.size) !=
                kTrainSizes.end()
          : std::find(kInferenceSizes.begin(), kInferenceSizes.end(),
                      job.size) != kInferenceSizes.end();
  if (!size_ok) {
    throw error("InvalidJob", "job " + std::to_string(job.job_id) +
                                  ": size " + std::to_string(job.size) +
                                  " not allowed for " + to_string(job.kind));
  }
  if (!(job.base_duration_s >= kMinDuration &&
        job.base_duration_s <= kMaxDuration)) {
    throw error("InvalidJob", "job " + std::to_string(job.job_id) +
                                  ": base duration out of [600, 7200]");
  }
  if (!(job.arrival_s >= 0.0) || !std::isfinite(job.arrival_s)) {
    throw error("InvalidJob",
                "job " + std::to_string(job.job_id) + ": bad arrival time");
  }
}

struct Trace {
  std::vector<Job> jobs;

  bool operator==(const Trace&) const = default;

  [[nodiscard]] int max_size() const {
    int m = 0;
    for (const auto& j : jobs) m = std::max(m, j.size);
    return m;
  }
};

// ---------------------------------------------------------------------------
// One-to-one request rounding

// Each size unit is one compute slice and 5 GB.
inline int memory_gb_for_size(int size) { return std::min(5 * size, 40); }

// Smallest one-to-one profile covering (size, memory_gb). 3g.20gb is not a
// request target: a 3-slice/15 GB demand lands on 4g.20gb, matching how
// baseline MIG deployments round sizes 1/2/4/6-8 onto 1g/2g/4g/7g.
inline const mig::MigProfile& round_up_request(int size, int memory_gb) {
  if (size < 1 || size > 8 || memory_gb <= 0 || memory_gb > 40) {
    throw error("Unsatisfiable", "size " + std::to_string(size) + ", " +
                                     std::to_string(memory_gb) + " GB");
  }
  if (size == 8) return mig::profile_by_name("7g.40gb");
  for (const auto& p : mig::profile_catalog()) {
    if (p.name == "3g.20gb") continue;
    if (p.compute_slices >= size && p.memory_gb >= memory_gb) return p;
  }
  throw error("Unsatisfiable", "size " + std::to_string(size));
}

inline const mig::MigProfile& request_profile(const Job& job) {
  return round_up_request(job.size, memory_gb_for_size(job.size));
}

// ---------------------------------------------------------------------------
// Trace configuration

enum class SizeMix { small_dominant, balanced, large_dominant };
enum class TypeMix { train_only, inference_only, mixed };

inline std::string to_string(SizeMix m) {
  switch (m) {
    case SizeMix::small_dominant: return "small-dominant";
    case SizeMix::balanced: return "balanced";
    case SizeMix::large_dominant: return "large-dominant";
  }
  return "balanced";
}

inline SizeMix size_mix_from_string(std::string_view s) {
  if (s == "small-dominant") return SizeMix::small_dominant;
  if (s == "balanced") return SizeMix::balanced;
  if (s == "large-dominant") return SizeMix::large_dominant;
  throw error("InvalidConfig", "unknown size_mix '" + std::string(s) + "'");
}

inline std::string to_string(TypeMix m) {
  switch (m) {
    case TypeMix::train_only: return "train-only";
    case TypeMix::inference_only: return "inference-only";
    case TypeMix::mixed: return "mixed-50-50";
  }
  return "train-only";
}

inline TypeMix type_mix_from_string(std::string_view s) {
  if (s == "train-only") return TypeMix::train_only;
  if (s == "inference-only") return TypeMix::inference_only;
  if (s == "mixed-50-50") return TypeMix::mixed;
  throw error("InvalidConfig", "unknown type_mix '" + std::string(s) + "'");
}

// Jobs per size, in kTrainSizes / kInferenceSizes order.
inline std::array<int, 5> train_counts(SizeMix m) {
  switch (m) {
    case SizeMix::small_dominant: return {16, 8, 4, 2, 1};
    case SizeMix::balanced: return {8, 8, 8, 4, 4};
    case SizeMix::large_dominant: return {4, 4, 12, 8, 4};
  }
  return {};
}

inline std::array<int, 3> inference_counts(SizeMix m) {
  switch (m) {
    case SizeMix::small_dominant: return {16, 8, 4};
    case SizeMix::balanced: return {10, 10, 10};
    case SizeMix::large_dominant: return {8, 8, 16};
  }
  return {};
}

// Fractions of short (600-1800 s), medium (1800-3600 s) and long
// (3600-7200 s) jobs.
struct DurationMix {
  double short_frac = 0.5;
  double medium_frac = 0.3;
  double long_frac = 0.2;

  bool operator==(const DurationMix&) const = default;
};

inline const std::array<std::string, 4>& duration_sources() {
  static const std::array<std::string, 4> names = {"earth", "venus", "philly",
                                                   "alibaba"};
  return names;
}

struct ArrivalModel {
  enum class Kind { batch, poisson } kind = Kind::batch;
  double rate_per_s = 0.0;

  bool operator==(const ArrivalModel&) const = default;
};

struct TraceConfig {
  SizeMix size_mix = SizeMix::balanced;
  TypeMix type_mix = TypeMix::train_only;
  std::string duration_source = "philly";
  // Overridable per source; the default split is a placeholder until
  // measured category shares are supplied.
  std::map<std::string, DurationMix> duration_proportions = {
      {"earth", {}}, {"venus", {}}, {"philly", {}}, {"alibaba", {}}};
  int job_multiplier = 1;
  std::uint64_t seed = 0;
  ArrivalModel arrival;

  bool operator==(const TraceConfig&) const = default;

  [[nodiscard]] std::string label() const {
    return to_string(size_mix) + "/" + to_string(type_mix) + "/" +
           duration_source;
  }
};

inline void validate(const TraceConfig& c) {
  if (c.job_multiplier < 0) {
    throw error("InvalidConfig", "job_multiplier must be nonnegative");
  }
  const auto it = c.duration_proportions.find(c.duration_source);
  if (it == c.duration_proportions.end()) {
    throw error("InvalidConfig",
                "unknown duration_source '" + c.duration_source + "'");
  }
  const auto& d = it->second;
  if (d.short_frac < 0 || d.medium_frac < 0 || d.long_frac < 0 ||
      std::abs(d.short_frac + d.medium_frac + d.long_frac - 1.0) > 1e-9) {
    throw error("InvalidConfig", "duration proportions for '" +
                                     c.duration_source +
                                     "' must be nonnegative and sum to 1");
  }
  if (c.arrival.kind == ArrivalModel::Kind::poisson &&
      !(c.arrival.rate_per_s > 0.0)) {
    throw error("InvalidConfig", "poisson arrival rate must be positive");
  }
}

// Category counts by largest remainder so that they sum to n exactly.
inline std::array<int, 3> category_quotas(const DurationMix& mix, int n) {
  const std::array<double, 3> frac = {mix.short_frac, mix.medium_frac,
                                      mix.long_frac};
  std::array<int, 3> counts{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = frac[i] * n;
    counts[i] = static_cast<int>(std::floor(exact + 1e-9));
    rem[i] = exact - counts[i];
    assigned += counts[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (rem[i] > rem[best] + 1e-12) best = i;
    }
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

namespace detail {

struct ModelSizes {
  std::string_view model;
  std::vector<int> train;
  std::vector<int> inference;
};

// Which models were run at which workload size.
inline const std::vector<ModelSizes>& model_table() {
  static const std::vector<ModelSizes> table = {
      {"ResNet-18", {1}, {1}},
      {"ResNet-34", {2}, {2}},
      {"ResNet-50", {4, 6}, {4}},
      {"ResNet-101", {8}, {}},
      {"MobileNetV3-Small", {1, 2}, {1, 2}},
      {"MobileNetV3-Large", {1, 2, 4, 6}, {1, 2, 4}},
      {"EfficientNet-B0", {1, 2, 4, 6}, {1, 2, 4}},
      {"EfficientNet-B2", {1, 2, 4, 6, 8}, {1, 2, 4}},
      {"DistilBERT", {1, 2, 4, 6}, {1, 2, 4}},
      {"BERT-Base", {1, 2, 4, 6}, {1, 2, 4}},
      {"T5-Small", {1, 2, 4, 6, 8}, {1, 2, 4}},
  };
  return table;
}

inline std::string pick_model(JobKind kind, int size, Rng& rng) {
  std::vector<std::string_view> options;
  for (const auto& m : model_table()) {
    const auto& sizes = kind == JobKind::train ? m.train : m.inference;
    if (std::find(sizes.begin(), sizes.end(), size) != sizes.end()) {
      options.push_back(m.model);
    }
  }
  return std::string(options[rng.below(options.size())]);
}

}  // namespace detail

inline Trace generate_trace(const TraceConfig& config) {
  validate(config);
  std::vector<std::pair<JobKind, int>> shapes;
  if (config.type_mix != TypeMix::inference_only) {
    const auto counts = train_counts(config.size_mix);
    for (std::size_t i = 0; i < kTrainSizes.size(); ++i) {
      for (int k = 0; k < counts[i] * config.job_multiplier; ++k) {
        shapes.emplace_back(JobKind::train, kTrainSizes[i]);
      }
    }
  }
  if (config.type_mix != TypeMix::train_only) {
    const auto counts = inference_counts(config.size_mix);
    for (std::size_t i = 0; i < kInferenceSizes.size(); ++i) {
      for (int k = 0; k < counts[i] * config.job_multiplier; ++k) {
        shapes.emplace_back(JobKind::inference, kInferenceSizes[i]);
      }
    }
  }

  Rng rng(config.seed);
  rng.shuffle(shapes);

  const int n = static_cast<int>(shapes.size());
  const auto quotas =
      category_quotas(config.duration_proportions.at(config.duration_source), n);
  std::vector<int> categories;
  for (int c = 0; c < 3; ++c) categories.insert(categories.end(), quotas[c], c);
  rng.shuffle(categories);

  static constexpr std::array<std::pair<double, double>, 3> bounds = {
      {{600.0, 1800.0}, {1800.0, 3600.0}, {3600.0, 7200.0}}};

  Trace trace;
  Seconds clock = 0.0;
  for (int i = 0; i < n; ++i) {
    Job job;
    job.job_id = i;
    job.kind = shapes[i].first;
    job.size = shapes[i].second;
    const auto [lo, hi] = bounds[categories[i]];
    job.base_duration_s = std::floor(rng.uniform(lo, hi));
    job.model_tag = detail::pick_model(job.kind, job.size, rng);
    if (config.arrival.kind == ArrivalModel::Kind::poisson) {
      if (i > 0) clock += std::round(rng.exponential(config.arrival.rate_per_s));
      job.arrival_s = clock;
    }
    trace.jobs.push_back(std::move(job));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Trace files: one JSON object per line.

inline nlohmann::ordered_json job_to_json(const Job& j) {
  return {{"job_id", j.job_id},
          {"kind", to_string(j.kind)},
          {"size", j.size},
          {"base_duration_s", j.base_duration_s},
          {"arrival_s", j.arrival_s},
          {"model_tag", j.model_tag}};
}

inline Job job_from_json(const nlohmann::json& r) {
  Job j;
  r.at("job_id").get_to(j.job_id);
  j.kind = job_kind_from_string(r.at("kind").get<std::string>());
  r.at("size").get_to(j.size);
  r.at("base_duration_s").get_to(j.base_duration_s);
  r.at("arrival_s").get_to(j.arrival_s);
  j.model_tag = r.value("model_tag", std::string{});
  return j;
}

inline std::string serialize_trace(const Trace& trace) {
  std::string out;
  for (const auto& j : trace.jobs) {
    out += job_to_json(j).dump();
    out += '\n';
  }
  return out;
}

inline Trace parse_trace(std::string_view text) {
  Trace trace;
  std::vector<JobId> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    const auto line = text.substr(
        pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() : end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    Job job;
    try {
      job = job_from_json(nlohmann::json::parse(line));
      validate(job);
    } catch (const error& e) {
      throw parse_error(line_no, e.what());
    } catch (const nlohmann::json::exception& e) {
      throw parse_error(line_no, e.what());
    }
    if (std::find(seen.begin(), seen.end(), job.job_id) != seen.end()) {
      throw parse_error(line_no,
                        "duplicate job_id " + std::to_string(job.job_id));
    }
    if (!trace.jobs.empty()) {
      const auto& prev = trace.jobs.back();
      if (job.arrival_s < prev.arrival_s ||
          (job.arrival_s == prev.arrival_s && job.job_id < prev.job_id)) {
        throw parse_error(line_no, "records not sorted by (arrival_s, job_id)");
      }
    }
    seen.push_back(job.job_id);
    trace.jobs.push_back(std::move(job));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Config files

inline TraceConfig trace_config_from_json(const nlohmann::json& j) {
  TraceConfig c;
  try {
    c.size_mix = size_mix_from_string(j.at("size_mix").get<std::string>());
    c.type_mix = type_mix_from_string(j.at("type_mix").get<std::string>());
    c.duration_source = j.value("duration_source", c.duration_source);
    if (j.contains("duration_proportions")) {
      for (const auto& [name, v] : j.at("duration_proportions").items()) {
        c.duration_proportions[name] =
            DurationMix{v.at(0).get<double>(), v.at(1).get<double>(),
                        v.at(2).get<double>()};
      }
    }
    c.job_multiplier = j.value("job_multiplier", 1);
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("arrival_model")) {
      const auto& a = j.at("arrival_model");
      const auto kind = a.is_string() ? a.get<std::string>()
                                      : a.at("kind").get<std::string>();
      if (kind == "batch") {
        c.arrival.kind = ArrivalModel::Kind::batch;
      } else if (kind == "poisson") {
        c.arrival.kind = ArrivalModel::Kind::poisson;
        c.arrival.rate_per_s = a.at("rate").get<double>();
      } else {
        throw error("InvalidConfig", "unknown arrival_model '" + kind + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw error("InvalidConfig", e.what());
  }
  validate(c);
  return c;
}

inline nlohmann::ordered_json trace_config_to_json(const TraceConfig& c) {
  nlohmann::ordered_json props = nlohmann::ordered_json::object();
  for (const auto& [name, d] : c.duration_proportions) {
    props[name] = {d.short_frac, d.medium_frac, d.long_frac};
  }
  nlohmann::ordered_json arrival = {
      {"kind", c.arrival.kind == ArrivalModel::Kind::batch ? "batch"
                                                           : "poisson"}};
  if (c.arrival.kind == ArrivalModel::Kind::poisson) {
    arrival["rate"] = c.arrival.rate_per_s;
  }
  return {{"size_mix", to_string(c.size_mix)},
          {"type_mix", to_string(c.type_mix)},
          {"duration_source", c.duration_source},
          {"duration_proportions", props},
          {"job_multiplier", c.job_multiplier},
          {"seed", c.seed},
          {"arrival_model", arrival}};
}

}  // namespace flexmig::workload
