#include <gtest/gtest.h>

#include <map>

#include "flexmig/workload.hpp"

using namespace flexmig;
using namespace flexmig::workload;

namespace {

using Counts = std::map<std::pair<JobKind, int>, int>;

Counts count_shapes(const Trace& t) {
  Counts c;
  for (const auto& j : t.jobs) ++c[{j.kind, j.size}];
  return c;
}

// Job-count table, written out independently of the generator.
Counts table_counts(const std::string& size_mix, const std::string& type_mix, int mult) {
  const std::map<std::string, std::vector<int>> train = {
      {"small-dominant", {16, 8, 4, 2, 1}},
      {"balanced", {8, 8, 8, 4, 4}},
      {"large-dominant", {4, 4, 12, 8, 4}}};
  const std::map<std::string, std::vector<int>> infer = {
      {"small-dominant", {16, 8, 4}},
      {"balanced", {10, 10, 10}},
      {"large-dominant", {8, 8, 16}}};
  const std::vector<int> ts = {1, 2, 4, 6, 8}, is = {1, 2, 4};
  Counts c;
  if (type_mix != "inference-only") {
    for (std::size_t k = 0; k < ts.size(); ++k) {
      if (train.at(size_mix)[k] * mult > 0) c[{JobKind::train, ts[k]}] = train.at(size_mix)[k] * mult;
    }
  }
  if (type_mix != "train-only") {
    for (std::size_t k = 0; k < is.size(); ++k) {
      if (infer.at(size_mix)[k] * mult > 0) c[{JobKind::inference, is[k]}] = infer.at(size_mix)[k] * mult;
    }
  }
  return c;
}

TraceConfig config(const std::string& size_mix, const std::string& type_mix, int mult,
                   std::uint64_t seed) {
  TraceConfig c;
  c.size_mix = size_mix_from_string(size_mix);
  c.type_mix = type_mix_from_string(type_mix);
  c.job_multiplier = mult;
  c.seed = seed;
  return c;
}

int category_of(double d) {
  if (d < 1800.0) return 0;
  if (d < 3600.0) return 1;
  return 2;
}

}  // namespace

TEST(GenerateTrace, SmallDominantTrainOnly) {
  const auto t = generate_trace(config("small-dominant", "train-only", 1, 3));
  EXPECT_EQ(t.jobs.size(), 31u);
  const auto c = count_shapes(t);
  EXPECT_EQ(c.at({JobKind::train, 1}), 16);
  EXPECT_EQ(c.at({JobKind::train, 2}), 8);
  EXPECT_EQ(c.at({JobKind::train, 4}), 4);
  EXPECT_EQ(c.at({JobKind::train, 6}), 2);
  EXPECT_EQ(c.at({JobKind::train, 8}), 1);
}

TEST(GenerateTrace, BalancedMixedDoubled) {
  const auto t = generate_trace(config("balanced", "mixed-50-50", 2, 1));
  int train = 0, infer = 0;
  for (const auto& j : t.jobs) (j.kind == JobKind::train ? train : infer)++;
  EXPECT_EQ(train, 64);
  EXPECT_EQ(infer, 60);
  EXPECT_EQ(count_shapes(t), table_counts("balanced", "mixed-50-50", 2));
}

TEST(GenerateTrace, CountsMatchTableForEveryConfig) {
  for (const auto* sm : {"small-dominant", "balanced", "large-dominant"}) {
    for (const auto* tm : {"train-only", "inference-only", "mixed-50-50"}) {
      for (int mult : {0, 1, 2, 3}) {
        for (std::uint64_t seed : {0u, 9u}) {
          const auto t = generate_trace(config(sm, tm, mult, seed));
          EXPECT_EQ(count_shapes(t), table_counts(sm, tm, mult)) << sm << " " << tm << " x" << mult;
        }
      }
    }
  }
}

TEST(GenerateTrace, DurationsWithinBoundsAndQuotasExact) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto cfg = config("large-dominant", "mixed-50-50", 2, seed);
    cfg.duration_source = "alibaba";
    cfg.duration_proportions["alibaba"] = {0.25, 0.45, 0.30};
    const auto t = generate_trace(cfg);
    const int n = static_cast<int>(t.jobs.size());
    std::array<int, 3> seen{};
    for (const auto& j : t.jobs) {
      EXPECT_GE(j.base_duration_s, 600.0);
      EXPECT_LE(j.base_duration_s, 7200.0);
      ++seen[category_of(j.base_duration_s)];
    }
    // Largest-remainder quotas; the 64/60 job trace has n = 128.
    const std::array<double, 3> frac = {0.25, 0.45, 0.30};
    int total = 0;
    for (int k = 0; k < 3; ++k) {
      EXPECT_LE(std::abs(seen[k] - frac[k] * n), 1.0) << "category " << k;
      total += seen[k];
    }
    EXPECT_EQ(total, n);
  }
}

TEST(GenerateTrace, QuotaCountsSumExactly) {
  EXPECT_EQ(category_quotas({0.5, 0.3, 0.2}, 31), (std::array<int, 3>{16, 9, 6}));
  EXPECT_EQ(category_quotas({1.0, 0.0, 0.0}, 7), (std::array<int, 3>{7, 0, 0}));
  EXPECT_EQ(category_quotas({0.5, 0.3, 0.2}, 0), (std::array<int, 3>{0, 0, 0}));
}

TEST(GenerateTrace, DeterministicPerSeed) {
  const auto cfg = config("balanced", "mixed-50-50", 2, 42);
  EXPECT_EQ(serialize_trace(generate_trace(cfg)), serialize_trace(generate_trace(cfg)));
  auto other = cfg;
  other.seed = 43;
  EXPECT_NE(serialize_trace(generate_trace(cfg)), serialize_trace(generate_trace(other)));
}

TEST(GenerateTrace, SortedUniqueAndValid) {
  auto cfg = config("balanced", "mixed-50-50", 1, 5);
  cfg.arrival = {ArrivalModel::Kind::poisson, 0.02};
  const auto t = generate_trace(cfg);
  std::set<JobId> ids;
  for (std::size_t k = 0; k < t.jobs.size(); ++k) {
    EXPECT_NO_THROW(validate(t.jobs[k]));
    ids.insert(t.jobs[k].job_id);
    if (k > 0) EXPECT_LE(t.jobs[k - 1].arrival_s, t.jobs[k].arrival_s);
  }
  EXPECT_EQ(ids.size(), t.jobs.size());
  EXPECT_EQ(t.jobs.front().arrival_s, 0.0);
  EXPECT_GT(t.jobs.back().arrival_s, 0.0);
  EXPECT_EQ(parse_trace(serialize_trace(t)), t);
}

TEST(GenerateTrace, BatchArrivalsAtZero) {
  for (const auto& j : generate_trace(config("small-dominant", "train-only", 1, 0)).jobs) {
    EXPECT_EQ(j.arrival_s, 0.0);
  }
}

TEST(GenerateTrace, InvalidConfig) {
  auto neg = config("balanced", "train-only", -1, 0);
  EXPECT_THROW(generate_trace(neg), error);
  auto bad_source = config("balanced", "train-only", 1, 0);
  bad_source.duration_source = "saturn";
  EXPECT_THROW(generate_trace(bad_source), error);
  auto bad_mix = config("balanced", "train-only", 1, 0);
  bad_mix.duration_proportions["philly"] = {0.5, 0.5, 0.5};
  EXPECT_THROW(generate_trace(bad_mix), error);
  try {
    generate_trace(neg);
  } catch (const error& e) {
    EXPECT_EQ(e.code(), "InvalidConfig");
  }
}

TEST(RoundUpRequest, Examples) {
  EXPECT_EQ(round_up_request(3, 15).name, "4g.20gb");
  EXPECT_EQ(round_up_request(5, 25).name, "7g.40gb");
  EXPECT_EQ(round_up_request(2, 10).name, "2g.10gb");
  EXPECT_EQ(round_up_request(1, 5).name, "1g.5gb");
  EXPECT_EQ(round_up_request(1, 10).name, "1g.10gb");
  EXPECT_EQ(round_up_request(6, 30).name, "7g.40gb");
  EXPECT_EQ(round_up_request(8, 40).name, "7g.40gb");
}

TEST(RoundUpRequest, JobSizesMapToBaselineProfiles) {
  const std::map<int, std::string> want = {
      {1, "1g.5gb"}, {2, "2g.10gb"}, {4, "4g.20gb"}, {6, "7g.40gb"}, {8, "7g.40gb"}};
  for (const auto& [size, name] : want) {
    Job j;
    j.size = size;
    EXPECT_EQ(request_profile(j).name, name) << size;
  }
}

TEST(RoundUpRequest, Minimality) {
  for (int size = 1; size <= 7; ++size) {
    for (int mem = 1; mem <= 40; ++mem) {
      const auto& p = round_up_request(size, mem);
      EXPECT_GE(p.compute_slices, size);
      EXPECT_GE(p.memory_gb, mem);
      for (const auto& q : mig::profile_catalog()) {
        if (q.name == "3g.20gb") continue;
        if (q.compute_slices >= size && q.memory_gb >= mem) {
          EXPECT_LE(p.compute_slices, q.compute_slices);
        }
      }
    }
  }
}

TEST(RoundUpRequest, Unsatisfiable) {
  for (auto [s, m] : std::vector<std::pair<int, int>>{{1, 45}, {9, 40}, {0, 5}, {2, 0}}) {
    try {
      round_up_request(s, m);
      ADD_FAILURE() << s << "," << m;
    } catch (const error& e) {
      EXPECT_EQ(e.code(), "Unsatisfiable");
    }
  }
}

TEST(TraceFiles, RoundTrip) {
  const auto t = generate_trace(config("large-dominant", "mixed-50-50", 1, 77));
  const auto text = serialize_trace(t);
  EXPECT_EQ(parse_trace(text), t);
  EXPECT_EQ(serialize_trace(parse_trace(text)), text);
}

TEST(TraceFiles, EmptyTrace) {
  Trace empty;
  EXPECT_EQ(serialize_trace(empty), "");
  EXPECT_EQ(parse_trace(""), empty);
}

TEST(TraceFiles, DuplicateIdIsParseError) {
  const std::string text =
      R"({"job_id":1,"kind":"train","size":2,"base_duration_s":900,"arrival_s":0,"model_tag":"a"})"
      "\n"
      R"({"job_id":1,"kind":"train","size":4,"base_duration_s":900,"arrival_s":5,"model_tag":"b"})"
      "\n";
  try {
    parse_trace(text);
    ADD_FAILURE();
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(TraceFiles, RejectsUnsortedAndInvalidRecords) {
  const std::string unsorted =
      R"({"job_id":1,"kind":"train","size":2,"base_duration_s":900,"arrival_s":10})"
      "\n"
      R"({"job_id":2,"kind":"train","size":2,"base_duration_s":900,"arrival_s":5})"
      "\n";
  EXPECT_THROW(parse_trace(unsorted), parse_error);
  const std::string bad_size =
      R"({"job_id":1,"kind":"inference","size":6,"base_duration_s":900,"arrival_s":0})";
  EXPECT_THROW(parse_trace(bad_size), parse_error);
  const std::string bad_duration =
      R"({"job_id":1,"kind":"train","size":1,"base_duration_s":100,"arrival_s":0})";
  EXPECT_THROW(parse_trace(bad_duration), parse_error);
  EXPECT_THROW(parse_trace("{not json"), parse_error);
}

TEST(TraceConfigJson, RoundTrip) {
  auto c = config("large-dominant", "inference-only", 3, 11);
  c.duration_source = "venus";
  c.arrival = {ArrivalModel::Kind::poisson, 0.5};
  EXPECT_EQ(trace_config_from_json(trace_config_to_json(c)), c);
  EXPECT_EQ(c.label(), "large-dominant/inference-only/venus");
}
