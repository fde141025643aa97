#pragma once

#include "flexmig/commsim.hpp"
#include "flexmig/error.hpp"
#include "flexmig/experiment.hpp"
#include "flexmig/metrics.hpp"
#include "flexmig/mig_model.hpp"
#include "flexmig/perf_model.hpp"
#include "flexmig/rng.hpp"
#include "flexmig/scheduler.hpp"
#include "flexmig/simulator.hpp"
#include "flexmig/workload.hpp"
