#pragma once

#include "pdc/error.hpp"
#include "pdc/model.hpp"
#include "pdc/solver.hpp"
#include "pdc/random.hpp"
#include "pdc/stats.hpp"
#include "pdc/parallel.hpp"
#include "pdc/data.hpp"
#include "pdc/prob.hpp"
#include "pdc/summary.hpp"
#include "pdc/smc.hpp"
#include "pdc/dc.hpp"
#include "pdc/ladder.hpp"
#include "pdc/harness.hpp"
#include "pdc/run_config.hpp"
