#ifndef DRDTR_DRDTR_HPP_
#define DRDTR_DRDTR_HPP_

#include "drdtr/benchmark.hpp"
#include "drdtr/config.hpp"
#include "drdtr/core.hpp"
#include "drdtr/csv.hpp"
#include "drdtr/dataset.hpp"
#include "drdtr/forest.hpp"
#include "drdtr/learners.hpp"
#include "drdtr/linear.hpp"
#include "drdtr/nuisance.hpp"
#include "drdtr/policy.hpp"
#include "drdtr/policy_json.hpp"
#include "drdtr/rng.hpp"
#include "drdtr/scores.hpp"
#include "drdtr/simulate.hpp"
#include "drdtr/tree_search.hpp"

#endif  // DRDTR_DRDTR_HPP_
