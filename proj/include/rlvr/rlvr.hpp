#pragma once

#include "rlvr/analysis.hpp"
#include "rlvr/config.hpp"
#include "rlvr/core_model.hpp"
#include "rlvr/errors.hpp"
#include "rlvr/experiments.hpp"
#include "rlvr/io.hpp"
#include "rlvr/parallel.hpp"
#include "rlvr/problem.hpp"
#include "rlvr/problems.hpp"
#include "rlvr/random.hpp"
#include "rlvr/rollout.hpp"
#include "rlvr/table.hpp"
#include "rlvr/training.hpp"
