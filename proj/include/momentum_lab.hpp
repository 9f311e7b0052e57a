#pragma once

#include "momentum_lab/adaptive.hpp"
#include "momentum_lab/harness.hpp"
#include "momentum_lab/linalg.hpp"
#include "momentum_lab/process.hpp"
#include "momentum_lab/random.hpp"
#include "momentum_lab/solvers.hpp"
#include "momentum_lab/theory.hpp"
#include "momentum_lab/verification.hpp"
