#pragma once

#include "cordes/commands.hpp"
#include "cordes/conditions.hpp"
#include "cordes/config.hpp"
#include "cordes/decompose.hpp"
#include "cordes/expr.hpp"
#include "cordes/field.hpp"
#include "cordes/fixed_point.hpp"
#include "cordes/grid.hpp"
#include "cordes/gridio.hpp"
#include "cordes/linalg.hpp"
#include "cordes/linsolve.hpp"
#include "cordes/mollify.hpp"
#include "cordes/problems.hpp"
#include "cordes/rng.hpp"
#include "cordes/solver.hpp"
#include "cordes/stochastic.hpp"
