#pragma once

// Approximate leave-one-out cross-validation for l2-regularized GLMs on
// approximately-low-rank data, with certified per-point error bounds via a
// randomized Nystrom sketch of the Hessian.

#include "lracv/bounds.hpp"
#include "lracv/data_io.hpp"
#include "lracv/dataset.hpp"
#include "lracv/errors.hpp"
#include "lracv/exact.hpp"
#include "lracv/glm.hpp"
#include "lracv/neumann.hpp"
#include "lracv/parallel.hpp"
#include "lracv/pipeline.hpp"
#include "lracv/report.hpp"
#include "lracv/rng.hpp"
#include "lracv/sketch.hpp"
#include "lracv/solver.hpp"
