#pragma once

// Umbrella header for the trex library: robust factor-model covariance
// estimation built on Tyler's M-estimator, Gaussian factor analysis and
// Tyler fixed-point baselines, synthetic benchmark scenarios, and robust
// subspace recovery.

#include "trex/csv.hpp"
#include "trex/errors.hpp"
#include "trex/estimators.hpp"
#include "trex/factor_model.hpp"
#include "trex/subspace.hpp"
#include "trex/synthetic.hpp"
