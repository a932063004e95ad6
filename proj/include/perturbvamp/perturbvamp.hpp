#pragma once

#include "perturbvamp/cli.hpp"
#include "perturbvamp/denoiser.hpp"
#include "perturbvamp/harness.hpp"
#include "perturbvamp/metrics.hpp"
#include "perturbvamp/model.hpp"
#include "perturbvamp/solver.hpp"
#include "perturbvamp/types.hpp"
#include "perturbvamp/whitening.hpp"
