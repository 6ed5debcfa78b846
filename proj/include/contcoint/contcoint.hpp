#pragma once

#include "contcoint/errors.hpp"
#include "contcoint/numerics.hpp"
#include "contcoint/factor_models.hpp"
#include "contcoint/pricing_system.hpp"
#include "contcoint/simulation.hpp"
#include "contcoint/coint_analysis.hpp"
#include "contcoint/forward_pricing.hpp"
#include "contcoint/hilbert_curves.hpp"
#include "contcoint/config.hpp"
