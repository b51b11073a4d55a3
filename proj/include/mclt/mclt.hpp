#pragma once

#include "mclt/block_vem.hpp"
#include "mclt/covariance.hpp"
#include "mclt/io.hpp"
#include "mclt/model.hpp"
#include "mclt/quadrature.hpp"
#include "mclt/rng.hpp"
#include "mclt/selection.hpp"
#include "mclt/simulate.hpp"
#include "mclt/vem.hpp"
