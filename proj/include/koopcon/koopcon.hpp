#pragma once

#include "koopcon/adam.hpp"
#include "koopcon/bytes.hpp"
#include "koopcon/condense.hpp"
#include "koopcon/config.hpp"
#include "koopcon/datasets.hpp"
#include "koopcon/error.hpp"
#include "koopcon/evalharness.hpp"
#include "koopcon/losses.hpp"
#include "koopcon/networks.hpp"
#include "koopcon/ops.hpp"
#include "koopcon/rng.hpp"
#include "koopcon/tensor.hpp"
