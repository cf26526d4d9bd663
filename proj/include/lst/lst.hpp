#pragma once

// Umbrella header for the core library.

#include "lst/checkpoint.hpp"
#include "lst/errors.hpp"
#include "lst/factored_layer.hpp"
#include "lst/linalg.hpp"
#include "lst/minibatch.hpp"
#include "lst/naive_layer.hpp"
#include "lst/sparse_linear.hpp"
#include "lst/stabilization.hpp"
#include "lst/step_result.hpp"
