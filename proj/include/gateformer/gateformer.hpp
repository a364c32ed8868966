#pragma once

#include "gateformer/adam.hpp"
#include "gateformer/checkpoint.hpp"
#include "gateformer/config.hpp"
#include "gateformer/data.hpp"
#include "gateformer/error.hpp"
#include "gateformer/evaluation.hpp"
#include "gateformer/gradcheck.hpp"
#include "gateformer/model.hpp"
#include "gateformer/ops.hpp"
#include "gateformer/params.hpp"
#include "gateformer/revin.hpp"
#include "gateformer/rng.hpp"
#include "gateformer/run_config.hpp"
#include "gateformer/synthetic.hpp"
#include "gateformer/tape.hpp"
#include "gateformer/tensor.hpp"
#include "gateformer/training.hpp"
