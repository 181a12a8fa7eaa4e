#pragma once

// Umbrella header pulling in the whole library.

#include "cpn/checkpoint.hpp"
#include "cpn/config.hpp"
#include "cpn/data.hpp"
#include "cpn/efd.hpp"
#include "cpn/errors.hpp"
#include "cpn/geometry.hpp"
#include "cpn/gradcheck.hpp"
#include "cpn/loss.hpp"
#include "cpn/metrics.hpp"
#include "cpn/model.hpp"
#include "cpn/nms.hpp"
#include "cpn/ops.hpp"
#include "cpn/refine.hpp"
#include "cpn/rng.hpp"
#include "cpn/serialize.hpp"
#include "cpn/tensor.hpp"
