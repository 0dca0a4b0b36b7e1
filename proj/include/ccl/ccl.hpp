#pragma once

#include "ccl/augment.hpp"
#include "ccl/config.hpp"
#include "ccl/container.hpp"
#include "ccl/data.hpp"
#include "ccl/errors.hpp"
#include "ccl/gradcheck.hpp"
#include "ccl/losses.hpp"
#include "ccl/metrics.hpp"
#include "ccl/model.hpp"
#include "ccl/refurbish.hpp"
#include "ccl/rng.hpp"
#include "ccl/sink.hpp"
#include "ccl/tensor.hpp"
#include "ccl/trainer.hpp"
