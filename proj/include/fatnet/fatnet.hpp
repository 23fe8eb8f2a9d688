#pragma once

// Everything in one include.

#include "fatnet/aggregation.hpp"
#include "fatnet/alignment.hpp"
#include "fatnet/autodiff.hpp"
#include "fatnet/checkpoint.hpp"
#include "fatnet/config.hpp"
#include "fatnet/data.hpp"
#include "fatnet/error.hpp"
#include "fatnet/experiments.hpp"
#include "fatnet/geometry.hpp"
#include "fatnet/gradcheck.hpp"
#include "fatnet/layers.hpp"
#include "fatnet/metrics.hpp"
#include "fatnet/model.hpp"
#include "fatnet/module.hpp"
#include "fatnet/optim.hpp"
#include "fatnet/random.hpp"
#include "fatnet/tensor.hpp"
#include "fatnet/train.hpp"
