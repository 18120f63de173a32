#pragma once

#include "appnet/appblock.hpp"
#include "appnet/checkpoint.hpp"
#include "appnet/counters.hpp"
#include "appnet/data.hpp"
#include "appnet/geometry.hpp"
#include "appnet/layers.hpp"
#include "appnet/network.hpp"
#include "appnet/ops.hpp"
#include "appnet/optim.hpp"
#include "appnet/reference.hpp"
#include "appnet/rng.hpp"
#include "appnet/surface.hpp"
#include "appnet/tensor.hpp"
#include "appnet/tensor_ops.hpp"
#include "appnet/trainer.hpp"
