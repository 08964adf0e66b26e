#pragma once

#include "deltaflux/controller.hpp"
#include "deltaflux/delta.hpp"
#include "deltaflux/dense.hpp"
#include "deltaflux/error.hpp"
#include "deltaflux/model.hpp"
#include "deltaflux/report.hpp"
#include "deltaflux/scheduler.hpp"
#include "deltaflux/tensor.hpp"
#include "deltaflux/tensor_io.hpp"
#include "deltaflux/video.hpp"
#include "deltaflux/weights.hpp"
