#pragma once

/// @file dtn.hpp Umbrella header for the dtn library.

#include "dtn/batching.hpp"
#include "dtn/dataset.hpp"
#include "dtn/error.hpp"
#include "dtn/mmd.hpp"
#include "dtn/model_io.hpp"
#include "dtn/nn.hpp"
#include "dtn/run.hpp"
#include "dtn/trainer.hpp"
