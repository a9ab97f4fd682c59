#pragma once

#include "asmloc/adam.hpp"
#include "asmloc/base_model.hpp"
#include "asmloc/checkpoint.hpp"
#include "asmloc/config.hpp"
#include "asmloc/dataset.hpp"
#include "asmloc/errors.hpp"
#include "asmloc/evaluation.hpp"
#include "asmloc/gradcheck.hpp"
#include "asmloc/ops.hpp"
#include "asmloc/pipeline.hpp"
#include "asmloc/proposals.hpp"
#include "asmloc/run.hpp"
#include "asmloc/segment_modeling.hpp"
#include "asmloc/tensor.hpp"
#include "asmloc/training.hpp"
