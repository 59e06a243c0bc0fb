#pragma once

/// \file posekit.hpp
/// \brief Convenience header pulling in every module.

#include "posekit/autograd.hpp"
#include "posekit/checkpoint.hpp"
#include "posekit/core_types.hpp"
#include "posekit/dataset.hpp"
#include "posekit/depth.hpp"
#include "posekit/distill.hpp"
#include "posekit/error.hpp"
#include "posekit/eval.hpp"
#include "posekit/model.hpp"
#include "posekit/nn.hpp"
#include "posekit/optim.hpp"
#include "posekit/overlay.hpp"
#include "posekit/parallel.hpp"
#include "posekit/pipeline.hpp"
#include "posekit/simcc.hpp"
#include "posekit/synthetic.hpp"
#include "posekit/tensor.hpp"
#include "posekit/train.hpp"
