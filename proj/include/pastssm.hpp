// Copyright 2026 The pastssm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "pastssm/aggregation.hpp"
#include "pastssm/autodiff/grad_check.hpp"
#include "pastssm/autodiff/histogram_ops.hpp"
#include "pastssm/autodiff/ops.hpp"
#include "pastssm/autodiff/optim.hpp"
#include "pastssm/autodiff/scan_op.hpp"
#include "pastssm/autodiff/tensor.hpp"
#include "pastssm/checkpoint.hpp"
#include "pastssm/dataset.hpp"
#include "pastssm/error.hpp"
#include "pastssm/events.hpp"
#include "pastssm/msg_loss.hpp"
#include "pastssm/numeric.hpp"
#include "pastssm/peas.hpp"
#include "pastssm/ssm/discretize.hpp"
#include "pastssm/ssm/model.hpp"
#include "pastssm/ssm/scan.hpp"
#include "pastssm/train/config.hpp"
#include "pastssm/train/pipeline.hpp"
#include "pastssm/train/trainer.hpp"
