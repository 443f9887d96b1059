// Copyright 2026 The mvster Authors
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

#ifndef MVSTER_MVSTER_HPP
#define MVSTER_MVSTER_HPP

#include "mvster/cascade_pipeline.hpp"
#include "mvster/core_geometry.hpp"
#include "mvster/epipolar_transformer.hpp"
#include "mvster/errors.hpp"
#include "mvster/feature_pyramid.hpp"
#include "mvster/fusion_metrics.hpp"
#include "mvster/grid.hpp"
#include "mvster/io/camera_io.hpp"
#include "mvster/io/dataset.hpp"
#include "mvster/io/files.hpp"
#include "mvster/io/kv_config.hpp"
#include "mvster/io/manifest.hpp"
#include "mvster/io/pfm.hpp"
#include "mvster/io/ply.hpp"
#include "mvster/nn.hpp"
#include "mvster/ot_depth.hpp"
#include "mvster/parallel.hpp"
#include "mvster/regularizer.hpp"
#include "mvster/scene_synth.hpp"
#include "mvster/weight_bundle.hpp"

#endif  // MVSTER_MVSTER_HPP
