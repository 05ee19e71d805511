// Copyright Contributors to the volsplat project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "volsplat/core.hpp"
#include "volsplat/camera.hpp"
#include "volsplat/raster_io.hpp"
#include "volsplat/scene_io.hpp"
#include "volsplat/synthetic.hpp"
#include "volsplat/snapshot.hpp"
#include "volsplat/knn.hpp"
#include "volsplat/depth_fusion.hpp"
#include "volsplat/nn.hpp"
#include "volsplat/feature_volume.hpp"
#include "volsplat/gaussian_decoder.hpp"
#include "volsplat/ibr_color.hpp"
#include "volsplat/background.hpp"
#include "volsplat/rasterizer.hpp"
#include "volsplat/losses.hpp"
#include "volsplat/model.hpp"
#include "volsplat/pipeline.hpp"
#include "volsplat/finetune.hpp"
