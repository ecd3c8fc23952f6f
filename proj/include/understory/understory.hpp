// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "understory/analysis/hdbscan.hpp"
#include "understory/analysis/hsv.hpp"
#include "understory/analysis/lighting.hpp"
#include "understory/analysis/metrics.hpp"
#include "understory/analysis/stems.hpp"
#include "understory/error.hpp"
#include "understory/field.hpp"
#include "understory/geometry.hpp"
#include "understory/image.hpp"
#include "understory/math.hpp"
#include "understory/parallel.hpp"
#include "understory/point_cloud.hpp"
#include "understory/render.hpp"
#include "understory/scene_synth.hpp"
#include "understory/train.hpp"
