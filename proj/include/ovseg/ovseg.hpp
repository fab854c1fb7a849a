// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// Umbrella header.

#pragma once

#include "ovseg/autograd.hpp"
#include "ovseg/checkpoint.hpp"
#include "ovseg/cmu.hpp"
#include "ovseg/config.hpp"
#include "ovseg/data/augment.hpp"
#include "ovseg/data/batches.hpp"
#include "ovseg/data/clouds.hpp"
#include "ovseg/data/sample.hpp"
#include "ovseg/data/toygen.hpp"
#include "ovseg/def_head.hpp"
#include "ovseg/encoders.hpp"
#include "ovseg/evaluation.hpp"
#include "ovseg/image_io.hpp"
#include "ovseg/manifest.hpp"
#include "ovseg/metrics.hpp"
#include "ovseg/model.hpp"
#include "ovseg/optim.hpp"
#include "ovseg/params.hpp"
#include "ovseg/rng.hpp"
#include "ovseg/tensor.hpp"
#include "ovseg/training.hpp"
#include "ovseg/vocab.hpp"
