#pragma once

// Umbrella header.

#include "mega/camera.hpp"
#include "mega/codec.hpp"
#include "mega/color.hpp"
#include "mega/dataset.hpp"
#include "mega/deform.hpp"
#include "mega/errors.hpp"
#include "mega/fp16.hpp"
#include "mega/gaussian.hpp"
#include "mega/image.hpp"
#include "mega/losses.hpp"
#include "mega/metrics.hpp"
#include "mega/mlp.hpp"
#include "mega/optim.hpp"
#include "mega/parallel.hpp"
#include "mega/posenc.hpp"
#include "mega/quaternion.hpp"
#include "mega/render.hpp"
#include "mega/train.hpp"
