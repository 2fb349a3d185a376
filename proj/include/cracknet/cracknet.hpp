#pragma once

#include "cracknet/errors.hpp"
#include "cracknet/rng.hpp"
#include "cracknet/tensor.hpp"
#include "cracknet/ops.hpp"
#include "cracknet/layers.hpp"
#include "cracknet/graph.hpp"
#include "cracknet/optim.hpp"
#include "cracknet/models.hpp"
#include "cracknet/image_io.hpp"
#include "cracknet/dataset.hpp"
#include "cracknet/augment.hpp"
#include "cracknet/synth.hpp"
#include "cracknet/checkpoint.hpp"
#include "cracknet/trainer.hpp"
