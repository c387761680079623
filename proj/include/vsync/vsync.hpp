#pragma once

#include "vsync/tensor.hpp"
#include "vsync/ops.hpp"
#include "vsync/losses.hpp"
#include "vsync/random.hpp"
#include "vsync/paramset.hpp"
#include "vsync/adam.hpp"
#include "vsync/runtime.hpp"
#include "vsync/image.hpp"
#include "vsync/flow.hpp"
#include "vsync/dataset.hpp"
#include "vsync/matchers.hpp"
#include "vsync/delay.hpp"
#include "vsync/eval.hpp"
#include "vsync/config.hpp"
