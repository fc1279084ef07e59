#pragma once

#include "boxmil/array.hpp"
#include "boxmil/autodiff.hpp"
#include "boxmil/bags.hpp"
#include "boxmil/data.hpp"
#include "boxmil/geometry.hpp"
#include "boxmil/harness.hpp"
#include "boxmil/losses.hpp"
#include "boxmil/model.hpp"
#include "boxmil/smoothmax.hpp"
