#pragma once

#include "kronid/common.hpp"
#include "kronid/dataset.hpp"
#include "kronid/hyperopt.hpp"
#include "kronid/io.hpp"
#include "kronid/kernel.hpp"
#include "kronid/likelihood.hpp"
#include "kronid/metrics.hpp"
#include "kronid/netgen.hpp"
#include "kronid/regressors.hpp"
