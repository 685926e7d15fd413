#pragma once

#include "dmp/benchmarks.hpp"
#include "dmp/data_model.hpp"
#include "dmp/dataio.hpp"
#include "dmp/distributions.hpp"
#include "dmp/error.hpp"
#include "dmp/evaluation.hpp"
#include "dmp/fit.hpp"
#include "dmp/forecast.hpp"
#include "dmp/models.hpp"
#include "dmp/reparam.hpp"
#include "dmp/sampler.hpp"
#include "dmp/synthgen.hpp"
