#pragma once

#include "skjump/config.hpp"
#include "skjump/errors.hpp"
#include "skjump/experiment.hpp"
#include "skjump/integrate.hpp"
#include "skjump/model.hpp"
#include "skjump/noise.hpp"
#include "skjump/rng.hpp"
#include "skjump/stats.hpp"
