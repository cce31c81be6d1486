#pragma once

#include "srb/births.hpp"
#include "srb/chains.hpp"
#include "srb/csv.hpp"
#include "srb/data.hpp"
#include "srb/diagnostics.hpp"
#include "srb/error.hpp"
#include "srb/io.hpp"
#include "srb/likelihood.hpp"
#include "srb/model.hpp"
#include "srb/pipeline.hpp"
#include "srb/projection.hpp"
#include "srb/sampler.hpp"
#include "srb/stacking.hpp"
#include "srb/stats.hpp"
#include "srb/synth.hpp"
#include "srb/validation.hpp"
