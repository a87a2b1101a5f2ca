#pragma once

#include "zfmag/analysis.hpp"
#include "zfmag/config.hpp"
#include "zfmag/core.hpp"
#include "zfmag/fitstack.hpp"
#include "zfmag/format.hpp"
#include "zfmag/lineshape.hpp"
#include "zfmag/magnetostatics.hpp"
#include "zfmag/map_io.hpp"
#include "zfmag/pipeline.hpp"
#include "zfmag/random.hpp"
#include "zfmag/raster_io.hpp"
#include "zfmag/stack_io.hpp"
#include "zfmag/synth.hpp"
