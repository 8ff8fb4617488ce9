#pragma once

#include "graphmc/common.hpp"
#include "graphmc/graph.hpp"
#include "graphmc/inference.hpp"
#include "graphmc/io.hpp"
#include "graphmc/metrics.hpp"
#include "graphmc/model.hpp"
#include "graphmc/synth.hpp"
