#pragma once

#include "stip/complexity.hpp"
#include "stip/metrics.hpp"
#include "stip/trainer.hpp"
