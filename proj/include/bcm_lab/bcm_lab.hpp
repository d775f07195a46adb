#pragma once

#include "bcm_lab/checkpoint.hpp"
#include "bcm_lab/csv.hpp"
#include "bcm_lab/inversion.hpp"
#include "bcm_lab/network.hpp"
#include "bcm_lab/oracle.hpp"
#include "bcm_lab/parameterization.hpp"
#include "bcm_lab/rng.hpp"
#include "bcm_lab/samplers.hpp"
#include "bcm_lab/schedules.hpp"
#include "bcm_lab/training.hpp"
