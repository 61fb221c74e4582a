#pragma once

#include "uavcr/autodiff.hpp"
#include "uavcr/checkpoint.hpp"
#include "uavcr/commands.hpp"
#include "uavcr/conflict.hpp"
#include "uavcr/dgn.hpp"
#include "uavcr/environment.hpp"
#include "uavcr/errors.hpp"
#include "uavcr/geo.hpp"
#include "uavcr/harness.hpp"
#include "uavcr/learner.hpp"
#include "uavcr/rng.hpp"
#include "uavcr/scenario.hpp"
