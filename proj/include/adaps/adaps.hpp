#pragma once

#include "adaps/core.hpp"
#include "adaps/rng.hpp"
#include "adaps/schedule.hpp"
#include "adaps/operators.hpp"
#include "adaps/priors.hpp"
#include "adaps/guidance.hpp"
#include "adaps/sampler.hpp"
#include "adaps/nonlinear.hpp"
#include "adaps/oracle.hpp"
#include "adaps/metrics.hpp"
#include "adaps/io.hpp"
#include "adaps/config.hpp"
#include "adaps/harness.hpp"
