#pragma once

// Everything except the command-line front end (downscaler/cli.hpp).

#include <downscaler/errors.hpp>
#include <downscaler/rng.hpp>
#include <downscaler/linalg.hpp>
#include <downscaler/distance.hpp>
#include <downscaler/data.hpp>
#include <downscaler/io.hpp>
#include <downscaler/model_spec.hpp>
#include <downscaler/covariance.hpp>
#include <downscaler/ols.hpp>
#include <downscaler/ffbs.hpp>
#include <downscaler/chain.hpp>
#include <downscaler/sampler.hpp>
#include <downscaler/diagnostics.hpp>
#include <downscaler/prediction.hpp>
#include <downscaler/kriging.hpp>
#include <downscaler/scores.hpp>
#include <downscaler/evaluation.hpp>
#include <downscaler/simulator.hpp>
