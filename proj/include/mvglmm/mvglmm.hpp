#pragma once

// Multivariate generalized linear mixed models for paired-competition data.

#include "mvglmm/data_model.hpp"
#include "mvglmm/design.hpp"
#include "mvglmm/errors.hpp"
#include "mvglmm/estimator.hpp"
#include "mvglmm/evaluator.hpp"
#include "mvglmm/likelihoods.hpp"
#include "mvglmm/model_spec.hpp"
#include "mvglmm/normal_math.hpp"
#include "mvglmm/predictor.hpp"
#include "mvglmm/serialize.hpp"
#include "mvglmm/simulate.hpp"
