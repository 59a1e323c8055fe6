#pragma once

// Everything: autodiff, data, mask distributions, imputers, the model,
// gradient estimators, training and evaluation.
#include "lex/config.hpp"
#include "lex/dataset.hpp"
#include "lex/diffnet/autograd.hpp"
#include "lex/diffnet/checkpoint.hpp"
#include "lex/diffnet/mlp.hpp"
#include "lex/error.hpp"
#include "lex/evalkit.hpp"
#include "lex/gradest.hpp"
#include "lex/imputers/imputer.hpp"
#include "lex/lexmodel.hpp"
#include "lex/maskdist.hpp"
#include "lex/rng.hpp"
#include "lex/synthgen.hpp"
#include "lex/trainer.hpp"
