#pragma once

#include "dctnet/tensor.hpp"
#include "dctnet/ops.hpp"
#include "dctnet/dct.hpp"
#include "dctnet/spectral.hpp"
#include "dctnet/perceptron.hpp"
#include "dctnet/model_spec.hpp"
#include "dctnet/model.hpp"
#include "dctnet/cost.hpp"
#include "dctnet/data.hpp"
#include "dctnet/checkpoint.hpp"
#include "dctnet/train.hpp"
