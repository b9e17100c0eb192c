#pragma once

// Umbrella header.

#include "gaug/conv.hpp"
#include "gaug/csv.hpp"
#include "gaug/data.hpp"
#include "gaug/error.hpp"
#include "gaug/experiment.hpp"
#include "gaug/ganloss.hpp"
#include "gaug/gradcheck.hpp"
#include "gaug/nets.hpp"
#include "gaug/ops.hpp"
#include "gaug/rng.hpp"
#include "gaug/svm.hpp"
#include "gaug/tensor.hpp"
#include "gaug/train.hpp"
#include "gaug/tsne.hpp"
