#pragma once

// Umbrella header for the fedmerge library.

#include "fedmerge/dataio.hpp"
#include "fedmerge/datagen.hpp"
#include "fedmerge/dataset.hpp"
#include "fedmerge/errors.hpp"
#include "fedmerge/gma.hpp"
#include "fedmerge/merge.hpp"
#include "fedmerge/metrics.hpp"
#include "fedmerge/model.hpp"
#include "fedmerge/nn.hpp"
#include "fedmerge/projections.hpp"
#include "fedmerge/rng.hpp"
#include "fedmerge/serialize.hpp"
#include "fedmerge/soma.hpp"
#include "fedmerge/tensor.hpp"
#include "fedmerge/valuation.hpp"
