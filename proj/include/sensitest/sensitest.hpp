#pragma once

#include "sensitest/errors.hpp"
#include "sensitest/normal.hpp"
#include "sensitest/rng.hpp"
#include "sensitest/model.hpp"
#include "sensitest/grid.hpp"
#include "sensitest/dataset.hpp"
#include "sensitest/designs.hpp"
#include "sensitest/quantile.hpp"
#include "sensitest/mle.hpp"
#include "sensitest/isotonic.hpp"
#include "sensitest/rmj.hpp"
#include "sensitest/simharness.hpp"
#include "sensitest/serialize.hpp"
