#pragma once

#include "geoadd/version.hpp"
#include "geoadd/error.hpp"
#include "geoadd/random.hpp"
#include "geoadd/splines.hpp"
#include "geoadd/spatial.hpp"
#include "geoadd/family.hpp"
#include "geoadd/table.hpp"
#include "geoadd/design.hpp"
#include "geoadd/posterior.hpp"
#include "geoadd/nelder_mead.hpp"
#include "geoadd/inference.hpp"
#include "geoadd/predict.hpp"
#include "geoadd/diagnostics.hpp"
#include "geoadd/simulate.hpp"
#include "geoadd/model_io.hpp"
