#pragma once

// Umbrella header for the whole library.

#include "hamflow/core.hpp"
#include "hamflow/datagen.hpp"
#include "hamflow/diffgraph.hpp"
#include "hamflow/integrators.hpp"
#include "hamflow/io.hpp"
#include "hamflow/learner.hpp"
#include "hamflow/models.hpp"
#include "hamflow/nhf.hpp"
#include "hamflow/reports.hpp"
#include "hamflow/systems.hpp"
#include "hamflow/training.hpp"
