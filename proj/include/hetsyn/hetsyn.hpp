#pragma once

// Umbrella header for the whole library (the CLI layer lives in cli.hpp).
#include "hetsyn/autograd.hpp"
#include "hetsyn/checkpoint.hpp"
#include "hetsyn/config.hpp"
#include "hetsyn/edge_predictors.hpp"
#include "hetsyn/entity_store.hpp"
#include "hetsyn/error.hpp"
#include "hetsyn/featurize.hpp"
#include "hetsyn/gnn.hpp"
#include "hetsyn/hetgraph.hpp"
#include "hetsyn/metrics.hpp"
#include "hetsyn/nn.hpp"
#include "hetsyn/pipeline.hpp"
#include "hetsyn/random.hpp"
#include "hetsyn/tsv.hpp"
