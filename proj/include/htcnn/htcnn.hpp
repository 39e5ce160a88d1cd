#pragma once

// Umbrella header for the hierarchical-transfer CNN library: tensors, layer
// kernels, model graphs, the stock architectures, first-layer transplant
// machinery, data pipeline, trainer, curve metrics, and the experiment harness.

#include "htcnn/config.hpp"
#include "htcnn/data.hpp"
#include "htcnn/experiment.hpp"
#include "htcnn/graph.hpp"
#include "htcnn/metrics.hpp"
#include "htcnn/ops.hpp"
#include "htcnn/optim.hpp"
#include "htcnn/rng.hpp"
#include "htcnn/tensor.hpp"
#include "htcnn/train.hpp"
#include "htcnn/transfer.hpp"
#include "htcnn/zoo.hpp"
