#pragma once

#include "rebalance/csv.hpp"
#include "rebalance/datasets.hpp"
#include "rebalance/diagnostics.hpp"
#include "rebalance/error.hpp"
#include "rebalance/estimators.hpp"
#include "rebalance/formula.hpp"
#include "rebalance/glm_lasso.hpp"
#include "rebalance/model_matrix.hpp"
#include "rebalance/parallel.hpp"
#include "rebalance/report.hpp"
#include "rebalance/sample.hpp"
#include "rebalance/transforms.hpp"
#include "rebalance/workflow.hpp"
