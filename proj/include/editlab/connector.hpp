#pragma once

#include "editlab/adapters.hpp"

namespace editlab {

// Closed-form size of the connector parameter view:
// n_connector_layers * 2 * (d_model*r + r*d_model).
int64_t connector_param_count(const ConnectorWeights& connector, int d_model);

// Materialized low-rank delta down*up, scaled.
Tensor materialize_delta(const LoraAdapter& adapter);

// Smallest principal angle (radians) between the column spaces of two
// matrices. Rank-deficient inputs use their effective column bases.
double smallest_principal_angle(const Tensor& a, const Tensor& b);

}  // namespace editlab
