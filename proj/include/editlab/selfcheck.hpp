#pragma once

#include <string>
#include <vector>

#include "editlab/editor.hpp"

namespace editlab {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double elapsed_s = 0.0;
};

// Gated connector transparency: unimodal forwards with a nonzero connector
// equal forwards with the connector structurally removed. Returns the max
// absolute logit difference in `detail`; pass iff it is exactly zero.
CheckResult check_gating_consistency(TransformerWeights& weights, AdapterBank& bank,
                                     int n_queries, uint64_t seed);

// Fused-FFN summand reordering changes nothing beyond float tolerance.
CheckResult check_commutativity(TransformerWeights& weights, AdapterBank& bank, int n_states,
                                double tolerance, uint64_t seed);

// Finite differences vs reverse-mode for base model, adapters, connector and
// encoders; pass iff max relative error < 1e-4.
CheckResult check_gradient_fidelity(uint64_t seed);

// retrieve_text / retrieve_visual match an independently coded exhaustive
// scan on randomized stores.
CheckResult check_retrieval_oracle(int n_stores, uint64_t seed);

// Rule-based decomposition recovers type and parts for every generated query.
CheckResult check_decomposition(uint64_t seed);

// Mixed edit stream vs modality-filtered replays: adapter bytes must agree.
CheckResult check_adapter_isolation(TransformerWeights& weights, const KnowledgeBase& kb,
                                    const EditStream& stream, int edit_steps, double edit_lr);

// Fast whole-suite run used by the `selftest` subcommand.
std::vector<CheckResult> run_selftest();

}  // namespace editlab
