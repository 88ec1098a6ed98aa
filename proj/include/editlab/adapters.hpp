#pragma once

#include <vector>

#include "editlab/autograd.hpp"
#include "editlab/rng.hpp"
#include "editlab/types.hpp"

namespace editlab {

struct ModelConfig;

// Low-rank delta: x -> scale * (x @ down) @ up. The up matrix starts at zero
// so a fresh adapter is an exact no-op.
struct LoraAdapter {
  Parameter down;  // [d_in x r]
  Parameter up;    // [r x d_out]
  double scale = 1.0;

  static LoraAdapter init(int64_t d_in, int64_t d_out, int64_t rank, Rng& rng);
  void reset(Rng& rng);  // re-draw down, zero up
  int64_t rank() const { return down.value.cols(); }
};

Var lora_delta(Tape& tape, LoraAdapter& adapter, Var x);
Tensor lora_delta_value(const LoraAdapter& adapter, const Tensor& x);

// Modality activations, set purely from the query type.
struct ModalityGates {
  int visual = 0;
  int textual = 0;
};

ModalityGates gates_for_query(QueryType qtype);

// 1 iff both gates are on; the connector activates only then.
int indicator(ModalityGates g);

// Connector: low-rank deltas on the attention query/key projections of the
// hosting layers. The value projection carries no delta.
struct ConnectorWeights {
  struct LayerDelta {
    LoraAdapter dq;
    LoraAdapter dk;
  };
  std::vector<LayerDelta> deltas;         // aligned with layer_indices
  std::vector<int> layer_indices;         // which transformer layers host one

  bool hosts(int layer) const;
  int slot_for(int layer) const;  // -1 if not hosted
};

// Dual modality-specific adapters (one per FFN) plus the connector. In
// single mode one shared adapter of rank 2r replaces the pair
// (parameter-budget parity with dual r+r).
struct AdapterBank {
  enum class Mode { dual, single };

  Mode mode = Mode::dual;
  std::vector<LoraAdapter> visual;   // per layer, dual mode
  std::vector<LoraAdapter> textual;  // per layer, dual mode
  std::vector<LoraAdapter> shared;   // per layer, single mode
  ConnectorWeights connector;

  static AdapterBank make_dual(const ModelConfig& config);
  static AdapterBank make_single(const ModelConfig& config);

  std::vector<Parameter*> visual_params();
  std::vector<Parameter*> textual_params();
  std::vector<Parameter*> shared_params();
  std::vector<Parameter*> connector_params();
  std::vector<Parameter*> all_params();

  void reset_adapters(uint64_t seed);  // fresh deltas, connector untouched
};

bool tensors_equal(const Tensor& a, const Tensor& b);
bool params_equal(const std::vector<Parameter*>& a, const std::vector<Parameter*>& b);

}  // namespace editlab
