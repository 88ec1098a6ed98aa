#include "editlab/adapters.hpp"

#include <cmath>

#include "editlab/errors.hpp"
#include "editlab/model.hpp"

namespace editlab {

const char* to_string(QueryType t) {
  switch (t) {
    case QueryType::visual: return "visual";
    case QueryType::textual: return "textual";
    case QueryType::compositional: return "compositional";
  }
  return "?";
}

const char* to_string(EditKind k) {
  return k == EditKind::visual ? "visual" : "textual";
}

LoraAdapter LoraAdapter::init(int64_t d_in, int64_t d_out, int64_t rank, Rng& rng) {
  if (rank < 1) throw ConfigError("lora rank must be >= 1");
  LoraAdapter a;
  Tensor down = Tensor::zeros({d_in, rank});
  double s = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (double& v : down.data) v = rng.normal(0.0, s);
  a.down = Parameter(std::move(down));
  a.up = Parameter(Tensor::zeros({rank, d_out}));
  return a;
}

void LoraAdapter::reset(Rng& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(down.value.rows()));
  for (double& v : down.value.data) v = rng.normal(0.0, s);
  up.value.fill(0.0);
  down.zero_grad();
  up.zero_grad();
}

Var lora_delta(Tape& tape, LoraAdapter& adapter, Var x) {
  Var mid = tape.matmul(x, tape.param(adapter.down));
  Var out = tape.matmul(mid, tape.param(adapter.up));
  return adapter.scale == 1.0 ? out : tape.scale(out, adapter.scale);
}

Tensor lora_delta_value(const LoraAdapter& adapter, const Tensor& x) {
  Tensor out = matmul_value(matmul_value(x, adapter.down.value), adapter.up.value);
  if (adapter.scale != 1.0) {
    for (double& v : out.data) v *= adapter.scale;
  }
  return out;
}

ModalityGates gates_for_query(QueryType qtype) {
  switch (qtype) {
    case QueryType::visual: return {1, 0};
    case QueryType::textual: return {0, 1};
    case QueryType::compositional: return {1, 1};
  }
  return {0, 0};
}

int indicator(ModalityGates g) { return (g.visual == 1 && g.textual == 1) ? 1 : 0; }

bool ConnectorWeights::hosts(int layer) const { return slot_for(layer) >= 0; }

int ConnectorWeights::slot_for(int layer) const {
  for (size_t i = 0; i < layer_indices.size(); ++i) {
    if (layer_indices[i] == layer) return static_cast<int>(i);
  }
  return -1;
}

namespace {

ConnectorWeights make_connector(const ModelConfig& config, Rng& rng) {
  ConnectorWeights c;
  c.layer_indices = config.effective_connector_layers();
  for (size_t i = 0; i < c.layer_indices.size(); ++i) {
    ConnectorWeights::LayerDelta d;
    d.dq = LoraAdapter::init(config.d_model, config.d_model, config.lora_rank, rng);
    d.dk = LoraAdapter::init(config.d_model, config.d_model, config.lora_rank, rng);
    c.deltas.push_back(std::move(d));
  }
  return c;
}

}  // namespace

AdapterBank AdapterBank::make_dual(const ModelConfig& config) {
  config.validate();
  AdapterBank bank;
  bank.mode = Mode::dual;
  Rng rng = Rng::fork(config.seed, 0xada0);
  for (int l = 0; l < config.n_layers; ++l) {
    bank.visual.push_back(LoraAdapter::init(config.d_model, config.d_model, config.lora_rank, rng));
    bank.textual.push_back(LoraAdapter::init(config.d_model, config.d_model, config.lora_rank, rng));
  }
  bank.connector = make_connector(config, rng);
  return bank;
}

AdapterBank AdapterBank::make_single(const ModelConfig& config) {
  config.validate();
  AdapterBank bank;
  bank.mode = Mode::single;
  Rng rng = Rng::fork(config.seed, 0xada1);
  for (int l = 0; l < config.n_layers; ++l) {
    // rank 2r: parameter-budget parity with the dual r+r pair
    bank.shared.push_back(
        LoraAdapter::init(config.d_model, config.d_model, 2 * config.lora_rank, rng));
  }
  bank.connector = make_connector(config, rng);
  return bank;
}

namespace {

void push_adapter_params(std::vector<Parameter*>& out, std::vector<LoraAdapter>& adapters) {
  for (LoraAdapter& a : adapters) {
    out.push_back(&a.down);
    out.push_back(&a.up);
  }
}

}  // namespace

std::vector<Parameter*> AdapterBank::visual_params() {
  std::vector<Parameter*> out;
  push_adapter_params(out, visual);
  return out;
}

std::vector<Parameter*> AdapterBank::textual_params() {
  std::vector<Parameter*> out;
  push_adapter_params(out, textual);
  return out;
}

std::vector<Parameter*> AdapterBank::shared_params() {
  std::vector<Parameter*> out;
  push_adapter_params(out, shared);
  return out;
}

std::vector<Parameter*> AdapterBank::connector_params() {
  std::vector<Parameter*> out;
  for (ConnectorWeights::LayerDelta& d : connector.deltas) {
    out.push_back(&d.dq.down);
    out.push_back(&d.dq.up);
    out.push_back(&d.dk.down);
    out.push_back(&d.dk.up);
  }
  return out;
}

std::vector<Parameter*> AdapterBank::all_params() {
  std::vector<Parameter*> out;
  push_adapter_params(out, visual);
  push_adapter_params(out, textual);
  push_adapter_params(out, shared);
  for (Parameter* p : connector_params()) out.push_back(p);
  return out;
}

void AdapterBank::reset_adapters(uint64_t seed) {
  Rng rng = Rng::fork(seed, 0xada2);
  for (LoraAdapter& a : visual) a.reset(rng);
  for (LoraAdapter& a : textual) a.reset(rng);
  for (LoraAdapter& a : shared) a.reset(rng);
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && a.data == b.data;
}

bool params_equal(const std::vector<Parameter*>& a, const std::vector<Parameter*>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (!tensors_equal(a[i]->value, b[i]->value)) return false;
  }
  return true;
}

}  // namespace editlab
