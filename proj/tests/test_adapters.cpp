#include <cmath>

#include "doctest.h"
#include "editlab/connector.hpp"
#include "editlab/model.hpp"
#include "editlab/rng.hpp"

using namespace editlab;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 64;
  cfg.vocab_size_text = 20;
  cfg.vocab_size_image = 4;
  cfg.max_seq_len = 16;
  cfg.lora_rank = 4;
  cfg.seed = 31;
  return cfg;
}

Tensor random_state(int64_t rows, int64_t cols, Rng& rng) {
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data) v = rng.normal(0.0, 0.8);
  return t;
}

void randomize(LoraAdapter& a, Rng& rng, double scale = 0.2) {
  for (double& v : a.down.value.data) v = rng.normal(0.0, scale);
  for (double& v : a.up.value.data) v = rng.normal(0.0, scale);
}

}  // namespace

TEST_CASE("gates follow the query type") {
  ModalityGates v = gates_for_query(QueryType::visual);
  CHECK(v.visual == 1);
  CHECK(v.textual == 0);
  ModalityGates t = gates_for_query(QueryType::textual);
  CHECK(t.visual == 0);
  CHECK(t.textual == 1);
  ModalityGates c = gates_for_query(QueryType::compositional);
  CHECK(c.visual == 1);
  CHECK(c.textual == 1);
}

TEST_CASE("indicator fires only when both gates are on") {
  CHECK(indicator({1, 1}) == 1);
  CHECK(indicator({1, 0}) == 0);
  CHECK(indicator({0, 1}) == 0);
  CHECK(indicator({0, 0}) == 0);
}

TEST_CASE("fresh lora delta is an exact no-op") {
  Rng rng(1);
  LoraAdapter a = LoraAdapter::init(8, 8, 2, rng);
  Tensor x = random_state(3, 8, rng);
  Tensor out = lora_delta_value(a, x);
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("rank-1 unit adapter copies one coordinate") {
  Rng rng(2);
  LoraAdapter a = LoraAdapter::init(4, 4, 1, rng);
  a.down.value.fill(0.0);
  a.down.value.at(0, 0) = 1.0;  // e1
  a.up.value.fill(0.0);
  a.up.value.at(0, 0) = 1.0;  // e1^T
  Tensor x = Tensor::matrix(2, 4, {5, 1, 2, 3, -7, 4, 4, 4});
  Tensor out = lora_delta_value(a, x);
  CHECK(out.at(0, 0) == 5.0);
  CHECK(out.at(1, 0) == -7.0);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 1; j < 4; ++j) CHECK(out.at(i, j) == 0.0);
}

TEST_CASE("lora delta equals the materialized dense product") {
  Rng rng(3);
  LoraAdapter a = LoraAdapter::init(12, 12, 3, rng);
  randomize(a, rng);
  a.scale = 0.7;
  Tensor x = random_state(5, 12, rng);
  Tensor low_rank = lora_delta_value(a, x);
  Tensor dense = matmul_value(x, materialize_delta(a));
  REQUIRE(low_rank.same_shape(dense));
  for (size_t i = 0; i < dense.data.size(); ++i) {
    CHECK(std::abs(low_rank.data[i] - dense.data[i]) < 1e-12);
  }
}

TEST_CASE("fused ffn with gates off is exactly the frozen branch") {
  ModelConfig cfg = small_config();
  TransformerWeights w = init_model(cfg);
  AdapterBank bank = AdapterBank::make_dual(cfg);
  Rng rng(4);
  for (LoraAdapter& a : bank.visual) randomize(a, rng);
  for (LoraAdapter& a : bank.textual) randomize(a, rng);
  Tensor x = random_state(5, cfg.d_model, rng);
  Tensor gated = fused_ffn_value(w, &bank, {0, 0}, 0, x);
  Tensor frozen = fused_ffn_value(w, nullptr, {}, 0, x);
  CHECK(gated.data == frozen.data);
}

TEST_CASE("fused ffn with zero adapters matches frozen branch under full gates") {
  ModelConfig cfg = small_config();
  TransformerWeights w = init_model(cfg);
  AdapterBank bank = AdapterBank::make_dual(cfg);
  Rng rng(5);
  Tensor x = random_state(4, cfg.d_model, rng);
  Tensor gated = fused_ffn_value(w, &bank, {1, 1}, 1, x);
  Tensor frozen = fused_ffn_value(w, nullptr, {}, 1, x);
  CHECK(gated.data == frozen.data);
}

TEST_CASE("adapter increments commute within float tolerance") {
  ModelConfig cfg = small_config();
  TransformerWeights w = init_model(cfg);
  AdapterBank bank = AdapterBank::make_dual(cfg);
  Rng rng(6);
  for (LoraAdapter& a : bank.visual) randomize(a, rng);
  for (LoraAdapter& a : bank.textual) randomize(a, rng);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x = random_state(4, cfg.d_model, rng);
    int layer = rep % cfg.n_layers;
    Tensor fused = fused_ffn_value(w, &bank, {1, 1}, layer, x);
    // swapped summand order, rebuilt from the pieces
    Tape tape;
    Var h = tape.layer_norm(tape.leaf(x), tape.param(w.layers[size_t(layer)].ln2_g),
                            tape.param(w.layers[size_t(layer)].ln2_b));
    Tensor frozen = fused_ffn_value(w, nullptr, {}, layer, x);
    Tensor dv = lora_delta_value(bank.visual[size_t(layer)], h.value());
    Tensor dt = lora_delta_value(bank.textual[size_t(layer)], h.value());
    for (size_t i = 0; i < fused.data.size(); ++i) {
      double swapped = frozen.data[i] + dt.data[i] + dv.data[i];
      CHECK(std::abs(fused.data[i] - swapped) < 1e-9);
    }
  }
}

TEST_CASE("single mode shares one adapter of doubled rank") {
  ModelConfig cfg = small_config();
  AdapterBank dual = AdapterBank::make_dual(cfg);
  AdapterBank single = AdapterBank::make_single(cfg);
  CHECK(single.shared[0].rank() == 2 * cfg.lora_rank);
  // parameter budget parity
  int64_t dual_n = 0, single_n = 0;
  for (Parameter* p : dual.visual_params()) dual_n += p->value.size();
  for (Parameter* p : dual.textual_params()) dual_n += p->value.size();
  for (Parameter* p : single.shared_params()) single_n += p->value.size();
  CHECK(dual_n == single_n);
}

TEST_CASE("adapter subspaces are generically disjoint under random init") {
  ModelConfig cfg = small_config();
  AdapterBank bank = AdapterBank::make_dual(cfg);
  Rng rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    randomize(bank.visual[0], rng, 0.5);
    randomize(bank.textual[0], rng, 0.5);
    double angle = smallest_principal_angle(materialize_delta(bank.visual[0]),
                                            materialize_delta(bank.textual[0]));
    CHECK(angle > 1e-3);
  }
}
