#include <cmath>

#include "doctest.h"
#include "editlab/model.hpp"
#include "editlab/optim.hpp"
#include "editlab/rng.hpp"

using namespace editlab;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 64;
  cfg.vocab_size_text = 24;
  cfg.vocab_size_image = 8;
  cfg.max_seq_len = 24;
  cfg.lora_rank = 4;
  cfg.seed = 11;
  return cfg;
}

Tensor forward_logits(TransformerWeights& w, AdapterBank* bank, ModalityGates gates,
                      const TokenList& tokens) {
  Tape tape;
  return model_forward(tape, w, bank, gates, tokens).value();
}

}  // namespace

TEST_CASE("init_model is deterministic per seed") {
  TransformerWeights a = init_model(tiny_config());
  TransformerWeights b = init_model(tiny_config());
  CHECK(a.content_hash() == b.content_hash());
  ModelConfig other = tiny_config();
  other.seed = 12;
  CHECK(init_model(other).content_hash() != a.content_hash());
}

TEST_CASE("init_model rejects indivisible head split") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 65;
  cfg.n_heads = 4;
  CHECK_THROWS_AS(init_model(cfg), ConfigError);
}

TEST_CASE("parameter count matches hand count from shapes") {
  ModelConfig cfg = tiny_config();
  TransformerWeights w = init_model(cfg);
  // counted by hand: embeddings, per-layer attn + ffn + norms, final norm, head
  int64_t v = cfg.vocab_size_text + cfg.vocab_size_image;
  int64_t d = cfg.d_model;
  int64_t hand = v * d                      // token embedding
                 + cfg.max_seq_len * d      // positional embedding
                 + cfg.n_layers * (4 * d * d + d * cfg.d_ff + cfg.d_ff * d + 4 * d)
                 + 2 * d                    // final norm
                 + d * v;                   // output head
  CHECK(cfg.parameter_count() == hand);
  int64_t actual = 0;
  for (Parameter* p : w.params()) actual += p->value.size();
  CHECK(actual == hand);
}

TEST_CASE("zero-delta adapters are transparent for any gate setting") {
  ModelConfig cfg = tiny_config();
  TransformerWeights w = init_model(cfg);
  AdapterBank bank = AdapterBank::make_dual(cfg);
  TokenList tokens = {1, 5, 9, 30, 2};
  Tensor reference = forward_logits(w, nullptr, {}, tokens);
  for (ModalityGates g : {ModalityGates{0, 0}, ModalityGates{1, 0}, ModalityGates{0, 1},
                          ModalityGates{1, 1}}) {
    Tensor with_bank = forward_logits(w, &bank, g, tokens);
    CHECK(with_bank.data == reference.data);
  }
}

TEST_CASE("forward is bit-deterministic") {
  TransformerWeights w = init_model(tiny_config());
  TokenList tokens = {3, 7, 1, 12};
  Tensor a = forward_logits(w, nullptr, {}, tokens);
  Tensor b = forward_logits(w, nullptr, {}, tokens);
  CHECK(a.data == b.data);
}

TEST_CASE("forward rejects overlong and out-of-vocab input") {
  ModelConfig cfg = tiny_config();
  TransformerWeights w = init_model(cfg);
  TokenList too_long(static_cast<size_t>(cfg.max_seq_len) + 1, 1);
  Tape tape;
  CHECK_THROWS_AS(model_forward(tape, w, nullptr, {}, too_long), DimensionError);
  TokenList bad = {1, cfg.vocab_total()};
  Tape tape2;
  CHECK_THROWS_AS(model_forward(tape2, w, nullptr, {}, bad), IndexError);
}

TEST_CASE("causality: future tokens do not affect earlier logits") {
  TransformerWeights w = init_model(tiny_config());
  TokenList a = {4, 8, 15, 16, 23};
  TokenList b = a;
  b[3] = 1;
  b[4] = 2;
  Tensor la = forward_logits(w, nullptr, {}, a);
  Tensor lb = forward_logits(w, nullptr, {}, b);
  for (int64_t p = 0; p < 3; ++p) {
    for (int64_t j = 0; j < la.cols(); ++j) CHECK(la.at(p, j) == lb.at(p, j));
  }
}

TEST_CASE("greedy_decode emits dominant token and breaks ties low") {
  ModelConfig cfg = tiny_config();
  TransformerWeights w = init_model(cfg);
  // Rig the head: logits are sums of final hidden rows against fixed columns.
  // With final-norm bias 0.1 the hidden row sums to d*0.1 > 0.
  w.lnf_g.value.fill(1.0);
  w.lnf_b.value.fill(0.1);
  w.head.value.fill(0.0);
  double row_sum = 0.1 * cfg.d_model;
  SUBCASE("dominant logit on token 7") {
    for (int64_t r = 0; r < cfg.d_model; ++r) w.head.value.at(r, 7) = 50.0 / row_sum;
    TokenList out = greedy_decode(w, nullptr, {}, TokenList{1, 2}, 1, /*eoa=*/2);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == 7);
  }
  SUBCASE("exact tie between 3 and 9 resolves to 3") {
    for (int64_t r = 0; r < cfg.d_model; ++r) {
      w.head.value.at(r, 3) = 1.0;
      w.head.value.at(r, 9) = 1.0;
    }
    TokenList out = greedy_decode(w, nullptr, {}, TokenList{1, 2}, 1, /*eoa=*/2);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == 3);
  }
}

TEST_CASE("greedy_decode is prefix-deterministic and needs a prompt") {
  TransformerWeights w = init_model(tiny_config());
  TokenList prompt = {5, 6, 7};
  CHECK(greedy_decode(w, nullptr, {}, prompt, 4, 2) == greedy_decode(w, nullptr, {}, prompt, 4, 2));
  CHECK_THROWS_AS(greedy_decode(w, nullptr, {}, TokenList{}, 4, 2), PreconditionError);
}

TEST_CASE("gradient fidelity of the full model loss") {
  ModelConfig cfg = tiny_config();
  TransformerWeights w = init_model(cfg);
  TokenList tokens = {1, 4, 9, 30, 17, 2};
  std::vector<Parameter*> params = w.params();
  auto loss = [&] {
    Tape tape;
    return answer_span_loss(tape, w, nullptr, {}, tokens, 3).scalar();
  };
  auto grad = [&] {
    for (Parameter* p : params) p->zero_grad();
    Tape tape;
    Var l = answer_span_loss(tape, w, nullptr, {}, tokens, 3);
    tape.backward(l);
    tape.apply_param_grads();
  };
  CHECK(grad_check(loss, grad, params, 6) < 1e-4);
}

TEST_CASE("pretrain memorizes a toy corpus and freezes the weights") {
  ModelConfig cfg = tiny_config();
  cfg.seed = 21;
  TransformerWeights w = init_model(cfg);
  // 30 fixed prompt->answer mappings, answers are single tokens + terminator
  Rng rng(5);
  std::vector<TrainSequence> corpus;
  for (int i = 0; i < 30; ++i) {
    TokenList t = {0, TokenId(3 + i % 20), TokenId(3 + (i * 7) % 20), 1,
                   TokenId(3 + (i * 5) % 20), 2};
    corpus.push_back({t, 4});
  }
  PretrainOptions opts;
  opts.target_acc = 0.99;
  opts.max_epochs = 200;
  opts.batch_size = 8;
  opts.lr = 4e-3;
  PretrainResult res = pretrain(w, corpus, opts);
  CHECK(res.accuracy >= 0.99);
  CHECK(w.frozen);

  // frozen weights stay bit-identical under further optimizer traffic
  uint64_t before = w.content_hash();
  AdamW opt(w.params(), 0.1);
  Tape tape;
  Var l = answer_span_loss(tape, w, nullptr, {}, corpus[0].tokens, corpus[0].answer_start);
  tape.backward(l);
  tape.apply_param_grads();
  opt.step();
  CHECK(w.content_hash() == before);
}

TEST_CASE("pretrain rejects an empty corpus") {
  TransformerWeights w = init_model(tiny_config());
  CHECK_THROWS_AS(pretrain(w, {}, {}), PreconditionError);
}
