#include "editlab/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "editlab/connector.hpp"
#include "editlab/decompose.hpp"
#include "editlab/errors.hpp"
#include "editlab/optim.hpp"
#include "editlab/rng.hpp"

namespace editlab {

namespace {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void randomize_adapter(LoraAdapter& a, Rng& rng, double scale) {
  for (double& v : a.down.value.data) v = rng.normal(0.0, scale);
  for (double& v : a.up.value.data) v = rng.normal(0.0, scale);
}

void randomize_bank(AdapterBank& bank, Rng& rng, double scale) {
  for (LoraAdapter& a : bank.visual) randomize_adapter(a, rng, scale);
  for (LoraAdapter& a : bank.textual) randomize_adapter(a, rng, scale);
  for (ConnectorWeights::LayerDelta& d : bank.connector.deltas) {
    randomize_adapter(d.dq, rng, scale);
    randomize_adapter(d.dk, rng, scale);
  }
}

TokenList random_tokens(const ModelConfig& cfg, Rng& rng, int len) {
  TokenList t;
  for (int i = 0; i < len; ++i) {
    t.push_back(static_cast<TokenId>(rng.uniform_int(uint64_t(cfg.vocab_total()))));
  }
  return t;
}

ModelConfig probe_config() {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 64;
  cfg.vocab_size_text = 30;
  cfg.vocab_size_image = 10;
  cfg.max_seq_len = 24;
  cfg.lora_rank = 4;
  cfg.seed = 77;
  return cfg;
}

}  // namespace

CheckResult check_gating_consistency(TransformerWeights& weights, AdapterBank& bank,
                                     int n_queries, uint64_t seed) {
  Timer timer;
  AdapterBank no_connector = bank;
  no_connector.connector.deltas.clear();
  no_connector.connector.layer_indices.clear();
  Rng rng = Rng::fork(seed, 0x6763);
  double max_diff = 0.0;
  for (int q = 0; q < n_queries; ++q) {
    int len = 3 + static_cast<int>(rng.uniform_int(8));
    TokenList tokens = random_tokens(weights.config, rng, len);
    ModalityGates gates = (q % 2 == 0) ? ModalityGates{1, 0} : ModalityGates{0, 1};
    Tape t1, t2;
    const Tensor& a = model_forward(t1, weights, &bank, gates, tokens).value();
    const Tensor& b = model_forward(t2, weights, &no_connector, gates, tokens).value();
    for (size_t i = 0; i < a.data.size(); ++i) {
      max_diff = std::max(max_diff, std::abs(a.data[i] - b.data[i]));
    }
  }
  std::ostringstream detail;
  detail << "max |logit diff| = " << max_diff << " over " << n_queries << " unimodal queries";
  return {"gating-consistency", max_diff == 0.0, detail.str(), timer.seconds()};
}

CheckResult check_commutativity(TransformerWeights& weights, AdapterBank& bank, int n_states,
                                double tolerance, uint64_t seed) {
  Timer timer;
  Rng rng = Rng::fork(seed, 0x636f6d);
  double max_dev = 0.0;
  const ModelConfig& cfg = weights.config;
  for (int s = 0; s < n_states; ++s) {
    int layer = s % cfg.n_layers;
    Tensor x = Tensor::zeros({4, cfg.d_model});
    for (double& v : x.data) v = rng.normal(0.0, 1.0);
    Tensor fused = fused_ffn_value(weights, &bank, {1, 1}, layer, x);
    Tensor frozen = fused_ffn_value(weights, nullptr, {}, layer, x);
    Tape tape;
    Var h = tape.layer_norm(tape.leaf(x), tape.param(weights.layers[size_t(layer)].ln2_g),
                            tape.param(weights.layers[size_t(layer)].ln2_b));
    Tensor dv = lora_delta_value(bank.visual[size_t(layer)], h.value());
    Tensor dt = lora_delta_value(bank.textual[size_t(layer)], h.value());
    for (size_t i = 0; i < fused.data.size(); ++i) {
      double swapped = frozen.data[i] + dt.data[i] + dv.data[i];
      max_dev = std::max(max_dev, std::abs(fused.data[i] - swapped));
    }
  }
  std::ostringstream detail;
  detail << "max reorder deviation = " << max_dev << " over " << n_states << " states";
  return {"adapter-commutativity", max_dev < tolerance, detail.str(), timer.seconds()};
}

CheckResult check_gradient_fidelity(uint64_t seed) {
  Timer timer;
  ModelConfig cfg = probe_config();
  cfg.seed = seed;
  TransformerWeights w = init_model(cfg);
  AdapterBank bank = AdapterBank::make_dual(cfg);
  Rng rng = Rng::fork(seed, 0x6664);
  randomize_bank(bank, rng, 0.1);
  TokenList tokens = {1, 7, 12, 33, 5, 2};

  double worst = 0.0;
  std::ostringstream detail;

  // base model
  {
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
    double err = grad_check(loss, grad, params, 5);
    detail << "model " << err;
    worst = std::max(worst, err);
  }
  // adapters and connector, gradients through the gated forward
  {
    std::vector<Parameter*> params = bank.all_params();
    auto loss = [&] {
      Tape tape;
      return answer_span_loss(tape, w, &bank, {1, 1}, tokens, 3).scalar();
    };
    auto grad = [&] {
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      Var l = answer_span_loss(tape, w, &bank, {1, 1}, tokens, 3);
      tape.backward(l);
      tape.apply_param_grads();
    };
    double err = grad_check(loss, grad, params, 5);
    detail << ", adapters+connector " << err;
    worst = std::max(worst, err);
  }
  // encoders under the sigmoid-of-cosine objective
  {
    Vocab vocab;
    vocab.n_relations = 4;
    vocab.n_entities = 10;
    Encoders enc = Encoders::init(vocab, 16, seed);
    std::vector<Parameter*> params = enc.params();
    TokenList q1 = {vocab.relation(1), vocab.frame(0), vocab.entity(3)};
    TokenList q2 = {vocab.relation(1), vocab.frame(2), vocab.entity(3)};
    TokenList img1 = render_image_tokens(vocab, {3, 0});
    TokenList img2 = render_image_tokens(vocab, {3, 1});
    auto build = [&](Tape& tape) {
      Var ct = tape.cosine(enc.embed_text(tape, q1), enc.embed_text(tape, q2));
      Var ci = tape.cosine(enc.embed_image(tape, img1), enc.embed_image(tape, img2));
      Var probs = tape.concat_cols({tape.sigmoid(ct), tape.sigmoid(ci)});
      return tape.binary_cross_entropy(probs, {1.0, 0.0});
    };
    auto loss = [&] {
      Tape tape;
      return build(tape).scalar();
    };
    auto grad = [&] {
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      Var l = build(tape);
      tape.backward(l);
      tape.apply_param_grads();
    };
    double err = grad_check(loss, grad, params, 8);
    detail << ", encoders " << err;
    worst = std::max(worst, err);
  }
  return {"gradient-fidelity", worst < 1e-4, "max rel err: " + detail.str(), timer.seconds()};
}

CheckResult check_retrieval_oracle(int n_stores, uint64_t seed) {
  Timer timer;
  Vocab vocab;
  vocab.n_relations = 4;
  vocab.n_entities = 12;
  Encoders enc = Encoders::init(vocab, 16, seed);
  Rng rng = Rng::fork(seed, 0x6f7261);
  int mismatches = 0;
  int total = 0;

  auto naive_cos = [](const Tensor& a, const Tensor& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
      dot += a.data[i] * b.data[i];
      na += a.data[i] * a.data[i];
      nb += b.data[i] * b.data[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  for (int s = 0; s < n_stores; ++s) {
    MemoryStore store;
    int n_entries = 2 + static_cast<int>(rng.uniform_int(30));
    for (int i = 0; i < n_entries; ++i) {
      TextMemoryEntry te;
      te.question = {vocab.relation(int(rng.uniform_int(4))),
                     vocab.frame(int(rng.uniform_int(4))),
                     vocab.entity(int(rng.uniform_int(12)))};
      te.answer = {vocab.entity(int(rng.uniform_int(12)))};
      te.q_embedding = Tensor::zeros({1, enc.dim});
      for (double& v : te.q_embedding.data) v = rng.normal();
      store.text.push_back(std::move(te));

      VisualMemoryEntry ve;
      ve.image = render_image_tokens(vocab, {int(rng.uniform_int(12)), int(rng.uniform_int(4))});
      ve.question = {Vocab::kWho, vocab.frame(int(rng.uniform_int(4)))};
      ve.answer = {vocab.entity(int(rng.uniform_int(12)))};
      ve.img_embedding = Tensor::zeros({1, enc.dim});
      ve.q_embedding = Tensor::zeros({1, enc.dim});
      for (double& v : ve.img_embedding.data) v = rng.normal();
      for (double& v : ve.q_embedding.data) v = rng.normal();
      store.visual.push_back(std::move(ve));
    }
    TokenList tq = {vocab.relation(int(rng.uniform_int(4))), vocab.frame(int(rng.uniform_int(4))),
                    vocab.entity(int(rng.uniform_int(12)))};
    auto got = retrieve_text(store, enc, tq);
    // exhaustive scan, independently coded
    Tensor qe = enc.embed_text(tq);
    int best = 0;
    double best_s = naive_cos(qe, store.text[0].q_embedding);
    for (size_t i = 1; i < store.text.size(); ++i) {
      double sc = naive_cos(qe, store.text[i].q_embedding);
      if (sc > best_s) {
        best_s = sc;
        best = static_cast<int>(i);
      }
    }
    ++total;
    if (!got || got->index != best) ++mismatches;

    TokenList vq_img = render_image_tokens(vocab, {int(rng.uniform_int(12)), 0});
    TokenList vq_txt = {Vocab::kWho, vocab.frame(0)};
    double alpha = 0.5;
    auto got_v = retrieve_visual(store, enc, vq_img, vq_txt, alpha);
    Tensor qi = enc.embed_image(vq_img);
    Tensor qt = enc.embed_text(vq_txt);
    int best_v = 0;
    double best_vs = -2.0;
    for (size_t i = 0; i < store.visual.size(); ++i) {
      double sc = alpha * naive_cos(qi, store.visual[i].img_embedding) +
                  (1.0 - alpha) * naive_cos(qt, store.visual[i].q_embedding);
      if (sc > best_vs) {
        best_vs = sc;
        best_v = static_cast<int>(i);
      }
    }
    ++total;
    if (!got_v || got_v->index != best_v) ++mismatches;
  }
  std::ostringstream detail;
  detail << mismatches << " mismatches over " << total << " randomized retrievals";
  return {"retrieval-oracle", mismatches == 0, detail.str(), timer.seconds()};
}

CheckResult check_decomposition(uint64_t seed) {
  Timer timer;
  KnowledgeBase kb = generate_world(seed, 16, 4, 2);
  EditStream stream = make_edit_stream(kb, 4, seed);
  int checked = 0;
  bool ok = true;
  std::string why;
  for (const EditRecord& rec : stream.records) {
    for (const Probe& probe : rec.probes) {
      DecomposedQuery dq = decompose(kb.vocab, probe.query);
      ++checked;
      if (dq.qtype != probe.query.qtype) {
        ok = false;
        why = "type mismatch on " + probe.query.text;
      }
      if (dq.qtype == QueryType::compositional) {
        int placeholders = 0;
        for (TokenId t : dq.text_question) {
          if (t == Vocab::kShown) ++placeholders;
        }
        if (placeholders != 1 || !dq.has_visual()) {
          ok = false;
          why = "bad compositional split on " + probe.query.text;
        }
        // idempotence on the derived image sub-query
        Query sub;
        sub.qtype = QueryType::visual;
        sub.body = dq.visual_question;
        sub.body.push_back(Vocab::kImg);
        sub.body.insert(sub.body.end(), dq.visual_image.begin(), dq.visual_image.end());
        DecomposedQuery again = decompose(kb.vocab, sub);
        if (again.qtype != QueryType::visual || again.visual_image != dq.visual_image) {
          ok = false;
          why = "not idempotent on image sub-query";
        }
      }
      if (dq.qtype == QueryType::visual && dq.has_text()) {
        ok = false;
        why = "visual query routed to both levels";
      }
    }
  }
  std::ostringstream detail;
  detail << checked << " generated queries decomposed";
  if (!ok) detail << "; " << why;
  return {"decomposition-closure", ok, detail.str(), timer.seconds()};
}

CheckResult check_adapter_isolation(TransformerWeights& weights, const KnowledgeBase& kb,
                                    const EditStream& stream, int edit_steps, double edit_lr) {
  Timer timer;
  (void)kb;
  AdapterBank mixed = AdapterBank::make_dual(weights.config);
  for (const EditRecord& rec : stream.records) {
    edit_update(weights, mixed, rec, edit_steps, edit_lr);
  }
  AdapterBank visual_only = AdapterBank::make_dual(weights.config);
  AdapterBank textual_only = AdapterBank::make_dual(weights.config);
  for (const EditRecord& rec : stream.records) {
    if (rec.kind == EditKind::visual) edit_update(weights, visual_only, rec, edit_steps, edit_lr);
    if (rec.kind == EditKind::textual) edit_update(weights, textual_only, rec, edit_steps, edit_lr);
  }
  bool tex_ok = params_equal(mixed.textual_params(), textual_only.textual_params());
  bool vis_ok = params_equal(mixed.visual_params(), visual_only.visual_params());
  std::ostringstream detail;
  detail << "textual replay byte-equal: " << (tex_ok ? "yes" : "no")
         << ", visual replay byte-equal: " << (vis_ok ? "yes" : "no") << " ("
         << stream.records.size() << " edits)";
  return {"modality-isolation", tex_ok && vis_ok, detail.str(), timer.seconds()};
}

std::vector<CheckResult> run_selftest() {
  std::vector<CheckResult> results;

  ModelConfig cfg = probe_config();
  TransformerWeights weights = init_model(cfg);
  AdapterBank bank = AdapterBank::make_dual(cfg);
  Rng rng = Rng::fork(99, 0x7374);
  randomize_bank(bank, rng, 0.15);

  results.push_back(check_gating_consistency(weights, bank, 40, 99));
  results.push_back(check_commutativity(weights, bank, 200, 1e-9, 99));
  results.push_back(check_gradient_fidelity(99));
  results.push_back(check_retrieval_oracle(40, 99));
  results.push_back(check_decomposition(99));

  KnowledgeBase kb = generate_world(321, 20, 4, 2);
  ModelConfig wcfg = default_model_config(kb);
  wcfg.d_model = 32;
  wcfg.n_layers = 2;
  wcfg.d_ff = 64;
  TransformerWeights small = init_model(wcfg);
  small.freeze();
  EditStream stream = make_edit_stream(kb, 6, 321);
  results.push_back(check_adapter_isolation(small, kb, stream, 3, 1e-2));
  return results;
}

}  // namespace editlab
