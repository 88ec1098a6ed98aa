#include <cmath>

#include "doctest.h"
#include "editlab/editor.hpp"
#include "editlab/io.hpp"
#include "editlab/metrics.hpp"

using namespace editlab;

namespace {

struct Fixture {
  KnowledgeBase kb;
  TransformerWeights weights;
  Encoders encoders;
  EditStream stream;

  Fixture()
      : kb(generate_world(61, 30, 4, 2)),
        weights(init_model(small_config(kb))),
        encoders(Encoders::init(kb.vocab, 16, 61)),
        stream(make_edit_stream(kb, 5, 61)) {
    weights.freeze();
    encoders.freeze();
  }

  static ModelConfig small_config(const KnowledgeBase& kb) {
    ModelConfig cfg = default_model_config(kb);
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.d_ff = 64;
    cfg.lora_rank = 4;
    return cfg;
  }

  EditorConfig config(Strategy s) const {
    EditorConfig c;
    c.strategy = s;
    c.edit_steps = 2;
    c.edit_lr = 1e-2;
    c.gaps = {0, 2};
    c.seed = 61;
    c.threads = 2;
    c.use_calibrated_tau = false;
    return c;
  }
};

}  // namespace

TEST_CASE("edit_update trains only the matching adapter, step zero is a no-op") {
  Fixture fx;
  AdapterBank bank = AdapterBank::make_dual(fx.weights.config);
  AdapterBank snapshot = bank;
  edit_update(fx.weights, bank, fx.stream.records[0], 0, 1e-2);
  CHECK(params_equal(bank.all_params(), snapshot.all_params()));

  edit_update(fx.weights, bank, fx.stream.records[0], 3, 1e-2);  // visual edit
  CHECK_FALSE(params_equal(bank.visual_params(), snapshot.visual_params()));
  CHECK(params_equal(bank.textual_params(), snapshot.textual_params()));
  CHECK(params_equal(bank.connector_params(), snapshot.connector_params()));
  CHECK(fx.weights.content_hash() == init_model(fx.weights.config).content_hash());
}

TEST_CASE("edit_update rejects a compositional payload") {
  Fixture fx;
  AdapterBank bank = AdapterBank::make_dual(fx.weights.config);
  EditRecord bad = fx.stream.records[1];
  bad.edit_prompt = compositional_query(fx.kb, bad.textual.relation, 0, bad.visual.image);
  CHECK_THROWS_AS(edit_update(fx.weights, bank, bad, 2, 1e-2), PreconditionError);
}

TEST_CASE("apply_edit respects the strategy's memories") {
  Fixture fx;
  SUBCASE("external_only leaves every parameter byte-identical") {
    RunState st = make_run_state(fx.weights, fx.kb, &fx.encoders,
                                 fx.config(Strategy::external_only));
    AdapterBank snapshot = st.bank;
    apply_edit(st, fx.stream.records[0]);
    apply_edit(st, fx.stream.records[1]);
    CHECK(params_equal(st.bank.all_params(), snapshot.all_params()));
    CHECK(st.store.visual.size() == 1);
    CHECK(st.store.text.size() == 1);
  }
  SUBCASE("memeic_full visual edit updates theta_v, store, nothing else") {
    RunState st =
        make_run_state(fx.weights, fx.kb, &fx.encoders, fx.config(Strategy::memeic_full));
    AdapterBank snapshot = st.bank;
    apply_edit(st, fx.stream.records[0]);
    CHECK_FALSE(params_equal(st.bank.visual_params(), snapshot.visual_params()));
    CHECK(params_equal(st.bank.textual_params(), snapshot.textual_params()));
    CHECK(params_equal(st.bank.connector_params(), snapshot.connector_params()));
    CHECK(st.store.visual.size() == 1);
    CHECK(st.store.text.empty());
  }
  SUBCASE("internal_single_lora updates the shared adapter for either modality") {
    RunState st = make_run_state(fx.weights, fx.kb, nullptr,
                                 fx.config(Strategy::internal_single_lora));
    AdapterBank snapshot = st.bank;
    apply_edit(st, fx.stream.records[0]);  // visual
    CHECK_FALSE(params_equal(st.bank.shared_params(), snapshot.shared_params()));
    AdapterBank mid = st.bank;
    apply_edit(st, fx.stream.records[1]);  // textual
    CHECK_FALSE(params_equal(st.bank.shared_params(), mid.shared_params()));
    CHECK(st.store.visual.empty());
    CHECK(st.store.text.empty());
  }
}

TEST_CASE("adversarial retriever endpoints and rate") {
  Fixture fx;
  MemoryStore store;
  for (const EditRecord& r : fx.stream.records) add_edit(store, fx.encoders, fx.kb.vocab, r);
  const Probe* comp = fx.stream.records[1].probe(ProbeKind::comp);
  DecomposedQuery dq = decompose(fx.kb.vocab, comp->query);

  SUBCASE("p=1 always returns the truth and mirrors similarity retrieval") {
    AdversarialRetriever oracle{1.0, 5};
    for (uint64_t key = 0; key < 20; ++key) {
      RetrievedContext ctx = adversarial_retrieve(oracle, store, dq, 0, 0, key);
      CHECK(ctx.visual.index == 0);
      CHECK(ctx.text.index == 0);
      CHECK(*ctx.visual.truth_hit);
      CHECK(*ctx.text.truth_hit);
    }
    RetrievedContext sim = retrieve_for_query(store, fx.encoders, dq, {-1.0, -1.0}, 0.5);
    RetrievedContext adv = adversarial_retrieve(AdversarialRetriever{1.0, 5}, store, dq,
                                                sim.visual.index, sim.text.index, 7);
    CHECK(adv.visual.index == sim.visual.index);
    CHECK(adv.text.index == sim.text.index);
    CHECK(adv.substituted_question == sim.substituted_question);
  }
  SUBCASE("p=0 never returns the truth when alternatives exist") {
    AdversarialRetriever never{0.0, 5};
    for (uint64_t key = 0; key < 50; ++key) {
      RetrievedContext ctx = adversarial_retrieve(never, store, dq, 2, 2, key);
      CHECK(ctx.visual.index != 2);
      CHECK(ctx.text.index != 2);
    }
  }
  SUBCASE("p=0.7 empirical hit rate over 10000 draws") {
    AdversarialRetriever retr{0.7, 5};
    int hits = 0;
    for (uint64_t key = 0; key < 10000; ++key) {
      RetrievedContext ctx = adversarial_retrieve(retr, store, dq, 1, 1, key);
      hits += *ctx.visual.truth_hit ? 1 : 0;
    }
    double rate = hits / 10000.0;
    CHECK(rate > 0.68);
    CHECK(rate < 0.72);
  }
  SUBCASE("draws are deterministic under the seed") {
    AdversarialRetriever a{0.5, 9}, b{0.5, 9};
    for (uint64_t key = 0; key < 30; ++key) {
      RetrievedContext x = adversarial_retrieve(a, store, dq, 1, 1, key);
      RetrievedContext y = adversarial_retrieve(b, store, dq, 1, 1, key);
      CHECK(x.visual.index == y.visual.index);
      CHECK(x.text.index == y.text.index);
    }
  }
}

TEST_CASE("sequential run evaluates each gap at the right state and reproduces exactly") {
  Fixture fx;
  auto run_once = [&] {
    RunState st = make_run_state(fx.weights, fx.kb, &fx.encoders,
                                 fx.config(Strategy::hybrid_no_connector));
    sequential_run(st, fx.stream);
    return ledger_to_jsonl(st.ledger);
  };
  std::string first = run_once();
  std::string second = run_once();
  CHECK(first == second);

  RunState st = make_run_state(fx.weights, fx.kb, &fx.encoders,
                               fx.config(Strategy::hybrid_no_connector));
  sequential_run(st, fx.stream);
  // gap 0 count per always-present probe kind equals the stream length
  int64_t gap0_tloc = 0, gap2_tloc = 0;
  for (const LedgerRow& row : st.ledger) {
    if (row.kind == ProbeKind::text_loc && row.gap == 0) ++gap0_tloc;
    if (row.kind == ProbeKind::text_loc && row.gap == 2) ++gap2_tloc;
  }
  CHECK(gap0_tloc == 10);
  CHECK(gap2_tloc == 8);  // T - g records have k+g in range
}

TEST_CASE("stage 2 trains only the connector and leaves caller state alone") {
  Fixture fx;
  auto pairs = make_training_pairs(fx.kb, 6, 61, {});
  AdversarialRetriever retr{0.7, 61};
  Stage2Options opts;
  opts.inner_steps = 1;
  opts.edit_steps = 1;
  opts.seed = 61;

  uint64_t weights_before = fx.weights.content_hash();
  ConnectorWeights conn = train_connector_stage2(fx.weights, fx.kb, pairs, retr, opts);
  CHECK(fx.weights.content_hash() == weights_before);
  bool any_nonzero = false;
  for (const ConnectorWeights::LayerDelta& d : conn.deltas) {
    for (double v : d.dq.up.value.data) any_nonzero = any_nonzero || v != 0.0;
  }
  CHECK(any_nonzero);
  for (const ConnectorWeights::LayerDelta& d : conn.deltas) {
    CHECK_FALSE(d.dq.down.trainable);
    CHECK_FALSE(d.dk.up.trainable);
  }

  // unimodal behavior is untouched by installing the trained connector
  EditorConfig cfg = fx.config(Strategy::memeic_full);
  RunState plain = make_run_state(fx.weights, fx.kb, &fx.encoders, cfg);
  RunState with_conn = make_run_state(fx.weights, fx.kb, &fx.encoders, cfg, &conn);
  const Probe* vis = fx.stream.records[0].probe(ProbeKind::vis_rel);
  TokenList prompt = render_prompt({}, vis->query);
  TokenList a = greedy_decode(*plain.weights, &plain.bank, gates_for_query(QueryType::visual),
                              prompt, 3, Vocab::kEoa);
  TokenList b = greedy_decode(*with_conn.weights, &with_conn.bank,
                              gates_for_query(QueryType::visual), prompt, 3, Vocab::kEoa);
  CHECK(a == b);
}

TEST_CASE("run state demands frozen weights and encoders when retrieving") {
  Fixture fx;
  CHECK_THROWS_AS(
      make_run_state(fx.weights, fx.kb, nullptr, fx.config(Strategy::memeic_full)),
      PreconditionError);
  TransformerWeights thawed = init_model(fx.weights.config);
  CHECK_THROWS_AS(
      make_run_state(thawed, fx.kb, &fx.encoders, fx.config(Strategy::external_only)),
      PreconditionError);
}
