#include <cmath>

#include "doctest.h"
#include "editlab/memory.hpp"
#include "editlab/rng.hpp"

using namespace editlab;

namespace {

KnowledgeBase world() { return generate_world(51, 24, 4, 2); }

Encoders fresh_encoders(const KnowledgeBase& kb) { return Encoders::init(kb.vocab, 16, 3); }

Tensor vec(std::vector<double> values) { return Tensor::row(std::move(values)); }

// encoder rigged so every query embeds to an exactly representable vector
Encoders rigged_encoders(const KnowledgeBase& kb, const std::vector<double>& text_vec,
                         const std::vector<double>& img_vec) {
  Encoders e = Encoders::init(kb.vocab, static_cast<int>(text_vec.size()), 1);
  e.text_emb.value.fill(0.0);
  for (int64_t r = 0; r < e.text_emb.value.rows(); ++r) e.text_emb.value.at(r, 0) = 1.0;
  e.text_head.value.fill(0.0);
  for (size_t j = 0; j < text_vec.size(); ++j) e.text_head.value.at(0, int64_t(j)) = text_vec[j];
  e.img_emb.value.fill(0.0);
  for (int64_t r = 0; r < e.img_emb.value.rows(); ++r) e.img_emb.value.at(r, 0) = 1.0;
  e.img_head.value.fill(0.0);
  for (size_t j = 0; j < img_vec.size(); ++j) e.img_head.value.at(0, int64_t(j)) = img_vec[j];
  return e;
}

}  // namespace

TEST_CASE("add_edit routes by modality, appends, never dedups") {
  KnowledgeBase kb = world();
  Encoders enc = fresh_encoders(kb);
  EditStream stream = make_edit_stream(kb, 4, 51);
  MemoryStore store;
  for (const EditRecord& r : stream.records) add_edit(store, enc, kb.vocab, r);
  CHECK(store.visual.size() == 4);
  CHECK(store.text.size() == 4);

  TokenList first_q = store.text[0].question;
  Tensor first_emb = store.text[0].q_embedding;
  add_edit(store, enc, kb.vocab, stream.records[1]);  // identical textual edit again
  CHECK(store.text.size() == 5);
  CHECK(store.text[4].question == store.text[0].question);
  // prior entries are untouched by appends
  CHECK(store.text[0].question == first_q);
  CHECK(store.text[0].q_embedding.data == first_emb.data);
}

TEST_CASE("retrieve_text finds the identical question with score ~1 and breaks ties low") {
  KnowledgeBase kb = world();
  Encoders enc = fresh_encoders(kb);
  MemoryStore store;
  for (int i = 0; i < 5; ++i) {
    TextMemoryEntry e;
    e.question = fact_query(kb, i, i % 4, 0).body;
    e.answer = {kb.vocab.entity(i)};
    e.q_embedding = enc.embed_text(e.question);
    store.text.push_back(e);
  }
  auto hit = retrieve_text(store, enc, store.text[2].question);
  REQUIRE(hit.has_value());
  CHECK(hit->index == 2);
  CHECK(hit->score == doctest::Approx(1.0).epsilon(1e-12));

  // exact tie between 0 and 4: identical stored questions
  store.text[4] = store.text[0];
  auto tie = retrieve_text(store, enc, store.text[0].question);
  REQUIRE(tie.has_value());
  CHECK(tie->index == 0);
}

TEST_CASE("retrieve_visual blends image and question similarity") {
  KnowledgeBase kb = world();
  Encoders enc = rigged_encoders(kb, {6, 8}, {3, 4});
  TokenList qimg = render_image_tokens(kb.vocab, {0, 0});
  TokenList qtxt = {Vocab::kWho, kb.vocab.frame(0)};
  // query embeddings are exactly [3,4] (image) and [6,8] (text)
  MemoryStore store;
  VisualMemoryEntry e0, e1;
  e0.image = qimg;
  e0.question = qtxt;
  e0.answer = {kb.vocab.entity(1)};
  e0.img_embedding = vec({3, 4});    // cos = 1 exactly
  e0.q_embedding = vec({-8, 6});     // cos = 0 exactly
  e1 = e0;
  e1.img_embedding = vec({-4, 3});   // cos = 0 exactly
  e1.q_embedding = vec({6, 8});      // cos = 1 exactly
  e1.answer = {kb.vocab.entity(2)};
  store.visual.push_back(e0);
  store.visual.push_back(e1);

  auto img_only = retrieve_visual(store, enc, qimg, qtxt, 1.0);
  REQUIRE(img_only.has_value());
  CHECK(img_only->index == 0);
  auto text_only = retrieve_visual(store, enc, qimg, qtxt, 0.0);
  REQUIRE(text_only.has_value());
  CHECK(text_only->index == 1);
  // image sims (1, 0), text sims (0, 1), alpha 0.5: exact tie, lowest index
  auto tie = retrieve_visual(store, enc, qimg, qtxt, 0.5);
  REQUIRE(tie.has_value());
  CHECK(tie->index == 0);
  CHECK(tie->score == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(retrieve_visual(store, enc, qimg, qtxt, 1.5), PreconditionError);
}

TEST_CASE("empty stores yield no-context results, not errors") {
  KnowledgeBase kb = world();
  Encoders enc = fresh_encoders(kb);
  MemoryStore store;
  CHECK_FALSE(retrieve_text(store, enc, fact_query(kb, 1, 1, 0).body).has_value());
  CHECK_FALSE(retrieve_visual(store, enc, render_image_tokens(kb.vocab, {1, 0}),
                              {Vocab::kWho, kb.vocab.frame(0)}, 0.5)
                  .has_value());
}

TEST_CASE("retrieval matches a brute-force scan on random stores") {
  KnowledgeBase kb = world();
  Encoders enc = fresh_encoders(kb);
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    MemoryStore store;
    int n = 2 + static_cast<int>(rng.uniform_int(25));
    for (int i = 0; i < n; ++i) {
      TextMemoryEntry e;
      e.question = {kb.vocab.relation(int(rng.uniform_int(4)))};
      e.answer = {kb.vocab.entity(0)};
      e.q_embedding = Tensor::zeros({1, enc.dim});
      for (double& x : e.q_embedding.data) x = rng.normal();
      store.text.push_back(std::move(e));
    }
    TokenList q = fact_query(kb, int(rng.uniform_int(24)), int(rng.uniform_int(4)), 0).body;
    Tensor qe = enc.embed_text(q);
    int best = 0;
    double best_s = -2.0;
    for (int i = 0; i < n; ++i) {
      double s = cosine_value(qe, store.text[size_t(i)].q_embedding);
      if (s > best_s) {
        best_s = s;
        best = i;
      }
    }
    auto got = retrieve_text(store, enc, q);
    REQUIRE(got.has_value());
    CHECK(got->index == best);
  }
}

TEST_CASE("inserting an entry only changes the winner if it strictly beats it") {
  KnowledgeBase kb = world();
  Encoders enc = fresh_encoders(kb);
  Rng rng(6);
  TokenList q = fact_query(kb, 3, 1, 0).body;
  Tensor qe = enc.embed_text(q);
  for (int rep = 0; rep < 50; ++rep) {
    MemoryStore store;
    int n = 2 + static_cast<int>(rng.uniform_int(10));
    for (int i = 0; i < n; ++i) {
      TextMemoryEntry e;
      e.question = q;
      e.answer = {kb.vocab.entity(0)};
      e.q_embedding = Tensor::zeros({1, enc.dim});
      for (double& x : e.q_embedding.data) x = rng.normal();
      store.text.push_back(std::move(e));
    }
    auto before = retrieve_text(store, enc, q);
    TextMemoryEntry extra;
    extra.question = q;
    extra.answer = {kb.vocab.entity(1)};
    extra.q_embedding = Tensor::zeros({1, enc.dim});
    for (double& x : extra.q_embedding.data) x = rng.normal();
    double extra_score = cosine_value(qe, extra.q_embedding);
    store.text.push_back(std::move(extra));
    auto after = retrieve_text(store, enc, q);
    REQUIRE(before.has_value());
    REQUIRE(after.has_value());
    if (extra_score > before->score) {
      CHECK(after->index == n);
    } else {
      CHECK(after->index == before->index);
    }
  }
}

TEST_CASE("compositional retrieval substitutes the retrieved identity, right or wrong") {
  KnowledgeBase kb = world();
  Encoders enc = fresh_encoders(kb);
  EditStream stream = make_edit_stream(kb, 3, 51);
  MemoryStore store;
  for (const EditRecord& r : stream.records) add_edit(store, enc, kb.vocab, r);

  const EditRecord& tex = stream.records[1];
  const Probe* comp = tex.probe(ProbeKind::comp);
  REQUIRE(comp != nullptr);
  DecomposedQuery dq = decompose(kb.vocab, comp->query);
  RetrievedContext ctx = retrieve_for_query(store, enc, dq, {-1.0, -1.0}, 0.5);
  CHECK(ctx.visual.attempted);
  CHECK(ctx.text.attempted);
  REQUIRE(ctx.visual.index >= 0);
  // whatever identity came back is substituted into the placeholder
  TokenList expected =
      substitute_placeholder(dq, store.visual[size_t(ctx.visual.index)].answer);
  CHECK(ctx.substituted_question == expected);

  // assembled context is ordered visual pair then textual pair
  TokenList context = assemble_context(kb.vocab, store, dq, ctx);
  REQUIRE(!context.empty());
  CHECK(context[0] == Vocab::kQ);
  size_t second_q = 0;
  for (size_t i = 1; i < context.size(); ++i) {
    if (context[i] == Vocab::kQ) {
      second_q = i;
      break;
    }
  }
  REQUIRE(second_q > 0);
  CHECK(context[1] == Vocab::kWho);
  CHECK(context[second_q + 1] != Vocab::kWho);
}

TEST_CASE("threshold filters context; empty visual store degrades gracefully") {
  KnowledgeBase kb = world();
  Encoders enc = fresh_encoders(kb);
  EditStream stream = make_edit_stream(kb, 3, 51);
  MemoryStore store;
  for (const EditRecord& r : stream.records) add_edit(store, enc, kb.vocab, r);

  const Probe* comp = stream.records[1].probe(ProbeKind::comp);
  DecomposedQuery dq = decompose(kb.vocab, comp->query);
  RetrievedContext ctx = retrieve_for_query(store, enc, dq, {1.5, 1.5}, 0.5);
  CHECK(assemble_context(kb.vocab, store, dq, ctx).empty());

  MemoryStore text_only;
  text_only.text = store.text;
  RetrievedContext partial = retrieve_for_query(text_only, enc, dq, {0.5, 0.5}, 0.5);
  CHECK(partial.visual.attempted);
  CHECK(partial.visual.index == -1);
  CHECK(partial.substituted_question == dq.text_question);  // placeholder kept
  CHECK(partial.text.attempted);
}

TEST_CASE("textual context renders exactly one qa pair") {
  KnowledgeBase kb = world();
  Encoders enc = fresh_encoders(kb);
  EditStream stream = make_edit_stream(kb, 3, 51);
  MemoryStore store;
  for (const EditRecord& r : stream.records) add_edit(store, enc, kb.vocab, r);
  DecomposedQuery dq = decompose(kb.vocab, stream.records[1].edit_prompt);
  RetrievedContext ctx = retrieve_for_query(store, enc, dq, {-1.0, -1.0}, 0.5);
  TokenList context = assemble_context(kb.vocab, store, dq, ctx);
  int q_markers = 0, eoa_markers = 0;
  for (TokenId t : context) {
    q_markers += t == Vocab::kQ;
    eoa_markers += t == Vocab::kEoa;
  }
  CHECK(q_markers == 1);
  CHECK(eoa_markers == 1);
}

TEST_CASE("trained encoders beat untrained retrieval and clear the accuracy bar") {
  KnowledgeBase kb = generate_world(52, 200, 6, 2);
  auto pairs = make_training_pairs(kb, 120, 52, {});
  EncoderDataset data = build_encoder_dataset(kb, pairs);

  // untrained embeddings retain some token-overlap signal but are not
  // reliable at store scale
  Encoders untrained = Encoders::init(kb.vocab, 32, 7);
  double before = top1_accuracy(untrained, data, data.validation, 0.5);
  CHECK(before <= 0.93);

  EncoderTrainOptions opts;
  opts.max_iters = 400;
  opts.seed = 7;
  Encoders trained = train_encoders(kb.vocab, data, opts);
  CHECK(trained.frozen);
  double after = top1_accuracy(trained, data, data.validation, 0.5);
  CHECK(after >= 0.95);
  CHECK(after > before);

  // calibrated thresholds separate matched queries from out-of-scope ones
  TauCalibration cal = calibrate_tau(trained, data, 0.5);
  CHECK(cal.max_oos_text < cal.tau.text);
  CHECK(cal.max_oos_visual < cal.tau.visual);
  CHECK(cal.min_exact_text > cal.tau.text);
  CHECK(cal.min_exact_visual > cal.tau.visual);
}
