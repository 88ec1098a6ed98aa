#include "doctest.h"
#include "editlab/decompose.hpp"

using namespace editlab;

namespace {

KnowledgeBase world() { return generate_world(41, 16, 4, 2); }

}  // namespace

TEST_CASE("pure visual query yields an image sub-query only") {
  KnowledgeBase kb = world();
  Query q = identity_query(kb, {5, 0}, 2);
  DecomposedQuery dq = decompose(kb.vocab, q);
  CHECK(dq.qtype == QueryType::visual);
  CHECK(dq.has_visual());
  CHECK_FALSE(dq.has_text());
  CHECK(dq.visual_image == render_image_tokens(kb.vocab, {5, 0}));
}

TEST_CASE("textual query yields a text sub-query without a placeholder") {
  KnowledgeBase kb = world();
  Query q = fact_query(kb, 3, 1, 0);
  DecomposedQuery dq = decompose(kb.vocab, q);
  CHECK(dq.qtype == QueryType::textual);
  CHECK_FALSE(dq.has_visual());
  CHECK(dq.text_question == q.body);
  CHECK(dq.placeholder_index == -1);
}

TEST_CASE("compositional query splits into identity and placeholder-tagged parts") {
  KnowledgeBase kb = world();
  Query q = compositional_query(kb, 2, 3, {7, 0});
  DecomposedQuery dq = decompose(kb.vocab, q);
  CHECK(dq.qtype == QueryType::compositional);
  REQUIRE(dq.has_visual());
  REQUIRE(dq.has_text());
  // the visual sub-question asks for the depicted identity
  CHECK(dq.visual_question[0] == Vocab::kWho);
  CHECK(dq.visual_image == render_image_tokens(kb.vocab, {7, 0}));
  int placeholders = 0;
  for (TokenId t : dq.text_question) placeholders += t == Vocab::kShown;
  CHECK(placeholders == 1);
  CHECK(dq.text_question[static_cast<size_t>(dq.placeholder_index)] == Vocab::kShown);
}

TEST_CASE("substitution rebuilds the canonical fact question") {
  KnowledgeBase kb = world();
  Query q = compositional_query(kb, 2, 0, {7, 0});
  DecomposedQuery dq = decompose(kb.vocab, q);
  TokenList substituted = substitute_placeholder(dq, {kb.vocab.entity(9)});
  CHECK(substituted == fact_query(kb, 9, 2, 0).body);
}

TEST_CASE("decompose is idempotent on its own image sub-query") {
  KnowledgeBase kb = world();
  Query q = compositional_query(kb, 1, 2, {4, 1});
  DecomposedQuery dq = decompose(kb.vocab, q);
  Query sub;
  sub.qtype = QueryType::visual;
  sub.body = dq.visual_question;
  sub.body.push_back(Vocab::kImg);
  sub.body.insert(sub.body.end(), dq.visual_image.begin(), dq.visual_image.end());
  DecomposedQuery again = decompose(kb.vocab, sub);
  CHECK(again.qtype == QueryType::visual);
  CHECK(again.visual_question == dq.visual_question);
  CHECK(again.visual_image == dq.visual_image);
}

TEST_CASE("unrecognized templates are surfaced, not guessed") {
  KnowledgeBase kb = world();
  Query bad;
  bad.qtype = QueryType::textual;
  bad.body = {Vocab::kEoa, Vocab::kA, Vocab::kQ};
  CHECK_THROWS_AS(decompose(kb.vocab, bad), DecompositionError);

  Query truncated = identity_query(kb, {2, 0}, 1);
  truncated.body.pop_back();
  CHECK_THROWS_AS(decompose(kb.vocab, truncated), DecompositionError);

  Query trailing = fact_query(kb, 2, 1, 0);
  trailing.body.push_back(kb.vocab.entity(3));
  CHECK_THROWS_AS(decompose(kb.vocab, trailing), DecompositionError);
}

TEST_CASE("substitution preconditions") {
  KnowledgeBase kb = world();
  DecomposedQuery dq = decompose(kb.vocab, fact_query(kb, 3, 1, 0));
  CHECK_THROWS_AS(substitute_placeholder(dq, {kb.vocab.entity(1)}), PreconditionError);
  DecomposedQuery comp = decompose(kb.vocab, compositional_query(kb, 1, 0, {3, 0}));
  CHECK_THROWS_AS(substitute_placeholder(comp, {}), PreconditionError);
}

TEST_CASE("every generated probe decomposes to its own type") {
  KnowledgeBase kb = world();
  EditStream stream = make_edit_stream(kb, 5, 41);
  for (const EditRecord& rec : stream.records) {
    for (const Probe& probe : rec.probes) {
      DecomposedQuery dq = decompose(kb.vocab, probe.query);
      CHECK(dq.qtype == probe.query.qtype);
    }
  }
}
