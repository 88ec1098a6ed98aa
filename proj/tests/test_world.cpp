#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "editlab/io.hpp"
#include "editlab/world.hpp"

using namespace editlab;

TEST_CASE("world generation is deterministic and counts facts") {
  KnowledgeBase a = generate_world(7, 20, 5, 2);
  KnowledgeBase b = generate_world(7, 20, 5, 2);
  CHECK(a.facts.size() == 40);
  REQUIRE(a.facts.size() == b.facts.size());
  for (size_t i = 0; i < a.facts.size(); ++i) {
    CHECK(a.facts[i].subject == b.facts[i].subject);
    CHECK(a.facts[i].relation == b.facts[i].relation);
    CHECK(a.facts[i].object == b.facts[i].object);
  }
}

TEST_CASE("subject-relation keys are unique and every entity is covered") {
  KnowledgeBase kb = generate_world(9, 30, 6, 3);
  std::set<std::pair<int, int>> keys;
  for (const Fact& f : kb.facts) {
    CHECK(keys.insert({f.subject, f.relation}).second);
    CHECK(f.subject != f.object);
  }
  for (int e = 0; e < 30; ++e) CHECK(!kb.facts_of(e).empty());
}

TEST_CASE("world rejects invalid configurations") {
  CHECK_THROWS_AS(generate_world(1, 0, 3, 1), ConfigError);
  CHECK_THROWS_AS(generate_world(1, 10, 2, 3), ConfigError);  // functional invariant
}

TEST_CASE("image renders are deterministic, variants overlap correctly") {
  KnowledgeBase kb = generate_world(11, 40, 4, 1);
  const Vocab& v = kb.vocab;
  CHECK(render_image_tokens(v, {3, 1}) == render_image_tokens(v, {3, 1}));

  // variants of one entity share at least 75% of positions
  for (int e = 0; e < 40; ++e) {
    TokenList a = render_image_tokens(v, {e, 0});
    TokenList b = render_image_tokens(v, {e, 5});
    int shared = 0;
    for (size_t i = 0; i < a.size(); ++i) shared += a[i] == b[i];
    CHECK(static_cast<double>(shared) / static_cast<double>(a.size()) >= 0.75);
  }
  // different entities stay far apart on average
  double total = 0.0;
  int n_pairs = 0;
  for (int e = 0; e < 40; ++e) {
    for (int f = e + 1; f < 40; f += 7) {
      TokenList a = render_image_tokens(v, {e, 0});
      TokenList b = render_image_tokens(v, {f, 0});
      int shared = 0;
      for (size_t i = 0; i < a.size(); ++i) shared += a[i] == b[i];
      total += static_cast<double>(shared) / static_cast<double>(a.size());
      ++n_pairs;
    }
  }
  CHECK(total / n_pairs < 0.5);
}

TEST_CASE("edit stream alternates linked pairs without entity reuse") {
  KnowledgeBase kb = generate_world(13, 30, 5, 2);
  EditStream stream = make_edit_stream(kb, 10, 13);
  REQUIRE(stream.records.size() == 20);
  std::set<int> used;
  for (size_t i = 0; i < stream.records.size(); ++i) {
    const EditRecord& r = stream.records[i];
    CHECK(r.index == static_cast<int>(i));
    if (i % 2 == 0) {
      CHECK(r.kind == EditKind::visual);
      CHECK(used.insert(r.visual.old_entity).second);
      CHECK(used.insert(r.visual.new_entity).second);
    } else {
      CHECK(r.kind == EditKind::textual);
      // the textual edit is about the paired visual edit's new entity
      CHECK(r.textual.subject == stream.records[i - 1].visual.new_entity);
      CHECK(r.textual.new_object != r.textual.old_object);
    }
  }
}

TEST_CASE("edit stream demands enough entities") {
  KnowledgeBase kb = generate_world(17, 10, 4, 1);
  CHECK_THROWS_AS(make_edit_stream(kb, 4, 17), ConfigError);
}

TEST_CASE("probe sets partition edited and untouched entities") {
  KnowledgeBase kb = generate_world(19, 40, 5, 2);
  EditStream stream = make_edit_stream(kb, 8, 19);
  std::set<int> touched(stream.touched_entities.begin(), stream.touched_entities.end());
  for (const EditRecord& r : stream.records) {
    const Probe* tloc = r.probe(ProbeKind::text_loc);
    const Probe* iloc = r.probe(ProbeKind::image_loc);
    REQUIRE(tloc != nullptr);
    REQUIRE(iloc != nullptr);
    // locality prompts never mention edited entities
    for (TokenId t : tloc->query.body) {
      if (kb.vocab.is_entity(t)) CHECK(touched.count(kb.vocab.entity_of(t)) == 0);
    }
    CHECK(touched.count(iloc->query.image->entity_id) == 0);

    if (r.kind == EditKind::visual) {
      CHECK(r.probe(ProbeKind::vis_rel) != nullptr);
      const Probe* igen = r.probe(ProbeKind::image_gen);
      REQUIRE(igen != nullptr);
      // image-generality uses a variant unseen during editing
      CHECK(igen->query.image->variant_seed != r.visual.image.variant_seed);
      CHECK(r.probe(ProbeKind::comp) == nullptr);
    } else {
      CHECK(r.probe(ProbeKind::text_rel) != nullptr);
      const Probe* comp = r.probe(ProbeKind::comp);
      REQUIRE(comp != nullptr);
      // compositional gold is the textual edit's new object
      CHECK(comp->gold == TokenList{kb.vocab.entity(r.textual.new_object)});
      CHECK(comp->query.image->entity_id == r.visual.image.entity_id);
    }
    const Probe* tgen = r.probe(ProbeKind::text_gen);
    REQUIRE(tgen != nullptr);
    CHECK(tgen->query.body != r.edit_prompt.body);  // a true rephrase
  }
}

TEST_CASE("world and stream files regenerate byte-identically") {
  namespace fs = std::filesystem;
  KnowledgeBase kb = generate_world(23, 24, 4, 2);
  EditStream stream = make_edit_stream(kb, 6, 23);
  fs::path dir = fs::temp_directory_path() / "editlab_world_test";
  fs::create_directories(dir);
  save_world(dir / "w1.json", kb);
  save_world(dir / "w2.json", kb);
  CHECK(read_text_file(dir / "w1.json") == read_text_file(dir / "w2.json"));
  save_stream(dir / "s1.jsonl", stream);
  save_stream(dir / "s2.jsonl", stream);
  CHECK(read_text_file(dir / "s1.jsonl") == read_text_file(dir / "s2.jsonl"));

  KnowledgeBase kb2 = load_world(dir / "w1.json");
  EditStream stream2 = load_stream(dir / "s1.jsonl", kb2);
  save_stream(dir / "s3.jsonl", stream2);
  CHECK(read_text_file(dir / "s1.jsonl") == read_text_file(dir / "s3.jsonl"));
  fs::remove_all(dir);
}

TEST_CASE("training pairs allow reuse but respect exclusions") {
  KnowledgeBase kb = generate_world(29, 30, 5, 2);
  std::vector<int> exclude;
  for (int e = 0; e < 20; ++e) exclude.push_back(e);
  auto pairs = make_training_pairs(kb, 40, 29, exclude);
  CHECK(pairs.size() == 40);
  for (const TrainingPair& tp : pairs) {
    CHECK(tp.visual.visual.old_entity >= 20);
    CHECK(tp.visual.visual.new_entity >= 20);
    CHECK(tp.visual.visual.old_entity != tp.visual.visual.new_entity);
    CHECK(tp.textual.textual.subject == tp.visual.visual.new_entity);
    CHECK(tp.comp.gold == TokenList{kb.vocab.entity(tp.textual.textual.new_object)});
  }
}

TEST_CASE("pretrain corpus sequences are well-formed") {
  KnowledgeBase kb = generate_world(31, 24, 4, 2);
  ModelConfig cfg = default_model_config(kb);
  auto corpus = build_pretrain_corpus(kb);
  CHECK(corpus.size() >= kb.entities.size() * 6);
  for (const TrainSequence& s : corpus) {
    CHECK(s.tokens.size() <= static_cast<size_t>(cfg.max_seq_len));
    CHECK(s.answer_start >= 1);
    CHECK(s.answer_start < static_cast<int64_t>(s.tokens.size()));
    for (TokenId t : s.tokens) {
      CHECK(t >= 0);
      CHECK(t < cfg.vocab_total());
    }
    CHECK(s.tokens.back() == Vocab::kEoa);
  }
}
