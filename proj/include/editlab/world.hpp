#pragma once

#include <optional>
#include <string>
#include <vector>

#include "editlab/model.hpp"
#include "editlab/types.hpp"

namespace editlab {

// Joint token space:
//   [0..6)                control/marker words  (<q> <a> <eoa> <img> who shown)
//   [6..6+n_frames)       question frames
//   [..+n_relations)      relation words
//   [..+n_entities)       entity names (one token each)
//   [..+image_alphabet)   image patch tokens
struct Vocab {
  int n_frames = 4;
  int n_relations = 0;
  int n_entities = 0;
  int image_alphabet = 96;
  int image_positions = 12;  // tokens per rendered image

  static constexpr TokenId kQ = 0;
  static constexpr TokenId kA = 1;
  static constexpr TokenId kEoa = 2;
  static constexpr TokenId kImg = 3;
  static constexpr TokenId kWho = 4;
  static constexpr TokenId kShown = 5;
  static constexpr int kMarkers = 6;

  TokenId frame(int f) const;
  TokenId relation(int r) const;
  TokenId entity(int e) const;
  TokenId image_token(int i) const;

  bool is_frame(TokenId t) const;
  bool is_relation(TokenId t) const;
  bool is_entity(TokenId t) const;
  bool is_image_token(TokenId t) const;
  int frame_of(TokenId t) const;
  int relation_of(TokenId t) const;
  int entity_of(TokenId t) const;
  int image_index_of(TokenId t) const;

  int text_size() const { return kMarkers + n_frames + n_relations + n_entities; }
  int image_size() const { return image_alphabet; }
  std::string token_name(TokenId t) const;
  std::string render(const TokenList& tokens) const;
};

struct Entity {
  int id = 0;
  TokenList name;  // single entity token
};

// A rendered image is a pure function of (entity_id, variant_seed).
struct ImageSpec {
  int entity_id = 0;
  int variant_seed = 0;
};

struct Fact {
  int subject = 0;
  int relation = 0;
  int object = 0;
};

struct WorldConfig {
  uint64_t seed = 1;
  int n_entities = 24;
  int n_relations = 6;
  int facts_per_entity = 2;
  int image_positions = 12;
  int image_alphabet = 96;
  int n_frames = 4;
};

struct KnowledgeBase {
  WorldConfig config;
  Vocab vocab;
  std::vector<Entity> entities;
  std::vector<Fact> facts;

  std::vector<const Fact*> facts_of(int subject) const;
  const Fact* fact(int subject, int relation) const;  // nullptr if absent
  std::vector<int> object_pool(int relation) const;   // ordered, deduplicated
};

KnowledgeBase generate_world(const WorldConfig& config);
KnowledgeBase generate_world(uint64_t seed, int n_entities, int n_relations,
                             int facts_per_entity);

// Majority of positions depend only on the entity, a fixed minority on the
// variant, so variants of one entity stay near each other.
TokenList render_image_tokens(const Vocab& vocab, ImageSpec spec, int n_img_tokens);
TokenList render_image_tokens(const Vocab& vocab, ImageSpec spec);

// Typed question. `body` carries the grammar tokens (markers excluded):
//   visual          [who frame <img> i...]
//   textual         [rel frame entity]
//   compositional   [rel frame shown <img> i...]
struct Query {
  QueryType qtype = QueryType::textual;
  TokenList body;
  std::optional<ImageSpec> image;
  std::string text;  // readable form for the dataset files
};

Query identity_query(const KnowledgeBase& kb, ImageSpec image, int frame);
Query fact_query(const KnowledgeBase& kb, int subject, int relation, int frame);
Query compositional_query(const KnowledgeBase& kb, int relation, int frame, ImageSpec image);

enum class ProbeKind {
  vis_rel,
  text_rel,
  text_gen,
  image_gen,
  text_loc,
  image_loc,
  comp,
};
const char* to_string(ProbeKind k);
std::optional<ProbeKind> probe_kind_from(const std::string& name);

struct Probe {
  ProbeKind kind;
  Query query;
  TokenList gold;  // locality probes are judged against the pre-edit model instead
};

struct VisualEditPayload {
  ImageSpec image;
  int old_entity = 0;
  int new_entity = 0;
};

struct TextualEditPayload {
  int subject = 0;
  int relation = 0;
  int old_object = 0;
  int new_object = 0;
};

// One atomic edit plus its probe set. Visual/textual records arrive in
// linked pairs; the compositional probe lives on the textual record, where
// the pair is complete.
struct EditRecord {
  int index = 0;  // position in the stream
  int pair = 0;
  EditKind kind = EditKind::visual;
  VisualEditPayload visual;
  TextualEditPayload textual;
  Query edit_prompt;     // canonical question the edit trains on
  TokenList edit_target;  // new answer
  std::vector<Probe> probes;

  const Probe* probe(ProbeKind kind) const;
};

// The held-out image variant / rephrase frame conventions:
//   variant 0: edit image, 1: pretraining extra, 2: image-generality probe,
//   3: encoder validation. Frame 0 is canonical; frames 1..3 are rephrases.
struct EditStream {
  std::vector<EditRecord> records;
  std::vector<int> touched_entities;
  std::vector<int> untouched_entities;
};

EditStream make_edit_stream(const KnowledgeBase& kb, int n_pairs, uint64_t seed);

std::vector<Probe> make_probe_set(const EditRecord& edit, const KnowledgeBase& kb,
                                  const std::vector<int>& untouched_pool, uint64_t seed);

// Independent compositional training example (stage 1 / stage 2). Entity
// reuse across pairs is allowed; `exclude` keeps test-stream entities out.
struct TrainingPair {
  EditRecord visual;
  EditRecord textual;
  Probe comp;
};

std::vector<TrainingPair> make_training_pairs(const KnowledgeBase& kb, int n_pairs, uint64_t seed,
                                              const std::vector<int>& exclude);

// QA corpus the base model is pretrained on: plain recall, compositional
// questions, and context-following patterns (prepended QA pairs whose answer
// overrides or is irrelevant to the question).
std::vector<TrainSequence> build_pretrain_corpus(const KnowledgeBase& kb);

// Prompt assembly shared by training and evaluation:
// context pairs are rendered as  <q> body <a> answer <eoa>.
TokenList render_qa(const Query& q, const TokenList& answer);
TokenList render_prompt(const TokenList& context, const Query& q);

ModelConfig default_model_config(const KnowledgeBase& kb);

}  // namespace editlab
