#include "editlab/world.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "editlab/errors.hpp"
#include "editlab/rng.hpp"

namespace editlab {

TokenId Vocab::frame(int f) const { return kMarkers + f; }
TokenId Vocab::relation(int r) const { return kMarkers + n_frames + r; }
TokenId Vocab::entity(int e) const { return kMarkers + n_frames + n_relations + e; }
TokenId Vocab::image_token(int i) const { return text_size() + i; }

bool Vocab::is_frame(TokenId t) const { return t >= kMarkers && t < kMarkers + n_frames; }
bool Vocab::is_relation(TokenId t) const {
  return t >= kMarkers + n_frames && t < kMarkers + n_frames + n_relations;
}
bool Vocab::is_entity(TokenId t) const {
  return t >= kMarkers + n_frames + n_relations && t < text_size();
}
bool Vocab::is_image_token(TokenId t) const {
  return t >= text_size() && t < text_size() + image_alphabet;
}
int Vocab::frame_of(TokenId t) const { return t - kMarkers; }
int Vocab::relation_of(TokenId t) const { return t - kMarkers - n_frames; }
int Vocab::entity_of(TokenId t) const { return t - kMarkers - n_frames - n_relations; }
int Vocab::image_index_of(TokenId t) const { return t - text_size(); }

std::string Vocab::token_name(TokenId t) const {
  switch (t) {
    case kQ: return "q:";
    case kA: return "a:";
    case kEoa: return "<eoa>";
    case kImg: return "<img>";
    case kWho: return "who";
    case kShown: return "shown";
    default: break;
  }
  if (is_frame(t)) return "f" + std::to_string(frame_of(t));
  if (is_relation(t)) return "rel" + std::to_string(relation_of(t));
  if (is_entity(t)) return "e" + std::to_string(entity_of(t));
  if (is_image_token(t)) return "i" + std::to_string(image_index_of(t));
  return "?" + std::to_string(t);
}

std::string Vocab::render(const TokenList& tokens) const {
  std::ostringstream os;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) os << ' ';
    os << token_name(tokens[i]);
  }
  return os.str();
}

std::vector<const Fact*> KnowledgeBase::facts_of(int subject) const {
  std::vector<const Fact*> out;
  for (const Fact& f : facts) {
    if (f.subject == subject) out.push_back(&f);
  }
  return out;
}

const Fact* KnowledgeBase::fact(int subject, int relation) const {
  for (const Fact& f : facts) {
    if (f.subject == subject && f.relation == relation) return &f;
  }
  return nullptr;
}

std::vector<int> KnowledgeBase::object_pool(int relation) const {
  std::vector<int> pool;
  for (const Fact& f : facts) {
    if (f.relation == relation && std::find(pool.begin(), pool.end(), f.object) == pool.end()) {
      pool.push_back(f.object);
    }
  }
  return pool;
}

KnowledgeBase generate_world(const WorldConfig& config) {
  if (config.n_entities < 1 || config.n_relations < 1 || config.facts_per_entity < 1) {
    throw ConfigError("world counts must be >= 1");
  }
  if (config.facts_per_entity > config.n_relations) {
    throw ConfigError("facts_per_entity exceeds relation count; (subject, relation) is functional");
  }
  if (config.image_positions < 4 || config.image_alphabet < 2) {
    throw ConfigError("image configuration too small");
  }
  Vocab vocab;
  vocab.n_frames = config.n_frames;
  vocab.n_relations = config.n_relations;
  vocab.n_entities = config.n_entities;
  vocab.image_alphabet = config.image_alphabet;
  vocab.image_positions = config.image_positions;
  if (vocab.text_size() + vocab.image_size() > 32768) {
    throw ConfigError("vocab exhausted: too many entities/relations for the token space");
  }

  KnowledgeBase kb;
  kb.config = config;
  kb.vocab = vocab;
  for (int e = 0; e < config.n_entities; ++e) {
    kb.entities.push_back(Entity{e, {vocab.entity(e)}});
  }
  for (int e = 0; e < config.n_entities; ++e) {
    uint64_t base = hash_combine(hash_combine(config.seed, 0xfac7), uint64_t(e));
    int first_rel = static_cast<int>(base % uint64_t(config.n_relations));
    for (int j = 0; j < config.facts_per_entity; ++j) {
      int r = (first_rel + j) % config.n_relations;
      uint64_t oh = hash_combine(base, uint64_t(j) + 1);
      int obj = static_cast<int>(oh % uint64_t(config.n_entities - 1));
      if (obj >= e) ++obj;  // object != subject
      kb.facts.push_back(Fact{e, r, obj});
    }
  }
  return kb;
}

KnowledgeBase generate_world(uint64_t seed, int n_entities, int n_relations,
                             int facts_per_entity) {
  WorldConfig cfg;
  cfg.seed = seed;
  cfg.n_entities = n_entities;
  cfg.n_relations = n_relations;
  cfg.facts_per_entity = facts_per_entity;
  return generate_world(cfg);
}

TokenList render_image_tokens(const Vocab& vocab, ImageSpec spec, int n_img_tokens) {
  if (n_img_tokens < 4) throw ConfigError("image render needs at least 4 tokens");
  TokenList out;
  out.reserve(static_cast<size_t>(n_img_tokens));
  int n_variant = n_img_tokens / 4;  // the trailing quarter varies per variant
  int n_stable = n_img_tokens - n_variant;
  uint64_t eh = hash_combine(0x696d67, uint64_t(spec.entity_id));
  uint64_t vh = hash_combine(eh, uint64_t(spec.variant_seed) + 0x517);
  for (int p = 0; p < n_img_tokens; ++p) {
    uint64_t h = p < n_stable ? hash_combine(eh, uint64_t(p)) : hash_combine(vh, uint64_t(p));
    out.push_back(vocab.image_token(static_cast<int>(h % uint64_t(vocab.image_alphabet))));
  }
  return out;
}

TokenList render_image_tokens(const Vocab& vocab, ImageSpec spec) {
  return render_image_tokens(vocab, spec, vocab.image_positions);
}

Query identity_query(const KnowledgeBase& kb, ImageSpec image, int frame) {
  const Vocab& v = kb.vocab;
  Query q;
  q.qtype = QueryType::visual;
  q.body = {Vocab::kWho, v.frame(frame), Vocab::kImg};
  TokenList img = render_image_tokens(v, image);
  q.body.insert(q.body.end(), img.begin(), img.end());
  q.image = image;
  q.text = "who f" + std::to_string(frame) + " img(e" + std::to_string(image.entity_id) + ",v" +
           std::to_string(image.variant_seed) + ")";
  return q;
}

Query fact_query(const KnowledgeBase& kb, int subject, int relation, int frame) {
  const Vocab& v = kb.vocab;
  Query q;
  q.qtype = QueryType::textual;
  q.body = {v.relation(relation), v.frame(frame), v.entity(subject)};
  q.text = "rel" + std::to_string(relation) + " f" + std::to_string(frame) + " e" +
           std::to_string(subject);
  return q;
}

Query compositional_query(const KnowledgeBase& kb, int relation, int frame, ImageSpec image) {
  const Vocab& v = kb.vocab;
  Query q;
  q.qtype = QueryType::compositional;
  q.body = {v.relation(relation), v.frame(frame), Vocab::kShown, Vocab::kImg};
  TokenList img = render_image_tokens(v, image);
  q.body.insert(q.body.end(), img.begin(), img.end());
  q.image = image;
  q.text = "rel" + std::to_string(relation) + " f" + std::to_string(frame) + " shown img(e" +
           std::to_string(image.entity_id) + ",v" + std::to_string(image.variant_seed) + ")";
  return q;
}

const char* to_string(ProbeKind k) {
  switch (k) {
    case ProbeKind::vis_rel: return "vis_rel";
    case ProbeKind::text_rel: return "text_rel";
    case ProbeKind::text_gen: return "text_gen";
    case ProbeKind::image_gen: return "image_gen";
    case ProbeKind::text_loc: return "text_loc";
    case ProbeKind::image_loc: return "image_loc";
    case ProbeKind::comp: return "comp";
  }
  return "?";
}

std::optional<ProbeKind> probe_kind_from(const std::string& name) {
  for (ProbeKind k : {ProbeKind::vis_rel, ProbeKind::text_rel, ProbeKind::text_gen,
                      ProbeKind::image_gen, ProbeKind::text_loc, ProbeKind::image_loc,
                      ProbeKind::comp}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

const Probe* EditRecord::probe(ProbeKind want) const {
  for (const Probe& p : probes) {
    if (p.kind == want) return &p;
  }
  return nullptr;
}

std::vector<Probe> make_probe_set(const EditRecord& edit, const KnowledgeBase& kb,
                                  const std::vector<int>& untouched_pool, uint64_t seed) {
  if (untouched_pool.size() < 2) {
    throw ConfigError("probe construction needs at least two untouched entities");
  }
  uint64_t h = hash_combine(hash_combine(seed, 0x70726f), uint64_t(edit.index));
  std::vector<Probe> probes;

  if (edit.kind == EditKind::visual) {
    TokenList gold = {kb.vocab.entity(edit.visual.new_entity)};
    probes.push_back({ProbeKind::vis_rel, identity_query(kb, edit.visual.image, 0), gold});
    int rephrase = 1 + static_cast<int>(hash_combine(h, 1) % uint64_t(kb.vocab.n_frames - 1));
    probes.push_back({ProbeKind::text_gen, identity_query(kb, edit.visual.image, rephrase), gold});
    // image variant unseen during pretraining and editing
    ImageSpec variant{edit.visual.image.entity_id, 2};
    probes.push_back({ProbeKind::image_gen, identity_query(kb, variant, 0), gold});
  } else {
    TokenList gold = {kb.vocab.entity(edit.textual.new_object)};
    probes.push_back(
        {ProbeKind::text_rel, fact_query(kb, edit.textual.subject, edit.textual.relation, 0), gold});
    int rephrase = 1 + static_cast<int>(hash_combine(h, 2) % uint64_t(kb.vocab.n_frames - 1));
    probes.push_back(
        {ProbeKind::text_gen,
         fact_query(kb, edit.textual.subject, edit.textual.relation, rephrase), gold});
  }

  // locality targets are drawn from entities the stream never touches
  int loc_a = untouched_pool[hash_combine(h, 3) % untouched_pool.size()];
  int loc_b = untouched_pool[hash_combine(h, 4) % untouched_pool.size()];
  const Fact* loc_fact = kb.facts_of(loc_a).front();
  probes.push_back({ProbeKind::text_loc, fact_query(kb, loc_a, loc_fact->relation, 0),
                    {kb.vocab.entity(loc_fact->object)}});
  probes.push_back({ProbeKind::image_loc, identity_query(kb, ImageSpec{loc_b, 0}, 0),
                    {kb.vocab.entity(loc_b)}});

  if (edit.kind == EditKind::textual) {
    // composition completes at the textual edit; the gold answer is its new object
    int frame = static_cast<int>(hash_combine(h, 5) % uint64_t(kb.vocab.n_frames));
    probes.push_back({ProbeKind::comp,
                      compositional_query(kb, edit.textual.relation, frame, edit.visual.image),
                      {kb.vocab.entity(edit.textual.new_object)}});
  }
  return probes;
}

namespace {

int pick_new_object(const KnowledgeBase& kb, int relation, int old_object, uint64_t h) {
  std::vector<int> pool = kb.object_pool(relation);
  pool.erase(std::remove(pool.begin(), pool.end(), old_object), pool.end());
  if (pool.empty()) {
    throw ConfigError("object pool for relation " + std::to_string(relation) +
                      " has no replacement candidates");
  }
  return pool[h % pool.size()];
}

EditRecord build_visual_record(const KnowledgeBase& kb, int index, int pair, int old_entity,
                               int new_entity) {
  EditRecord rec;
  rec.index = index;
  rec.pair = pair;
  rec.kind = EditKind::visual;
  rec.visual = VisualEditPayload{ImageSpec{old_entity, 0}, old_entity, new_entity};
  rec.edit_prompt = identity_query(kb, rec.visual.image, 0);
  rec.edit_target = {kb.vocab.entity(new_entity)};
  return rec;
}

EditRecord build_textual_record(const KnowledgeBase& kb, int index, int pair,
                                const VisualEditPayload& linked_visual, uint64_t h) {
  int subject = linked_visual.new_entity;
  const Fact* f = kb.facts_of(subject).front();
  EditRecord rec;
  rec.index = index;
  rec.pair = pair;
  rec.kind = EditKind::textual;
  rec.visual = linked_visual;  // textual records carry the linked visual payload
  rec.textual.subject = subject;
  rec.textual.relation = f->relation;
  rec.textual.old_object = f->object;
  rec.textual.new_object = pick_new_object(kb, f->relation, f->object, h);
  rec.edit_prompt = fact_query(kb, subject, f->relation, 0);
  rec.edit_target = {kb.vocab.entity(rec.textual.new_object)};
  return rec;
}

}  // namespace

EditStream make_edit_stream(const KnowledgeBase& kb, int n_pairs, uint64_t seed) {
  if (n_pairs < 1) throw ConfigError("edit stream needs at least one pair");
  int needed = 2 * n_pairs + 4;  // pairs plus a locality reserve
  if (needed > kb.config.n_entities) {
    throw ConfigError("insufficient entities: " + std::to_string(kb.config.n_entities) +
                      " available, " + std::to_string(needed) + " required for " +
                      std::to_string(n_pairs) + " pairs");
  }
  std::vector<int> ids(static_cast<size_t>(kb.config.n_entities));
  for (int i = 0; i < kb.config.n_entities; ++i) ids[static_cast<size_t>(i)] = i;
  Rng rng = Rng::fork(seed, 0x7374);
  rng.shuffle(ids);

  EditStream stream;
  stream.touched_entities.assign(ids.begin(), ids.begin() + 2 * n_pairs);
  stream.untouched_entities.assign(ids.begin() + 2 * n_pairs, ids.end());

  for (int k = 0; k < n_pairs; ++k) {
    int a = ids[static_cast<size_t>(2 * k)];
    int b = ids[static_cast<size_t>(2 * k + 1)];
    EditRecord vis = build_visual_record(kb, 2 * k, k, a, b);
    EditRecord tex = build_textual_record(kb, 2 * k + 1, k, vis.visual,
                                          hash_combine(hash_combine(seed, 0x6f62), uint64_t(k)));
    vis.probes = make_probe_set(vis, kb, stream.untouched_entities, seed);
    tex.probes = make_probe_set(tex, kb, stream.untouched_entities, seed);
    stream.records.push_back(std::move(vis));
    stream.records.push_back(std::move(tex));
  }
  return stream;
}

std::vector<TrainingPair> make_training_pairs(const KnowledgeBase& kb, int n_pairs, uint64_t seed,
                                              const std::vector<int>& exclude) {
  std::vector<int> allowed;
  for (int e = 0; e < kb.config.n_entities; ++e) {
    if (std::find(exclude.begin(), exclude.end(), e) == exclude.end()) allowed.push_back(e);
  }
  if (allowed.size() < 4) throw ConfigError("too few entities left for training pairs");

  std::vector<TrainingPair> pairs;
  for (int k = 0; k < n_pairs; ++k) {
    uint64_t h = hash_combine(hash_combine(seed, 0x747261), uint64_t(k));
    int a = allowed[hash_combine(h, 1) % allowed.size()];
    int b = allowed[hash_combine(h, 2) % allowed.size()];
    if (b == a) b = allowed[(hash_combine(h, 2) % allowed.size() + 1) % allowed.size()];
    TrainingPair tp;
    tp.visual = build_visual_record(kb, k, k, a, b);
    tp.textual = build_textual_record(kb, k, k, tp.visual.visual, hash_combine(h, 3));
    int frame = static_cast<int>(hash_combine(h, 4) % uint64_t(kb.vocab.n_frames));
    tp.comp = Probe{ProbeKind::comp,
                    compositional_query(kb, tp.textual.textual.relation, frame, tp.visual.visual.image),
                    {kb.vocab.entity(tp.textual.textual.new_object)}};
    pairs.push_back(std::move(tp));
  }
  return pairs;
}

TokenList render_qa(const Query& q, const TokenList& answer) {
  TokenList out;
  out.reserve(q.body.size() + answer.size() + 3);
  out.push_back(Vocab::kQ);
  out.insert(out.end(), q.body.begin(), q.body.end());
  out.push_back(Vocab::kA);
  out.insert(out.end(), answer.begin(), answer.end());
  out.push_back(Vocab::kEoa);
  return out;
}

TokenList render_prompt(const TokenList& context, const Query& q) {
  TokenList out = context;
  out.push_back(Vocab::kQ);
  out.insert(out.end(), q.body.begin(), q.body.end());
  out.push_back(Vocab::kA);
  return out;
}

namespace {

TrainSequence qa_sequence(const Query& q, const TokenList& answer,
                          const TokenList& context = {}) {
  TrainSequence s;
  s.tokens = context;
  TokenList qa = render_qa(q, answer);
  s.tokens.insert(s.tokens.end(), qa.begin(), qa.end());
  s.answer_start = static_cast<int64_t>(s.tokens.size() - answer.size() - 1);
  return s;
}

}  // namespace

std::vector<TrainSequence> build_pretrain_corpus(const KnowledgeBase& kb) {
  const Vocab& v = kb.vocab;
  int n = kb.config.n_entities;
  int nf = v.n_frames;
  std::vector<TrainSequence> corpus;

  for (int e = 0; e < n; ++e) {
    uint64_t h = hash_combine(hash_combine(kb.config.seed, 0x636f72), uint64_t(e));
    TokenList name = {v.entity(e)};
    auto facts = kb.facts_of(e);
    const Fact* f0 = facts.front();

    // recall: identity over two variants, facts over rotating frames
    for (int variant = 0; variant < 2; ++variant) {
      int frame = static_cast<int>((h + uint64_t(variant)) % uint64_t(nf));
      corpus.push_back(qa_sequence(identity_query(kb, ImageSpec{e, variant}, frame), name));
    }
    for (size_t j = 0; j < facts.size(); ++j) {
      int frame = static_cast<int>((h + 1 + j) % uint64_t(nf));
      corpus.push_back(qa_sequence(fact_query(kb, e, facts[j]->relation, frame),
                                   {v.entity(facts[j]->object)}));
    }

    // composition without context, rotating over the entity's facts
    const Fact* fc = facts[static_cast<size_t>(h % facts.size())];
    corpus.push_back(qa_sequence(
        compositional_query(kb, fc->relation, static_cast<int>((h + 2) % uint64_t(nf)),
                            ImageSpec{e, static_cast<int>(h % 2)}),
        {v.entity(fc->object)}));

    // context copying: a prepended QA pair about the same subject overrides
    // the stored answer. Each entity sees the same question with different
    // context answers, so reading the context is the only consistent fit.
    for (int rep = 0; rep < 2; ++rep) {
      uint64_t hr = hash_combine(h, 11 + uint64_t(rep));
      const Fact* f = facts[static_cast<size_t>(hr % facts.size())];
      int counter_obj = pick_new_object(kb, f->relation, f->object, hash_combine(hr, 1));
      TokenList ctx =
          render_qa(fact_query(kb, e, f->relation, static_cast<int>(hr % uint64_t(nf))),
                    {v.entity(counter_obj)});
      corpus.push_back(qa_sequence(
          fact_query(kb, e, f->relation, static_cast<int>((hr + 1 + hr % 3) % uint64_t(nf))),
          {v.entity(counter_obj)}, ctx));
    }
    for (int rep = 0; rep < 2; ++rep) {
      uint64_t hr = hash_combine(h, 13 + uint64_t(rep));
      int counter_ent = static_cast<int>(hash_combine(hr, 1) % uint64_t(n - 1));
      if (counter_ent >= e) ++counter_ent;
      int variant = static_cast<int>(hr % 2);
      TokenList ctx =
          render_qa(identity_query(kb, ImageSpec{e, variant}, static_cast<int>(hr % uint64_t(nf))),
                    {v.entity(counter_ent)});
      corpus.push_back(qa_sequence(
          identity_query(kb, ImageSpec{e, variant},
                         static_cast<int>((hr + 1 + hr % 3) % uint64_t(nf))),
          {v.entity(counter_ent)}, ctx));
    }

    // compositional retrieval pattern: identity and fact context chain, again
    // with varied counterfactuals per entity
    for (int rep = 0; rep < 2; ++rep) {
      uint64_t hr = hash_combine(h, 15 + uint64_t(rep));
      int counter_ent = static_cast<int>(hash_combine(hr, 1) % uint64_t(n - 1));
      if (counter_ent >= e) ++counter_ent;
      int counter_obj = pick_new_object(kb, f0->relation, f0->object, hash_combine(hr, 2));
      TokenList ctx =
          render_qa(identity_query(kb, ImageSpec{e, 0}, static_cast<int>(hr % uint64_t(nf))),
                    {v.entity(counter_ent)});
      TokenList ctx_t = render_qa(
          fact_query(kb, counter_ent, f0->relation, static_cast<int>((hr + 1) % uint64_t(nf))),
          {v.entity(counter_obj)});
      ctx.insert(ctx.end(), ctx_t.begin(), ctx_t.end());
      corpus.push_back(qa_sequence(
          compositional_query(kb, f0->relation, static_cast<int>((hr + 2) % uint64_t(nf)),
                              ImageSpec{e, 0}),
          {v.entity(counter_obj)}, ctx));
    }

  }
  return corpus;
}

ModelConfig default_model_config(const KnowledgeBase& kb) {
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.n_layers = 4;
  cfg.n_heads = 4;
  cfg.d_ff = 256;
  cfg.vocab_size_text = kb.vocab.text_size();
  cfg.vocab_size_image = kb.vocab.image_size();
  cfg.max_seq_len = 64;
  cfg.lora_rank = 8;
  cfg.seed = kb.config.seed;
  return cfg;
}

}  // namespace editlab
