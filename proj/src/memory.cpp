#include "editlab/memory.hpp"

#include <cmath>
#include <map>
#include <set>

#include "editlab/errors.hpp"
#include "editlab/optim.hpp"
#include "editlab/rng.hpp"
#include "editlab/threading.hpp"

namespace editlab {

Encoders Encoders::init(const Vocab& vocab, int dim, uint64_t seed) {
  Encoders e;
  e.dim = dim;
  e.text_vocab = vocab.text_size();
  e.image_offset = vocab.text_size();
  e.image_vocab = vocab.image_size();
  e.image_positions = vocab.image_positions;
  Rng rng = Rng::fork(seed, 0x656e63);
  auto normal = [&rng](std::vector<int64_t> shape, double s) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.normal(0.0, s);
    return Parameter(std::move(t));
  };
  double s = 1.0 / std::sqrt(static_cast<double>(dim));
  e.text_emb = normal({e.text_vocab, dim}, 0.3);
  e.text_head = normal({dim, dim}, s);
  e.img_emb = normal({int64_t(e.image_positions) * e.image_vocab, dim}, 0.3);
  e.img_head = normal({dim, dim}, s);
  return e;
}

namespace {

std::vector<int64_t> text_ids(const Encoders& e, const TokenList& tokens) {
  if (tokens.empty()) throw PreconditionError("encoder input is empty");
  std::vector<int64_t> ids;
  ids.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t < 0 || t >= e.text_vocab) {
      throw IndexError("text encoder token " + std::to_string(t) + " out of range");
    }
    ids.push_back(t);
  }
  return ids;
}

std::vector<int64_t> image_ids(const Encoders& e, const TokenList& tokens) {
  if (tokens.empty()) throw PreconditionError("encoder input is empty");
  if (static_cast<int>(tokens.size()) != e.image_positions) {
    throw DimensionError("image encoder expects " + std::to_string(e.image_positions) +
                         " tokens, got " + std::to_string(tokens.size()));
  }
  std::vector<int64_t> ids;
  ids.reserve(tokens.size());
  for (size_t pos = 0; pos < tokens.size(); ++pos) {
    int idx = tokens[pos] - e.image_offset;
    if (idx < 0 || idx >= e.image_vocab) {
      throw IndexError("image encoder token " + std::to_string(tokens[pos]) + " out of range");
    }
    ids.push_back(int64_t(pos) * e.image_vocab + idx);  // one slot per (position, token)
  }
  return ids;
}

Tensor embed_value(const Parameter& emb, const Parameter& head, const std::vector<int64_t>& ids) {
  int64_t dim = emb.value.cols();
  Tensor pooled = Tensor::zeros({1, dim});
  for (int64_t id : ids) {
    for (int64_t j = 0; j < dim; ++j) pooled.data[size_t(j)] += emb.value.at(id, j);
  }
  for (double& v : pooled.data) v /= static_cast<double>(ids.size());
  return matmul_value(pooled, head.value);
}

}  // namespace

Tensor Encoders::embed_text(const TokenList& tokens) const {
  return embed_value(text_emb, text_head, text_ids(*this, tokens));
}

Tensor Encoders::embed_image(const TokenList& tokens) const {
  return embed_value(img_emb, img_head, image_ids(*this, tokens));
}

Var Encoders::embed_text(Tape& tape, const TokenList& tokens) {
  Var rows = tape.take_rows(tape.param(text_emb), text_ids(*this, tokens));
  return tape.matmul(tape.mean_rows(rows), tape.param(text_head));
}

Var Encoders::embed_image(Tape& tape, const TokenList& tokens) {
  Var rows = tape.take_rows(tape.param(img_emb), image_ids(*this, tokens));
  return tape.matmul(tape.mean_rows(rows), tape.param(img_head));
}

std::vector<Parameter*> Encoders::params() {
  return {&text_emb, &text_head, &img_emb, &img_head};
}

void Encoders::freeze() {
  for (Parameter* p : params()) p->trainable = false;
  frozen = true;
}

double cosine_value(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("cosine length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    dot += a.data[i] * b.data[i];
    na += a.data[i] * a.data[i];
    nb += b.data[i] * b.data[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine of zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void add_edit(MemoryStore& store, const Encoders& encoders, const Vocab& vocab,
              const EditRecord& edit) {
  DecomposedQuery dq = decompose(vocab, edit.edit_prompt);
  if (edit.kind == EditKind::visual) {
    VisualMemoryEntry entry;
    entry.image = dq.visual_image;
    entry.question = dq.visual_question;
    entry.answer = edit.edit_target;
    entry.img_embedding = encoders.embed_image(entry.image);
    entry.q_embedding = encoders.embed_text(entry.question);
    store.visual.push_back(std::move(entry));
  } else {
    TextMemoryEntry entry;
    entry.question = dq.text_question;
    entry.answer = edit.edit_target;
    entry.q_embedding = encoders.embed_text(entry.question);
    store.text.push_back(std::move(entry));
  }
}

std::optional<Retrieval> retrieve_text(const MemoryStore& store, const Encoders& encoders,
                                       const TokenList& question) {
  if (store.text.empty()) return std::nullopt;
  Tensor q = encoders.embed_text(question);
  Retrieval best{0, cosine_value(q, store.text[0].q_embedding)};
  for (size_t i = 1; i < store.text.size(); ++i) {
    double s = cosine_value(q, store.text[i].q_embedding);
    if (s > best.score) best = {static_cast<int>(i), s};
  }
  return best;
}

std::optional<Retrieval> retrieve_visual(const MemoryStore& store, const Encoders& encoders,
                                         const TokenList& image, const TokenList& question,
                                         double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw PreconditionError("alpha must lie in [0, 1]");
  if (store.visual.empty()) return std::nullopt;
  Tensor qi = encoders.embed_image(image);
  Tensor qt = encoders.embed_text(question);
  auto blended = [&](const VisualMemoryEntry& e) {
    return alpha * cosine_value(qi, e.img_embedding) +
           (1.0 - alpha) * cosine_value(qt, e.q_embedding);
  };
  Retrieval best{0, blended(store.visual[0])};
  for (size_t i = 1; i < store.visual.size(); ++i) {
    double s = blended(store.visual[i]);
    if (s > best.score) best = {static_cast<int>(i), s};
  }
  return best;
}

RetrievedContext retrieve_for_query(const MemoryStore& store, const Encoders& encoders,
                                    const DecomposedQuery& dq, ScopeThresholds tau, double alpha) {
  RetrievedContext ctx;
  auto fill = [](SlotResult& slot, const std::optional<Retrieval>& r, double threshold) {
    slot.attempted = true;
    if (r) {
      slot.index = r->index;
      slot.score = r->score;
      slot.above_tau = r->score >= threshold;
    }
  };
  switch (dq.qtype) {
    case QueryType::visual:
      fill(ctx.visual,
           retrieve_visual(store, encoders, dq.visual_image, dq.visual_question, alpha),
           tau.visual);
      break;
    case QueryType::textual:
      fill(ctx.text, retrieve_text(store, encoders, dq.text_question), tau.text);
      break;
    case QueryType::compositional: {
      if (dq.placeholder_index < 0) {
        throw PreconditionError("compositional query without a placeholder");
      }
      fill(ctx.visual,
           retrieve_visual(store, encoders, dq.visual_image, dq.visual_question, alpha),
           tau.visual);
      if (ctx.visual.index >= 0) {
        // the retrieved identity replaces the tagged placeholder, right or wrong
        ctx.substituted_question =
            substitute_placeholder(dq, store.visual[static_cast<size_t>(ctx.visual.index)].answer);
      } else {
        ctx.substituted_question = dq.text_question;
      }
      fill(ctx.text, retrieve_text(store, encoders, ctx.substituted_question), tau.text);
      break;
    }
  }
  return ctx;
}

namespace {

TokenList render_visual_pair(const VisualMemoryEntry& e) {
  TokenList out;
  out.push_back(Vocab::kQ);
  out.insert(out.end(), e.question.begin(), e.question.end());
  out.push_back(Vocab::kImg);
  out.insert(out.end(), e.image.begin(), e.image.end());
  out.push_back(Vocab::kA);
  out.insert(out.end(), e.answer.begin(), e.answer.end());
  out.push_back(Vocab::kEoa);
  return out;
}

TokenList render_text_pair(const TextMemoryEntry& e) {
  TokenList out;
  out.push_back(Vocab::kQ);
  out.insert(out.end(), e.question.begin(), e.question.end());
  out.push_back(Vocab::kA);
  out.insert(out.end(), e.answer.begin(), e.answer.end());
  out.push_back(Vocab::kEoa);
  return out;
}

}  // namespace

TokenList assemble_context(const Vocab& vocab, const MemoryStore& store,
                           const DecomposedQuery& dq, const RetrievedContext& retrieved) {
  (void)vocab;
  (void)dq;
  TokenList out;
  if (retrieved.visual.attempted && retrieved.visual.index >= 0 && retrieved.visual.above_tau) {
    TokenList pair = render_visual_pair(store.visual[static_cast<size_t>(retrieved.visual.index)]);
    out.insert(out.end(), pair.begin(), pair.end());
  }
  if (retrieved.text.attempted && retrieved.text.index >= 0 && retrieved.text.above_tau) {
    TokenList pair = render_text_pair(store.text[static_cast<size_t>(retrieved.text.index)]);
    out.insert(out.end(), pair.begin(), pair.end());
  }
  return out;
}

EncoderDataset build_encoder_dataset(const KnowledgeBase& kb,
                                     const std::vector<TrainingPair>& pairs) {
  EncoderDataset data;
  // Training pairs may reuse entities; retrieval training needs each stored
  // question to be unique, so duplicates keep only their first entry.
  std::map<std::pair<int, int>, int> text_seen;
  std::map<int, int> visual_seen;
  for (const TrainingPair& tp : pairs) {
    int subject = tp.textual.textual.subject;
    int relation = tp.textual.textual.relation;
    int img_entity = tp.visual.visual.image.entity_id;

    auto [t_it, t_new] = text_seen.try_emplace({subject, relation},
                                               static_cast<int>(data.entries.text.size()));
    if (t_new) {
      DecomposedQuery tq = decompose(kb.vocab, tp.textual.edit_prompt);
      TextMemoryEntry te;
      te.question = tq.text_question;
      te.answer = tp.textual.edit_target;
      data.entries.text.push_back(std::move(te));
      int idx = t_it->second;
      // two of the three rephrase frames train, rotating per entry, so every
      // frame word is trained globally while each entry holds one frame out
      int held_out = 1 + (idx + 2) % 3;
      for (int f : {1 + idx % 3, 1 + (idx + 1) % 3}) {
        data.train.push_back({false, fact_query(kb, subject, relation, f).body, {}, idx});
      }
      data.validation.push_back(
          {false, fact_query(kb, subject, relation, held_out).body, {}, idx});
    }

    auto [v_it, v_new] =
        visual_seen.try_emplace(img_entity, static_cast<int>(data.entries.visual.size()));
    if (v_new) {
      DecomposedQuery vq = decompose(kb.vocab, tp.visual.edit_prompt);
      VisualMemoryEntry ve;
      ve.image = vq.visual_image;
      ve.question = vq.visual_question;
      ve.answer = tp.visual.edit_target;
      data.entries.visual.push_back(std::move(ve));
      int idx = v_it->second;
      // image variant 3 and frame 3 validate
      for (auto [variant, frame] : {std::pair{1, 1}, std::pair{1, 2}, std::pair{0, 1}}) {
        data.train.push_back({true,
                              {Vocab::kWho, kb.vocab.frame(frame)},
                              render_image_tokens(kb.vocab, ImageSpec{img_entity, variant}),
                              idx});
      }
      data.validation.push_back({true,
                                 {Vocab::kWho, kb.vocab.frame(3)},
                                 render_image_tokens(kb.vocab, ImageSpec{img_entity, 3}),
                                 idx});
    }
  }

  // out-of-scope queries: entities no pair touched, so nothing matches
  std::set<int> touched;
  for (const TrainingPair& tp : pairs) {
    touched.insert(tp.visual.visual.old_entity);
    touched.insert(tp.visual.visual.new_entity);
    touched.insert(tp.textual.textual.subject);
  }
  int emitted = 0;
  for (int e = 0; e < kb.config.n_entities && emitted < 60; ++e) {
    if (touched.count(e)) continue;
    const Fact* f = kb.facts_of(e).front();
    data.out_of_scope.push_back({false, fact_query(kb, e, f->relation, 1 + e % 3).body, {}, -1});
    data.out_of_scope.push_back({true,
                                 {Vocab::kWho, kb.vocab.frame(0)},
                                 render_image_tokens(kb.vocab, ImageSpec{e, 0}),
                                 -1});
    emitted += 2;
  }
  return data;
}

namespace {

// Training scores one cosine per item: the image cue for visual entries (their
// stored question is the constant canonical form, so its similarity carries no
// ranking signal) and the question cue for textual entries. Retrieval still
// blends both at alpha.
Var query_entry_score(Tape& tape, Encoders& enc, const MemoryStore& entries,
                      const EncoderQuery& q, int entry_index) {
  if (q.visual) {
    const VisualMemoryEntry& e = entries.visual[static_cast<size_t>(entry_index)];
    return tape.cosine(enc.embed_image(tape, q.image), enc.embed_image(tape, e.image));
  }
  const TextMemoryEntry& e = entries.text[static_cast<size_t>(entry_index)];
  return tape.cosine(enc.embed_text(tape, q.text), enc.embed_text(tape, e.question));
}

// Temperature inside the sigmoid; saturates once a pair is classified so the
// cosine geometry stops drifting.
constexpr double kScoreScale = 4.0;
constexpr int kPositiveWeight = 8;

}  // namespace

Encoders train_encoders(const Vocab& vocab, const EncoderDataset& data,
                        const EncoderTrainOptions& opts) {
  if (data.train.empty()) throw PreconditionError("encoder training set is empty");
  Encoders enc = Encoders::init(vocab, opts.dim, opts.seed);
  std::vector<Parameter*> params = enc.params();
  AdamW opt(params, AdamW::Options{.lr = opts.lr});
  Rng rng = Rng::fork(opts.seed, 0x735431);

  // same-relation entries are the hard negatives for text retrieval
  std::map<TokenId, std::vector<int>> by_relation;
  for (size_t i = 0; i < data.entries.text.size(); ++i) {
    by_relation[data.entries.text[i].question.front()].push_back(static_cast<int>(i));
  }
  int threads = opts.threads > 0 ? opts.threads : default_threads();

  std::vector<size_t> order(data.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    std::vector<const EncoderQuery*> batch;
    std::vector<uint64_t> batch_keys;
    for (int b = 0; b < opts.batch; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&data.train[order[cursor]]);
      batch_keys.push_back(hash_combine(hash_combine(opts.seed, uint64_t(iter)), uint64_t(b)));
      ++cursor;
    }
    opt.zero_grad();
    double loss = batch_gradients(
        static_cast<int64_t>(batch.size()),
        [&](Tape& tape, int64_t bi) {
          const EncoderQuery& q = *batch[static_cast<size_t>(bi)];
          size_t pool = q.visual ? data.entries.visual.size() : data.entries.text.size();
          std::vector<Var> probs;
          std::vector<double> labels;
          // the positive term is replicated to balance the negative pressure,
          // keeping matching scores high in absolute terms
          Var pos = tape.sigmoid(tape.scale(
              query_entry_score(tape, enc, data.entries, q, q.positive), kScoreScale));
          for (int rep = 0; rep < kPositiveWeight; ++rep) {
            probs.push_back(pos);
            labels.push_back(1.0);
          }
          if (q.visual) {
            // question-form invariance: the wording of an identity question
            // should not move its embedding (its similarity is blended into
            // every visual retrieval score)
            const VisualMemoryEntry& pe = data.entries.visual[size_t(q.positive)];
            Var form = tape.sigmoid(tape.scale(
                tape.cosine(enc.embed_text(tape, q.text), enc.embed_text(tape, pe.question)),
                kScoreScale));
            for (int rep = 0; rep < kPositiveWeight / 2; ++rep) {
              probs.push_back(form);
              labels.push_back(1.0);
            }
          }
          const std::vector<int>* hard = nullptr;
          if (!q.visual) {
            auto it = by_relation.find(data.entries.text[size_t(q.positive)].question.front());
            if (it != by_relation.end() && it->second.size() > 1) hard = &it->second;
          }
          for (int n = 0; n < opts.negatives_per_positive; ++n) {
            uint64_t h = hash_combine(batch_keys[static_cast<size_t>(bi)], uint64_t(n));
            int neg;
            if (hard != nullptr && n % 2 == 0) {
              neg = (*hard)[h % hard->size()];
              if (neg == q.positive) neg = (*hard)[(h + 1) % hard->size()];
            } else {
              neg = static_cast<int>(h % uint64_t(pool - 1));
              if (neg >= q.positive) ++neg;
            }
            if (neg == q.positive) continue;
            probs.push_back(tape.sigmoid(
                tape.scale(query_entry_score(tape, enc, data.entries, q, neg), kScoreScale)));
            labels.push_back(0.0);
          }
          Var stacked = probs.size() == 1 ? probs[0] : tape.concat_cols(probs);
          return tape.binary_cross_entropy(stacked, std::move(labels));
        },
        params, threads);
    if (!std::isfinite(loss)) throw TrainingError("encoder training diverged");
    opt.step();
    if (opts.verbose && iter % 50 == 0) {
      std::fprintf(stderr, "[stage1] iter %d loss %.4f\n", iter, loss);
    }
  }
  enc.freeze();
  return enc;
}

TauCalibration calibrate_tau(const Encoders& encoders, const EncoderDataset& data, double alpha) {
  std::vector<Tensor> text_embs, vis_img_embs, vis_q_embs;
  for (const TextMemoryEntry& e : data.entries.text) {
    text_embs.push_back(encoders.embed_text(e.question));
  }
  for (const VisualMemoryEntry& e : data.entries.visual) {
    vis_img_embs.push_back(encoders.embed_image(e.image));
    vis_q_embs.push_back(encoders.embed_text(e.question));
  }
  auto best_score = [&](const EncoderQuery& q) {
    double best = -2.0;
    if (q.visual) {
      Tensor qi = encoders.embed_image(q.image);
      Tensor qt = encoders.embed_text(q.text);
      for (size_t i = 0; i < vis_img_embs.size(); ++i) {
        best = std::max(best, alpha * cosine_value(qi, vis_img_embs[i]) +
                                  (1.0 - alpha) * cosine_value(qt, vis_q_embs[i]));
      }
    } else {
      Tensor qt = encoders.embed_text(q.text);
      for (const Tensor& e : text_embs) best = std::max(best, cosine_value(qt, e));
    }
    return best;
  };

  TauCalibration cal;
  cal.max_oos_text = -1.0;
  cal.max_oos_visual = -1.0;
  for (const EncoderQuery& q : data.out_of_scope) {
    double s = best_score(q);
    if (q.visual) {
      cal.max_oos_visual = std::max(cal.max_oos_visual, s);
    } else {
      cal.max_oos_text = std::max(cal.max_oos_text, s);
    }
  }
  // exact replays of stored questions score ~1; probe the weakest of a sample
  for (size_t i = 0; i < data.entries.text.size() && i < 40; ++i) {
    EncoderQuery q{false, data.entries.text[i].question, {}, static_cast<int>(i)};
    cal.min_exact_text = std::min(cal.min_exact_text, best_score(q));
  }
  for (size_t i = 0; i < data.entries.visual.size() && i < 40; ++i) {
    EncoderQuery q{true, data.entries.visual[i].question, data.entries.visual[i].image,
                   static_cast<int>(i)};
    cal.min_exact_visual = std::min(cal.min_exact_visual, best_score(q));
  }
  auto midpoint = [](double lo, double hi) {
    return std::min(0.95, std::max(0.05, 0.5 * (lo + hi)));
  };
  cal.tau.text = midpoint(cal.max_oos_text, cal.min_exact_text);
  cal.tau.visual = midpoint(cal.max_oos_visual, cal.min_exact_visual);
  return cal;
}

double top1_accuracy(const Encoders& encoders, const EncoderDataset& data,
                     const std::vector<EncoderQuery>& queries, double alpha) {
  if (queries.empty()) throw PreconditionError("no queries to score");
  // score with insert-time-style embeddings computed on the fly
  std::vector<Tensor> text_embs, vis_img_embs, vis_q_embs;
  for (const TextMemoryEntry& e : data.entries.text) {
    text_embs.push_back(encoders.embed_text(e.question));
  }
  for (const VisualMemoryEntry& e : data.entries.visual) {
    vis_img_embs.push_back(encoders.embed_image(e.image));
    vis_q_embs.push_back(encoders.embed_text(e.question));
  }
  int64_t hits = 0;
  for (const EncoderQuery& q : queries) {
    int best = 0;
    double best_s = -2.0;
    if (q.visual) {
      Tensor qi = encoders.embed_image(q.image);
      Tensor qt = encoders.embed_text(q.text);
      for (size_t i = 0; i < vis_img_embs.size(); ++i) {
        double s = alpha * cosine_value(qi, vis_img_embs[i]) +
                   (1.0 - alpha) * cosine_value(qt, vis_q_embs[i]);
        if (s > best_s) {
          best_s = s;
          best = static_cast<int>(i);
        }
      }
    } else {
      Tensor qt = encoders.embed_text(q.text);
      for (size_t i = 0; i < text_embs.size(); ++i) {
        double s = cosine_value(qt, text_embs[i]);
        if (s > best_s) {
          best_s = s;
          best = static_cast<int>(i);
        }
      }
    }
    if (best == q.positive) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

}  // namespace editlab
