#pragma once

#include <optional>
#include <utility>

#include "editlab/decompose.hpp"
#include "editlab/world.hpp"

namespace editlab {

// Per-store scope thresholds: a retrieval below its store's threshold
// contributes no context. The visual blend carries a constant question-form
// floor, so the two stores live in different score bands.
struct ScopeThresholds {
  double text = 0.8;
  double visual = 0.8;
};

struct TextMemoryEntry {
  TokenList question;
  TokenList answer;
  Tensor q_embedding;  // cached at insert time
};

struct VisualMemoryEntry {
  TokenList image;
  TokenList question;
  TokenList answer;
  Tensor img_embedding;
  Tensor q_embedding;
};

// Two append-only stores; indexes are stable.
struct MemoryStore {
  std::vector<TextMemoryEntry> text;
  std::vector<VisualMemoryEntry> visual;
};

// Token-embedding averagers with a linear head, one per modality.
struct Encoders {
  int dim = 32;
  int text_vocab = 0;
  int image_offset = 0;  // first image token id
  int image_vocab = 0;
  int image_positions = 0;
  Parameter text_emb;   // [text_vocab x dim]
  Parameter text_head;  // [dim x dim]
  Parameter img_emb;    // [image_positions*image_vocab x dim], one row per slot
  Parameter img_head;   // [dim x dim]
  ScopeThresholds thresholds;  // calibrated after stage 1
  bool frozen = false;

  static Encoders init(const Vocab& vocab, int dim, uint64_t seed);
  Tensor embed_text(const TokenList& tokens) const;
  Tensor embed_image(const TokenList& tokens) const;
  Var embed_text(Tape& tape, const TokenList& tokens);
  Var embed_image(Tape& tape, const TokenList& tokens);
  std::vector<Parameter*> params();
  void freeze();
};

double cosine_value(const Tensor& a, const Tensor& b);

void add_edit(MemoryStore& store, const Encoders& encoders, const Vocab& vocab,
              const EditRecord& edit);

struct Retrieval {
  int index = -1;
  double score = 0.0;
};

// Argmax cosine; exact ties resolve to the lowest index. Empty stores yield
// no result rather than an error.
std::optional<Retrieval> retrieve_text(const MemoryStore& store, const Encoders& encoders,
                                       const TokenList& question);
std::optional<Retrieval> retrieve_visual(const MemoryStore& store, const Encoders& encoders,
                                         const TokenList& image, const TokenList& question,
                                         double alpha);

struct SlotResult {
  bool attempted = false;
  int index = -1;
  double score = 0.0;
  bool above_tau = false;
  std::optional<bool> truth_hit;  // diagnostics, filled when the truth is known
};

struct RetrievedContext {
  SlotResult visual;
  SlotResult text;
  TokenList substituted_question;  // compositional only
};

// Retrieval for any decomposed query. Compositional queries retrieve the
// visual slot first, substitute its answer into the placeholder, then
// retrieve the text slot with the substituted question; a wrong visual answer
// propagates (no silent correction).
RetrievedContext retrieve_for_query(const MemoryStore& store, const Encoders& encoders,
                                    const DecomposedQuery& dq, ScopeThresholds tau, double alpha);

// QA-formatted prefix. Below-threshold slots contribute nothing; a
// compositional prefix is ordered visual pair then textual pair.
TokenList assemble_context(const Vocab& vocab, const MemoryStore& store,
                           const DecomposedQuery& dq, const RetrievedContext& retrieved);

// ----- stage-1 training -----

struct EncoderQuery {
  bool visual = false;
  TokenList text;   // question words
  TokenList image;  // image tokens (visual only)
  int positive = 0;  // entry index in the matching store
};

struct EncoderDataset {
  MemoryStore entries;  // embeddings unfilled until the encoders are trained
  std::vector<EncoderQuery> train;
  std::vector<EncoderQuery> validation;
  std::vector<EncoderQuery> out_of_scope;  // queries with no matching entry
};

EncoderDataset build_encoder_dataset(const KnowledgeBase& kb,
                                     const std::vector<TrainingPair>& pairs);

struct EncoderTrainOptions {
  int negatives_per_positive = 8;
  int max_iters = 600;  // optimizer steps
  int batch = 16;
  double lr = 2e-2;
  double alpha = 0.5;
  int dim = 32;
  uint64_t seed = 1;
  int threads = 0;
  bool verbose = false;
};

// Sigmoid-of-cosine scoring trained with binary cross-entropy, positives
// against sampled negatives; encoders are frozen on return.
Encoders train_encoders(const Vocab& vocab, const EncoderDataset& data,
                        const EncoderTrainOptions& opts);

double top1_accuracy(const Encoders& encoders, const EncoderDataset& data,
                     const std::vector<EncoderQuery>& queries, double alpha);

struct TauCalibration {
  ScopeThresholds tau;
  double max_oos_text = 0.0;    // strongest unmatched text query score
  double max_oos_visual = 0.0;  // strongest unmatched visual query score
  double min_exact_text = 1.0;  // weakest stored-question replay scores
  double min_exact_visual = 1.0;
};

// Scope thresholds from the validation split: per store, halfway between the
// strongest out-of-scope best-score and the exact-replay band.
TauCalibration calibrate_tau(const Encoders& encoders, const EncoderDataset& data, double alpha);

}  // namespace editlab
