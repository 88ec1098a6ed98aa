#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "editlab/adapters.hpp"
#include "editlab/autograd.hpp"
#include "editlab/types.hpp"

namespace editlab {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size_text = 0;   // includes marker/control tokens
  int vocab_size_image = 0;
  int max_seq_len = 64;
  int lora_rank = 8;
  std::vector<int> connector_layers;  // empty = all layers
  uint64_t seed = 1;

  int vocab_total() const { return vocab_size_text + vocab_size_image; }
  std::vector<int> effective_connector_layers() const;
  void validate() const;  // throws ConfigError
  int64_t parameter_count() const;
};

// Decoder-only transformer over the joint word/image-token vocabulary.
// Once frozen the weights are immutable; edits live in adapter banks.
struct TransformerWeights {
  ModelConfig config;
  Parameter tok_emb;  // [V x d]
  Parameter pos_emb;  // [max_seq_len x d]
  struct Layer {
    Parameter wq, wk, wv, wo;    // [d x d]
    Parameter ln1_g, ln1_b;      // [d]
    Parameter w1;                // [d x d_ff]
    Parameter w2;                // [d_ff x d]
    Parameter ln2_g, ln2_b;      // [d]
  };
  std::vector<Layer> layers;
  Parameter lnf_g, lnf_b;  // [d]
  Parameter head;          // [d x V]
  bool frozen = false;

  std::vector<Parameter*> params();
  std::vector<const Parameter*> params() const;
  void freeze();
  uint64_t content_hash() const;  // for frozen-immutability checks
};

TransformerWeights init_model(const ModelConfig& config);

// Hidden states after the final layer norm. bank == nullptr is the
// adapter-free reference path; with a bank, FFN deltas and the gated
// connector are applied according to the gates.
Var model_hidden(Tape& tape, TransformerWeights& weights, AdapterBank* bank, ModalityGates gates,
                 std::span<const TokenId> tokens);

// Logits at the requested positions (rows of the hidden state).
Var logits_at(Tape& tape, TransformerWeights& weights, Var hidden,
              std::vector<int64_t> positions);

// Full [t x V] logits.
Var model_forward(Tape& tape, TransformerWeights& weights, AdapterBank* bank, ModalityGates gates,
                  std::span<const TokenId> tokens);

// Next-token cross-entropy restricted to positions >= answer_start
// (prompt tokens are masked out of the loss).
Var answer_span_loss(Tape& tape, TransformerWeights& weights, AdapterBank* bank,
                     ModalityGates gates, std::span<const TokenId> tokens, int64_t answer_start);

// Argmax decoding until `eoa` or max_new tokens; ties break toward the lowest
// token id. Returns the generated tokens with the terminating `eoa` stripped.
TokenList greedy_decode(TransformerWeights& weights, AdapterBank* bank, ModalityGates gates,
                        std::span<const TokenId> prompt, int max_new, TokenId eoa);

// Single-layer views used by the block tests: both run the exact code path of
// model_hidden for one block, from a given pre-norm hidden state.
Tensor gated_attention_value(TransformerWeights& weights, AdapterBank* bank, ModalityGates gates,
                             int layer, const Tensor& x);
Tensor fused_ffn_value(TransformerWeights& weights, AdapterBank* bank, ModalityGates gates,
                       int layer, const Tensor& x);

struct TrainSequence {
  TokenList tokens;
  int64_t answer_start = 0;  // first supervised position
};

struct PretrainOptions {
  double target_acc = 0.99;
  int max_epochs = 120;
  int batch_size = 32;
  double lr = 3e-3;
  int threads = 0;  // 0 = default_threads()
  bool verbose = false;
};

struct PretrainResult {
  double accuracy = 0.0;
  int epochs = 0;
  double final_loss = 0.0;
};

// Next-token training until the teacher-forced exact-match accuracy over the
// corpus answers reaches target_acc, then freezes the weights. Throws
// TrainingError (with the achieved accuracy) if the epoch cap is hit first.
PretrainResult pretrain(TransformerWeights& weights, const std::vector<TrainSequence>& corpus,
                        const PretrainOptions& opts = {});

// Teacher-forced exact match over answer spans; the quantity pretrain tracks.
double corpus_answer_accuracy(TransformerWeights& weights,
                              const std::vector<TrainSequence>& corpus, int threads = 0);

}  // namespace editlab
