#include "editlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "editlab/errors.hpp"
#include "editlab/optim.hpp"
#include "editlab/rng.hpp"
#include "editlab/threading.hpp"

namespace editlab {

std::vector<int> ModelConfig::effective_connector_layers() const {
  if (!connector_layers.empty()) return connector_layers;
  std::vector<int> all(static_cast<size_t>(n_layers));
  std::iota(all.begin(), all.end(), 0);
  return all;
}

void ModelConfig::validate() const {
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (vocab_size_text < 1 || vocab_size_image < 0) {
    throw ConfigError("vocab sizes invalid");
  }
  if (max_seq_len < 2) throw ConfigError("max_seq_len too small");
  if (lora_rank < 1) throw ConfigError("lora_rank must be >= 1");
  for (int l : connector_layers) {
    if (l < 0 || l >= n_layers) throw ConfigError("connector layer index out of range");
  }
}

int64_t ModelConfig::parameter_count() const {
  int64_t d = d_model, v = vocab_total();
  int64_t per_layer = 4 * d * d + 2 * d * d_ff + 4 * d;
  return v * d + int64_t(max_seq_len) * d + n_layers * per_layer + 2 * d + d * v;
}

std::vector<Parameter*> TransformerWeights::params() {
  std::vector<Parameter*> out = {&tok_emb, &pos_emb};
  for (Layer& l : layers) {
    for (Parameter* p : {&l.wq, &l.wk, &l.wv, &l.wo, &l.ln1_g, &l.ln1_b, &l.w1, &l.w2, &l.ln2_g,
                         &l.ln2_b}) {
      out.push_back(p);
    }
  }
  out.push_back(&lnf_g);
  out.push_back(&lnf_b);
  out.push_back(&head);
  return out;
}

std::vector<const Parameter*> TransformerWeights::params() const {
  auto mutable_params = const_cast<TransformerWeights*>(this)->params();
  return {mutable_params.begin(), mutable_params.end()};
}

void TransformerWeights::freeze() {
  for (Parameter* p : params()) p->trainable = false;
  frozen = true;
}

uint64_t TransformerWeights::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter* p : params()) {
    for (double v : p->value.data) {
      uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      h ^= bits;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

TransformerWeights init_model(const ModelConfig& config) {
  config.validate();
  TransformerWeights w;
  w.config = config;
  Rng rng = Rng::fork(config.seed, 0x6d6f64);
  int64_t d = config.d_model, v = config.vocab_total();
  double proj_s = 1.0 / std::sqrt(static_cast<double>(d));
  double ffn_s = 1.0 / std::sqrt(static_cast<double>(config.d_ff));
  auto normal = [&rng](std::vector<int64_t> shape, double s) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.data) x = rng.normal(0.0, s);
    return Parameter(std::move(t));
  };
  w.tok_emb = normal({v, d}, 0.1);
  w.pos_emb = normal({config.max_seq_len, d}, 0.1);
  for (int l = 0; l < config.n_layers; ++l) {
    TransformerWeights::Layer layer;
    layer.wq = normal({d, d}, proj_s);
    layer.wk = normal({d, d}, proj_s);
    layer.wv = normal({d, d}, proj_s);
    layer.wo = normal({d, d}, proj_s);
    layer.ln1_g = Parameter(Tensor::full({d}, 1.0));
    layer.ln1_b = Parameter(Tensor::zeros({d}));
    layer.w1 = normal({d, config.d_ff}, proj_s);
    layer.w2 = normal({config.d_ff, d}, ffn_s);
    layer.ln2_g = Parameter(Tensor::full({d}, 1.0));
    layer.ln2_b = Parameter(Tensor::zeros({d}));
    w.layers.push_back(std::move(layer));
  }
  w.lnf_g = Parameter(Tensor::full({d}, 1.0));
  w.lnf_b = Parameter(Tensor::zeros({d}));
  w.head = normal({d, v}, proj_s);
  return w;
}

namespace {

// Attention sub-block: pre-norm, projections (with the indicator-gated
// connector deltas on Q and K), causal multi-head attention, output proj.
Var attention_block(Tape& tape, TransformerWeights& w, AdapterBank* bank, ModalityGates gates,
                    int layer, Var x) {
  TransformerWeights::Layer& lw = w.layers[static_cast<size_t>(layer)];
  Var h = tape.layer_norm(x, tape.param(lw.ln1_g), tape.param(lw.ln1_b));
  Var q = tape.matmul(h, tape.param(lw.wq));
  Var k = tape.matmul(h, tape.param(lw.wk));
  Var v = tape.matmul(h, tape.param(lw.wv));
  if (bank != nullptr && indicator(gates) == 1) {
    int slot = bank->connector.slot_for(layer);
    if (slot >= 0) {
      ConnectorWeights::LayerDelta& d = bank->connector.deltas[static_cast<size_t>(slot)];
      q = tape.add(q, lora_delta(tape, d.dq, h));
      k = tape.add(k, lora_delta(tape, d.dk, h));
    }
  }
  int64_t dh = w.config.d_model / w.config.n_heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(w.config.n_heads));
  for (int hd = 0; hd < w.config.n_heads; ++hd) {
    int64_t c0 = hd * dh, c1 = (hd + 1) * dh;
    Var qh = tape.slice_cols(q, c0, c1);
    Var kh = tape.slice_cols(k, c0, c1);
    Var vh = tape.slice_cols(v, c0, c1);
    Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), scale);
    Var attn = tape.causal_softmax(scores);
    heads.push_back(tape.matmul(attn, vh));
  }
  Var z = w.config.n_heads == 1 ? heads[0] : tape.concat_cols(heads);
  return tape.matmul(z, tape.param(lw.wo));
}

// FFN sub-block: pre-norm, frozen FFN, then gated adapter increments in the
// fixed order (frozen, visual, textual). Single mode applies the one shared
// adapter for every query type.
Var ffn_block(Tape& tape, TransformerWeights& w, AdapterBank* bank, ModalityGates gates, int layer,
              Var x) {
  TransformerWeights::Layer& lw = w.layers[static_cast<size_t>(layer)];
  Var h = tape.layer_norm(x, tape.param(lw.ln2_g), tape.param(lw.ln2_b));
  Var f = tape.matmul(tape.relu(tape.matmul(h, tape.param(lw.w1))), tape.param(lw.w2));
  if (bank != nullptr) {
    if (bank->mode == AdapterBank::Mode::dual) {
      if (gates.visual == 1) {
        f = tape.add(f, lora_delta(tape, bank->visual[static_cast<size_t>(layer)], h));
      }
      if (gates.textual == 1) {
        f = tape.add(f, lora_delta(tape, bank->textual[static_cast<size_t>(layer)], h));
      }
    } else {
      f = tape.add(f, lora_delta(tape, bank->shared[static_cast<size_t>(layer)], h));
    }
  }
  return f;
}

}  // namespace

Var model_hidden(Tape& tape, TransformerWeights& weights, AdapterBank* bank, ModalityGates gates,
                 std::span<const TokenId> tokens) {
  const ModelConfig& cfg = weights.config;
  int64_t t_len = static_cast<int64_t>(tokens.size());
  if (t_len == 0) throw PreconditionError("empty token sequence");
  if (t_len > cfg.max_seq_len) {
    throw DimensionError("sequence length " + std::to_string(t_len) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
  }
  std::vector<int64_t> ids;
  ids.reserve(static_cast<size_t>(t_len));
  for (TokenId t : tokens) {
    if (t < 0 || t >= cfg.vocab_total()) {
      throw IndexError("token id " + std::to_string(t) + " outside joint vocab");
    }
    ids.push_back(t);
  }
  std::vector<int64_t> positions(static_cast<size_t>(t_len));
  std::iota(positions.begin(), positions.end(), 0);

  Var x = tape.add(tape.take_rows(tape.param(weights.tok_emb), std::move(ids)),
                   tape.take_rows(tape.param(weights.pos_emb), std::move(positions)));
  for (int l = 0; l < cfg.n_layers; ++l) {
    x = tape.add(x, attention_block(tape, weights, bank, gates, l, x));
    x = tape.add(x, ffn_block(tape, weights, bank, gates, l, x));
  }
  return tape.layer_norm(x, tape.param(weights.lnf_g), tape.param(weights.lnf_b));
}

Var logits_at(Tape& tape, TransformerWeights& weights, Var hidden,
              std::vector<int64_t> positions) {
  Var rows = tape.take_rows(hidden, std::move(positions));
  return tape.matmul(rows, tape.param(weights.head));
}

Var model_forward(Tape& tape, TransformerWeights& weights, AdapterBank* bank, ModalityGates gates,
                  std::span<const TokenId> tokens) {
  Var hidden = model_hidden(tape, weights, bank, gates, tokens);
  return tape.matmul(hidden, tape.param(weights.head));
}

Var answer_span_loss(Tape& tape, TransformerWeights& weights, AdapterBank* bank,
                     ModalityGates gates, std::span<const TokenId> tokens, int64_t answer_start) {
  int64_t t_len = static_cast<int64_t>(tokens.size());
  if (answer_start < 1 || answer_start >= t_len) {
    throw PreconditionError("answer_start must lie inside the sequence");
  }
  Var hidden = model_hidden(tape, weights, bank, gates, tokens);
  std::vector<int64_t> positions;
  std::vector<int64_t> targets;
  for (int64_t p = answer_start - 1; p + 1 < t_len; ++p) {
    positions.push_back(p);
    targets.push_back(tokens[static_cast<size_t>(p + 1)]);
  }
  Var logits = logits_at(tape, weights, hidden, std::move(positions));
  return tape.cross_entropy(logits, std::move(targets));
}

TokenList greedy_decode(TransformerWeights& weights, AdapterBank* bank, ModalityGates gates,
                        std::span<const TokenId> prompt, int max_new, TokenId eoa) {
  if (prompt.empty()) throw PreconditionError("greedy_decode needs a nonempty prompt");
  TokenList seq(prompt.begin(), prompt.end());
  TokenList out;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(seq.size()) >= weights.config.max_seq_len) break;
    Tape tape;
    Var hidden = model_hidden(tape, weights, bank, gates, seq);
    Var logits = logits_at(tape, weights, hidden, {static_cast<int64_t>(seq.size()) - 1});
    const Tensor& row = logits.value();
    int best = 0;
    double best_v = row.data[0];
    for (int64_t j = 1; j < row.cols(); ++j) {
      if (row.data[static_cast<size_t>(j)] > best_v) {  // ties keep the lowest id
        best_v = row.data[static_cast<size_t>(j)];
        best = static_cast<int>(j);
      }
    }
    if (best == eoa) break;
    out.push_back(best);
    seq.push_back(best);
  }
  return out;
}

Tensor gated_attention_value(TransformerWeights& weights, AdapterBank* bank, ModalityGates gates,
                             int layer, const Tensor& x) {
  Tape tape;
  Var out = attention_block(tape, weights, bank, gates, layer, tape.leaf(x));
  return out.value();
}

Tensor fused_ffn_value(TransformerWeights& weights, AdapterBank* bank, ModalityGates gates,
                       int layer, const Tensor& x) {
  Tape tape;
  Var out = ffn_block(tape, weights, bank, gates, layer, tape.leaf(x));
  return out.value();
}

double corpus_answer_accuracy(TransformerWeights& weights,
                              const std::vector<TrainSequence>& corpus, int threads) {
  if (corpus.empty()) throw PreconditionError("empty corpus");
  if (threads <= 0) threads = default_threads();
  std::vector<char> correct(corpus.size(), 0);
  parallel_for(static_cast<int64_t>(corpus.size()), threads, [&](int64_t i) {
    const TrainSequence& s = corpus[static_cast<size_t>(i)];
    Tape tape;
    Var hidden = model_hidden(tape, weights, nullptr, {}, s.tokens);
    std::vector<int64_t> positions;
    for (int64_t p = s.answer_start - 1; p + 1 < static_cast<int64_t>(s.tokens.size()); ++p) {
      positions.push_back(p);
    }
    Var logits = logits_at(tape, weights, hidden, positions);
    const Tensor& rows = logits.value();
    bool ok = true;
    for (int64_t r = 0; r < rows.rows(); ++r) {
      int64_t target = s.tokens[static_cast<size_t>(s.answer_start + r)];
      int64_t best = 0;
      double best_v = rows.at(r, 0);
      for (int64_t j = 1; j < rows.cols(); ++j) {
        if (rows.at(r, j) > best_v) {
          best_v = rows.at(r, j);
          best = j;
        }
      }
      if (best != target) {
        ok = false;
        break;
      }
    }
    correct[static_cast<size_t>(i)] = ok ? 1 : 0;
  });
  int64_t n_ok = 0;
  for (char c : correct) n_ok += c;
  return static_cast<double>(n_ok) / static_cast<double>(corpus.size());
}

PretrainResult pretrain(TransformerWeights& weights, const std::vector<TrainSequence>& corpus,
                        const PretrainOptions& opts) {
  if (corpus.empty()) throw PreconditionError("pretrain corpus is empty");
  if (opts.target_acc <= 0.0 || opts.target_acc > 1.0) {
    throw PreconditionError("target accuracy must lie in (0, 1]");
  }
  if (weights.frozen) throw PreconditionError("weights already frozen");
  for (const TrainSequence& s : corpus) {
    if (s.answer_start < 1 || s.answer_start >= static_cast<int64_t>(s.tokens.size())) {
      throw PreconditionError("corpus sequence with invalid answer span");
    }
  }
  int threads = opts.threads > 0 ? opts.threads : default_threads();
  std::vector<Parameter*> params = weights.params();
  AdamW opt(params, AdamW::Options{.lr = opts.lr});
  Rng rng = Rng::fork(weights.config.seed, 0x707265);

  std::vector<int64_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  PretrainResult result;
  for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int64_t n_batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opts.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(opts.batch_size));
      opt.zero_grad();
      double loss = batch_gradients(
          static_cast<int64_t>(end - start),
          [&](Tape& tape, int64_t bi) {
            const TrainSequence& s = corpus[static_cast<size_t>(order[start + size_t(bi)])];
            return answer_span_loss(tape, weights, nullptr, {}, s.tokens, s.answer_start);
          },
          params, threads);
      opt.step();
      epoch_loss += loss;
      ++n_batches;
    }
    result.final_loss = epoch_loss / static_cast<double>(n_batches);
    result.epochs = epoch;
    // the exact-match pass costs a third of an epoch; skip it while the loss
    // is clearly far from memorization
    bool measure = result.final_loss < 0.35 || epoch % 3 == 0 || epoch == opts.max_epochs;
    if (measure) {
      result.accuracy = corpus_answer_accuracy(weights, corpus, threads);
    }
    if (opts.verbose) {
      std::fprintf(stderr, "[pretrain] epoch %d loss %.4f acc %.4f\n", epoch, result.final_loss,
                   measure ? result.accuracy : -1.0);
    }
    if (measure && result.accuracy >= opts.target_acc) {
      weights.freeze();
      return result;
    }
  }
  throw TrainingError("pretrain epoch cap reached; achieved accuracy " +
                      std::to_string(result.accuracy));
}

}  // namespace editlab
