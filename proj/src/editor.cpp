#include "editlab/editor.hpp"

#include <cmath>

#include "editlab/errors.hpp"
#include "editlab/optim.hpp"
#include "editlab/rng.hpp"
#include "editlab/threading.hpp"

namespace editlab {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::external_only: return "external_only";
    case Strategy::internal_single_lora: return "internal_single_lora";
    case Strategy::internal_dual_lora: return "internal_dual_lora";
    case Strategy::hybrid_no_connector: return "hybrid_no_connector";
    case Strategy::memeic_full: return "memeic_full";
  }
  return "?";
}

std::optional<Strategy> strategy_from(const std::string& name) {
  for (Strategy s : {Strategy::external_only, Strategy::internal_single_lora,
                     Strategy::internal_dual_lora, Strategy::hybrid_no_connector,
                     Strategy::memeic_full}) {
    if (name == to_string(s)) return s;
  }
  return std::nullopt;
}

StrategyTraits traits(Strategy s) {
  switch (s) {
    case Strategy::external_only: return {true, false, false, false};
    case Strategy::internal_single_lora: return {false, true, true, false};
    case Strategy::internal_dual_lora: return {false, true, false, false};
    case Strategy::hybrid_no_connector: return {true, true, false, false};
    case Strategy::memeic_full: return {true, true, false, true};
  }
  return {};
}

RetrievedContext adversarial_retrieve(const AdversarialRetriever& retriever,
                                      const MemoryStore& store, const DecomposedQuery& dq,
                                      int truth_visual, int truth_text, uint64_t slot_key) {
  if (retriever.hit_rate < 0.0 || retriever.hit_rate > 1.0) {
    throw PreconditionError("hit rate must lie in [0, 1]");
  }
  RetrievedContext ctx;
  auto draw_slot = [&](SlotResult& slot, int truth, size_t pool, uint64_t slot_id) {
    if (pool == 0) return;
    slot.attempted = true;
    Rng rng = Rng::fork(retriever.seed, hash_combine(0x616476, slot_id), slot_key);
    bool hit = pool < 2 ? true : rng.bernoulli(retriever.hit_rate);
    if (hit) {
      slot.index = truth;
    } else {
      int other = static_cast<int>(rng.uniform_int(pool - 1));
      if (other >= truth) ++other;
      slot.index = other;
    }
    slot.score = 1.0;  // oracle path bypasses similarity scoring
    slot.above_tau = true;
    slot.truth_hit = slot.index == truth;
  };
  bool want_visual = dq.qtype != QueryType::textual;
  bool want_text = dq.qtype != QueryType::visual;
  if (want_visual) draw_slot(ctx.visual, truth_visual, store.visual.size(), 1);
  if (want_text) draw_slot(ctx.text, truth_text, store.text.size(), 2);
  if (dq.qtype == QueryType::compositional) {
    if (ctx.visual.index >= 0) {
      ctx.substituted_question =
          substitute_placeholder(dq, store.visual[static_cast<size_t>(ctx.visual.index)].answer);
    } else {
      ctx.substituted_question = dq.text_question;
    }
  }
  return ctx;
}

RunState make_run_state(TransformerWeights& weights, const KnowledgeBase& kb,
                        const Encoders* encoders, const EditorConfig& config,
                        const ConnectorWeights* trained_connector) {
  StrategyTraits t = traits(config.strategy);
  if (t.uses_store && encoders == nullptr) {
    throw PreconditionError("strategy retrieves from the store but no encoders were provided");
  }
  if (!weights.frozen) throw PreconditionError("run requires frozen base weights");
  RunState state;
  state.weights = &weights;
  state.kb = &kb;
  state.encoders = encoders;
  state.config = config;
  state.bank = t.shared_adapter ? AdapterBank::make_single(weights.config)
                                : AdapterBank::make_dual(weights.config);
  if (trained_connector != nullptr) {
    state.bank.connector = *trained_connector;
  }
  if (!t.uses_connector) {
    // no connector in this strategy: keep the exact zero deltas
    for (ConnectorWeights::LayerDelta& d : state.bank.connector.deltas) {
      d.dq.up.value.fill(0.0);
      d.dk.up.value.fill(0.0);
    }
  }
  return state;
}

void edit_update(TransformerWeights& weights, AdapterBank& bank, const EditRecord& edit,
                 int steps, double lr) {
  if (edit.edit_prompt.qtype == QueryType::compositional) {
    throw PreconditionError("each edit alters either the visual or the textual adapter");
  }
  if (steps < 0) throw PreconditionError("negative step count");
  if (steps == 0) return;
  ModalityGates gates = gates_for_query(edit.edit_prompt.qtype);
  std::vector<Parameter*> params;
  if (bank.mode == AdapterBank::Mode::single) {
    params = bank.shared_params();
  } else {
    params = edit.kind == EditKind::visual ? bank.visual_params() : bank.textual_params();
  }
  TokenList tokens = render_qa(edit.edit_prompt, edit.edit_target);
  int64_t answer_start = static_cast<int64_t>(tokens.size() - edit.edit_target.size() - 1);
  AdamW opt(params, AdamW::Options{.lr = lr});  // fresh moments per edit
  for (int s = 0; s < steps; ++s) {
    opt.zero_grad();
    Tape tape;
    Var loss = answer_span_loss(tape, weights, &bank, gates, tokens, answer_start);
    tape.backward(loss);
    tape.apply_param_grads();
    opt.step();
  }
}

void apply_edit(RunState& state, const EditRecord& edit) {
  StrategyTraits t = traits(state.config.strategy);
  if (t.uses_store) {
    add_edit(state.store, *state.encoders, state.kb->vocab, edit);
  }
  if (t.uses_adapters) {
    edit_update(*state.weights, state.bank, edit, state.config.edit_steps, state.config.edit_lr);
  }
}

namespace {

struct EvalOutcome {
  LedgerRow row;
  std::vector<TraceRow> trace;
};

EvalOutcome evaluate_probe(RunState& state, const EditRecord& record, size_t probe_idx, int gap) {
  const Probe& probe = record.probes[probe_idx];
  const Vocab& vocab = state.kb->vocab;
  StrategyTraits t = traits(state.config.strategy);
  DecomposedQuery dq = decompose(vocab, probe.query);
  ModalityGates gates = gates_for_query(dq.qtype);
  AdapterBank* bank = t.uses_adapters ? &state.bank : nullptr;

  EvalOutcome out;
  out.row.edit = record.index;
  out.row.gap = gap;
  out.row.kind = probe.kind;

  TokenList context;
  if (t.uses_store) {
    RetrievedContext ctx;
    if (dq.qtype == QueryType::compositional && state.config.test_hit_rate.has_value()) {
      AdversarialRetriever retr{*state.config.test_hit_rate, state.config.seed};
      uint64_t slot_key = hash_combine(hash_combine(uint64_t(record.index), uint64_t(gap)),
                                       uint64_t(probe.kind));
      ctx = adversarial_retrieve(retr, state.store, dq, record.pair, record.pair, slot_key);
    } else {
      ScopeThresholds tau{state.config.tau, state.config.tau};
      if (state.config.use_calibrated_tau) tau = state.encoders->thresholds;
      ctx = retrieve_for_query(state.store, *state.encoders, dq, tau, state.config.alpha);
    }
    context = assemble_context(vocab, state.store, dq, ctx);
    for (const auto& [slot, name] : {std::pair{&ctx.visual, 'v'}, std::pair{&ctx.text, 't'}}) {
      if (!slot->attempted) continue;
      TraceRow tr;
      tr.edit = record.index;
      tr.gap = gap;
      tr.kind = probe.kind;
      tr.slot = name;
      tr.index = slot->index;
      tr.score = slot->score;
      tr.above_tau = slot->above_tau;
      tr.truth_hit = slot->truth_hit.has_value() ? (*slot->truth_hit ? 1 : 0) : -1;
      out.trace.push_back(tr);
    }
  }

  TokenList prompt = render_prompt(context, probe.query);
  out.row.pred = greedy_decode(*state.weights, bank, gates, prompt, state.config.max_new_tokens,
                               Vocab::kEoa);
  if (probe.kind == ProbeKind::text_loc || probe.kind == ProbeKind::image_loc) {
    const TokenList& baseline = state.baselines[static_cast<size_t>(record.index)][probe_idx];
    out.row.ok = out.row.pred == baseline;
  } else {
    out.row.ok = out.row.pred == probe.gold;
  }
  return out;
}

}  // namespace

void sequential_run(RunState& state, const EditStream& stream) {
  int threads = state.config.threads > 0 ? state.config.threads : default_threads();
  int64_t n_records = static_cast<int64_t>(stream.records.size());

  // pre-edit outputs for every locality probe (zero adapters, empty store)
  state.baselines.assign(stream.records.size(), {});
  for (size_t r = 0; r < stream.records.size(); ++r) {
    state.baselines[r].resize(stream.records[r].probes.size());
  }
  struct BaselineTask {
    size_t record;
    size_t probe;
  };
  std::vector<BaselineTask> btasks;
  for (size_t r = 0; r < stream.records.size(); ++r) {
    const EditRecord& rec = stream.records[r];
    for (size_t p = 0; p < rec.probes.size(); ++p) {
      bool is_loc = rec.probes[p].kind == ProbeKind::text_loc ||
                    rec.probes[p].kind == ProbeKind::image_loc;
      if (!is_loc) continue;
      if (state.config.only_probe && rec.probes[p].kind != *state.config.only_probe) continue;
      btasks.push_back({r, p});
    }
  }
  parallel_for(static_cast<int64_t>(btasks.size()), threads, [&](int64_t i) {
    const BaselineTask& bt = btasks[static_cast<size_t>(i)];
    const Probe& probe = stream.records[bt.record].probes[bt.probe];
    ModalityGates gates = gates_for_query(probe.query.qtype);
    TokenList prompt = render_prompt({}, probe.query);
    state.baselines[bt.record][bt.probe] = greedy_decode(
        *state.weights, nullptr, gates, prompt, state.config.max_new_tokens, Vocab::kEoa);
  });

  struct EvalTask {
    int record;
    int gap;
    size_t probe;
  };
  for (int64_t j = 0; j < n_records; ++j) {
    apply_edit(state, stream.records[static_cast<size_t>(j)]);
    std::vector<EvalTask> tasks;
    for (int gap : state.config.gaps) {
      int64_t k = j - gap;
      if (k < 0) continue;
      const EditRecord& rec = stream.records[static_cast<size_t>(k)];
      for (size_t p = 0; p < rec.probes.size(); ++p) {
        if (state.config.only_probe && rec.probes[p].kind != *state.config.only_probe) continue;
        tasks.push_back({static_cast<int>(k), gap, p});
      }
    }
    std::vector<EvalOutcome> outcomes(tasks.size());
    parallel_for(static_cast<int64_t>(tasks.size()), threads, [&](int64_t i) {
      const EvalTask& task = tasks[static_cast<size_t>(i)];
      outcomes[static_cast<size_t>(i)] = evaluate_probe(
          state, stream.records[static_cast<size_t>(task.record)], task.probe, task.gap);
    });
    for (EvalOutcome& o : outcomes) {
      state.ledger.push_back(std::move(o.row));
      for (TraceRow& tr : o.trace) state.trace.push_back(tr);
    }
  }
}

ConnectorWeights train_connector_stage2(TransformerWeights& weights, const KnowledgeBase& kb,
                                        const std::vector<TrainingPair>& pairs,
                                        const AdversarialRetriever& retriever,
                                        const Stage2Options& opts) {
  if (pairs.empty()) throw PreconditionError("stage 2 needs training pairs");
  if (!weights.frozen) throw PreconditionError("stage 2 requires frozen base weights");

  // counterfactual pool: every training edit, order-stable
  Encoders scratch_enc = Encoders::init(kb.vocab, 8, opts.seed);
  MemoryStore train_store;
  for (const TrainingPair& tp : pairs) {
    add_edit(train_store, scratch_enc, kb.vocab, tp.visual);
    add_edit(train_store, scratch_enc, kb.vocab, tp.textual);
  }

  AdapterBank bank = AdapterBank::make_dual(weights.config);
  std::vector<Parameter*> conn_params = bank.connector_params();
  AdamW opt(conn_params, AdamW::Options{.lr = opts.lr});
  Rng rng = Rng::fork(opts.seed, 0x735432);

  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t oi = 0; oi < order.size(); ++oi) {
      const TrainingPair& tp = pairs[order[oi]];
      // fresh adapters carry exactly this example's edits
      bank.reset_adapters(hash_combine(hash_combine(opts.seed, uint64_t(epoch)), order[oi]));
      edit_update(weights, bank, tp.visual, opts.edit_steps, opts.edit_lr);
      edit_update(weights, bank, tp.textual, opts.edit_steps, opts.edit_lr);

      DecomposedQuery dq = decompose(kb.vocab, tp.comp.query);
      uint64_t slot_key = hash_combine(hash_combine(opts.seed, uint64_t(epoch) * 1315423911ULL),
                                       order[oi]);
      RetrievedContext ctx = adversarial_retrieve(retriever, train_store, dq,
                                                  static_cast<int>(order[oi]),
                                                  static_cast<int>(order[oi]), slot_key);
      TokenList context = assemble_context(kb.vocab, train_store, dq, ctx);
      TokenList tokens = context;
      TokenList qa = render_qa(tp.comp.query, tp.comp.gold);
      tokens.insert(tokens.end(), qa.begin(), qa.end());
      int64_t answer_start = static_cast<int64_t>(tokens.size() - tp.comp.gold.size() - 1);

      for (int s = 0; s < opts.inner_steps; ++s) {
        opt.zero_grad();
        Tape tape;
        Var loss = answer_span_loss(tape, weights, &bank, {1, 1}, tokens, answer_start);
        double lv = loss.scalar();
        if (!std::isfinite(lv)) throw TrainingError("stage 2 diverged");
        if (s + 1 == opts.inner_steps) epoch_loss += lv;
        tape.backward(loss);
        tape.apply_param_grads();
        opt.step();
      }
    }
    if (opts.verbose) {
      std::fprintf(stderr, "[stage2] epoch %d mean loss %.4f\n", epoch,
                   epoch_loss / static_cast<double>(order.size()));
    }
  }
  for (Parameter* p : conn_params) p->trainable = false;
  return std::move(bank.connector);
}

}  // namespace editlab
