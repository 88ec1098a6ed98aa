#pragma once

#include <optional>
#include <string>

#include "editlab/memory.hpp"
#include "editlab/model.hpp"
#include "editlab/world.hpp"

namespace editlab {

enum class Strategy {
  external_only,
  internal_single_lora,
  internal_dual_lora,
  hybrid_no_connector,
  memeic_full,
};

const char* to_string(Strategy s);
std::optional<Strategy> strategy_from(const std::string& name);

struct StrategyTraits {
  bool uses_store = false;
  bool uses_adapters = false;
  bool shared_adapter = false;
  bool uses_connector = false;
};
StrategyTraits traits(Strategy s);

struct EditorConfig {
  Strategy strategy = Strategy::memeic_full;
  int edit_steps = 10;
  double edit_lr = 1e-2;
  double tau = 0.8;                // fallback when no calibration is used
  bool use_calibrated_tau = true;  // prefer the encoders' stage-1 thresholds
  double alpha = 0.5;
  std::vector<int> gaps = {0, 10, 20, 50, 100};
  uint64_t seed = 1;
  int threads = 0;
  int max_new_tokens = 3;
  // When set, compositional probes are served by the adversarial retriever
  // at this hit rate instead of similarity retrieval.
  std::optional<double> test_hit_rate;
  // When set, only this probe kind is evaluated (ablation runs that need a
  // single metric).
  std::optional<ProbeKind> only_probe;
};

// Oracle with a capped hit rate: each retrieval slot returns the true entry
// with probability hit_rate, otherwise a uniformly sampled other entry.
struct AdversarialRetriever {
  double hit_rate = 0.7;
  uint64_t seed = 1;
};

RetrievedContext adversarial_retrieve(const AdversarialRetriever& retriever,
                                      const MemoryStore& store, const DecomposedQuery& dq,
                                      int truth_visual, int truth_text, uint64_t slot_key);

struct LedgerRow {
  int edit = 0;
  int gap = 0;
  ProbeKind kind = ProbeKind::vis_rel;
  bool ok = false;
  TokenList pred;
};

struct TraceRow {
  int edit = 0;
  int gap = 0;
  ProbeKind kind = ProbeKind::vis_rel;
  char slot = 't';  // 't' or 'v'
  int index = -1;
  double score = 0.0;
  bool above_tau = false;
  int truth_hit = -1;  // -1 unknown, else 0/1
};

struct RunState {
  TransformerWeights* weights = nullptr;
  const KnowledgeBase* kb = nullptr;
  const Encoders* encoders = nullptr;  // required when the strategy retrieves
  EditorConfig config;
  AdapterBank bank;
  MemoryStore store;
  std::vector<LedgerRow> ledger;
  std::vector<TraceRow> trace;
  std::vector<std::vector<TokenList>> baselines;  // [record][probe] pre-edit outputs
};

RunState make_run_state(TransformerWeights& weights, const KnowledgeBase& kb,
                        const Encoders* encoders, const EditorConfig& config,
                        const ConnectorWeights* trained_connector = nullptr);

// Gradient update restricted to the adapter matching the edit's modality
// (the shared adapter in single mode). Frozen weights, the other adapter and
// the connector are untouched; optimizer state is fresh per edit.
void edit_update(TransformerWeights& weights, AdapterBank& bank, const EditRecord& edit,
                 int steps, double lr);

void apply_edit(RunState& state, const EditRecord& edit);

// Applies the stream in order; edit k's probes are evaluated against the
// state immediately after edit k+g for every gap g with k+g in range.
// Locality baselines are recorded from the pre-edit model first.
void sequential_run(RunState& state, const EditStream& stream);

struct Stage2Options {
  int epochs = 1;
  int inner_steps = 4;
  double lr = 2e-3;
  int edit_steps = 10;
  double edit_lr = 1e-2;
  uint64_t seed = 1;
  int threads = 0;
  bool verbose = false;
};

// Stage-2 connector training: per compositional training example the pair's
// edits are applied to fresh scratch adapters, evidence comes from the
// adversarial retriever, and only the connector parameters are optimized.
// The returned connector is frozen.
ConnectorWeights train_connector_stage2(TransformerWeights& weights, const KnowledgeBase& kb,
                                        const std::vector<TrainingPair>& pairs,
                                        const AdversarialRetriever& retriever,
                                        const Stage2Options& opts);

}  // namespace editlab
