#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "editlab/connector.hpp"
#include "editlab/io.hpp"
#include "editlab/metrics.hpp"
#include "editlab/selfcheck.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace editlab;

namespace {

fs::path run_root() {
  const char* env = std::getenv("EDITLAB_RUN_ROOT");
  return env != nullptr ? fs::path(env) : fs::path(".");
}

fs::path resolve(const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : run_root() / path;
}

struct DataPaths {
  fs::path dir;
  fs::path world() const { return dir / "world.json"; }
  fs::path stream() const { return dir / "stream.jsonl"; }
  fs::path train_pairs() const { return dir / "train_pairs.jsonl"; }
};

std::vector<int> parse_gaps(const std::string& csv) {
  std::vector<int> gaps;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) gaps.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return gaps;
}

int cmd_gen_data(const std::string& out, uint64_t seed, int entities, int relations,
                 int facts_per_entity, int pairs, int train_pairs) {
  DataPaths paths{resolve(out)};
  KnowledgeBase kb = generate_world(seed, entities, relations, facts_per_entity);
  EditStream stream = make_edit_stream(kb, pairs, seed);
  std::vector<TrainingPair> train =
      make_training_pairs(kb, train_pairs, hash_combine(seed, 0x7472), stream.touched_entities);
  save_world(paths.world(), kb);
  save_stream(paths.stream(), stream);
  save_training_pairs(paths.train_pairs(), train);
  json manifest{{"schema", kSchemaVersion},
                {"kind", "dataset-manifest"},
                {"seed", seed},
                {"entities", entities},
                {"relations", relations},
                {"facts_per_entity", facts_per_entity},
                {"test_pairs", pairs},
                {"train_pairs", train_pairs},
                {"world_hash", file_hash(paths.world())},
                {"stream_hash", file_hash(paths.stream())},
                {"train_pairs_hash", file_hash(paths.train_pairs())}};
  write_text_file(paths.dir / "manifest.json", manifest.dump(2) + "\n");
  std::printf("world: %d entities, %zu facts; stream: %zu edits; training pairs: %zu\n",
              entities, kb.facts.size(), stream.records.size(), train.size());
  return 0;
}

int cmd_pretrain(const std::string& data, const std::string& out, PretrainOptions opts,
                 ModelConfig overrides, bool has_overrides) {
  DataPaths paths{resolve(data)};
  KnowledgeBase kb = load_world(paths.world());
  ModelConfig cfg = default_model_config(kb);
  if (has_overrides) {
    cfg.d_model = overrides.d_model;
    cfg.n_layers = overrides.n_layers;
    cfg.n_heads = overrides.n_heads;
    cfg.d_ff = overrides.d_ff;
    cfg.lora_rank = overrides.lora_rank;
  }
  TransformerWeights weights = init_model(cfg);
  auto corpus = build_pretrain_corpus(kb);
  PretrainResult res = pretrain(weights, corpus, opts);
  save_model(resolve(out), weights);
  std::printf("pretrained to accuracy %.4f in %d epochs (%zu sequences); frozen\n", res.accuracy,
              res.epochs, corpus.size());
  return 0;
}

int cmd_stage1(const std::string& data, const std::string& out, EncoderTrainOptions opts) {
  DataPaths paths{resolve(data)};
  KnowledgeBase kb = load_world(paths.world());
  auto pairs = load_training_pairs(paths.train_pairs());
  EncoderDataset dataset = build_encoder_dataset(kb, pairs);
  Encoders enc = train_encoders(kb.vocab, dataset, opts);
  double val = top1_accuracy(enc, dataset, dataset.validation, opts.alpha);
  TauCalibration cal = calibrate_tau(enc, dataset, opts.alpha);
  enc.thresholds = cal.tau;
  save_encoders(resolve(out), enc);
  std::printf(
      "stage 1: validation top-1 %.4f over %zu held-out rephrasings\n"
      "calibrated tau: text %.4f (max out-of-scope %.4f), visual %.4f (max out-of-scope %.4f)\n",
      val, dataset.validation.size(), cal.tau.text, cal.max_oos_text, cal.tau.visual,
      cal.max_oos_visual);
  return 0;
}

int cmd_stage2(const std::string& data, const std::string& model, const std::string& out,
               double hit_rate, Stage2Options opts) {
  DataPaths paths{resolve(data)};
  KnowledgeBase kb = load_world(paths.world());
  TransformerWeights weights = load_model(resolve(model));
  auto pairs = load_training_pairs(paths.train_pairs());
  AdversarialRetriever retriever{hit_rate, opts.seed};
  ConnectorWeights conn = train_connector_stage2(weights, kb, pairs, retriever, opts);
  AdapterBank artifact;
  artifact.mode = AdapterBank::Mode::dual;
  artifact.connector = std::move(conn);
  save_adapter_bank(resolve(out), artifact);
  std::printf("stage 2: connector trained on %zu pairs at hit rate %.2f; frozen\n", pairs.size(),
              hit_rate);
  return 0;
}

int cmd_run(const std::string& data, const std::string& model, const std::string& encoders_path,
            const std::string& connector_path, const std::string& strategy_name,
            const std::string& gaps_csv, EditorConfig config, const std::string& out) {
  auto strategy = strategy_from(strategy_name);
  if (!strategy) {
    std::fprintf(stderr, "unknown strategy '%s'\n", strategy_name.c_str());
    return 2;
  }
  config.strategy = *strategy;
  config.gaps = parse_gaps(gaps_csv);

  DataPaths paths{resolve(data)};
  KnowledgeBase kb = load_world(paths.world());
  EditStream stream = load_stream(paths.stream(), kb);
  TransformerWeights weights = load_model(resolve(model));

  std::optional<Encoders> encoders;
  StrategyTraits t = traits(*strategy);
  if (t.uses_store) {
    if (encoders_path.empty()) {
      throw DependencyError("strategy " + strategy_name +
                            " retrieves from the store; pass --encoders (run train-stage1 first)");
    }
    encoders = load_encoders(resolve(encoders_path));
  }
  std::optional<AdapterBank> connector_artifact;
  if (t.uses_connector) {
    if (connector_path.empty()) {
      throw DependencyError("strategy " + strategy_name +
                            " needs a trained connector; pass --connector (run train-stage2 first)");
    }
    connector_artifact = load_adapter_bank(resolve(connector_path));
  }

  RunState state = make_run_state(weights, kb, encoders ? &*encoders : nullptr, config,
                                  connector_artifact ? &connector_artifact->connector : nullptr);
  sequential_run(state, stream);
  MetricsReport report = evaluate_run(state.ledger, strategy_name, config.gaps);

  fs::path rundir = resolve(out);
  save_ledger(rundir / "ledger.jsonl", state.ledger);
  save_trace(rundir / "trace.jsonl", state.trace);
  save_store_snapshot(rundir / "store_text.jsonl", rundir / "store_visual.jsonl", state.store);
  write_text_file(rundir / "report.csv", report_csv({report}));

  ScopeThresholds tau{config.tau, config.tau};
  if (config.use_calibrated_tau && encoders) tau = encoders->thresholds;
  json manifest{
      {"schema", kSchemaVersion},
      {"kind", "run-manifest"},
      {"strategy", strategy_name},
      {"gaps", config.gaps},
      {"seed", config.seed},
      {"edit_steps", config.edit_steps},
      {"edit_lr", config.edit_lr},
      {"alpha", config.alpha},
      {"tau_text", tau.text},
      {"tau_visual", tau.visual},
      {"threads", config.threads},
      {"max_new_tokens", config.max_new_tokens},
      {"test_hit_rate", config.test_hit_rate ? json(*config.test_hit_rate) : json(nullptr)},
      {"world_hash", file_hash(paths.world())},
      {"stream_hash", file_hash(paths.stream())},
      {"model_hash", file_hash(resolve(model))},
      {"encoders_hash", encoders ? json(file_hash(resolve(encoders_path))) : json(nullptr)},
      {"connector_hash",
       connector_artifact ? json(file_hash(resolve(connector_path))) : json(nullptr)},
      // protocol notes: evaluate edit k at the state after edit k+g; one probe
      // per applicable kind per edit
      {"gap_semantics", "state-after-edit-k-plus-g"},
      {"probe_multiplicity", "one-per-kind-per-edit"},
  };
  write_text_file(rundir / "manifest.json", manifest.dump(2) + "\n");
  std::printf("%s", report_csv({report}).c_str());
  std::printf("run complete: %zu ledger rows -> %s\n", state.ledger.size(),
              rundir.string().c_str());
  return 0;
}

int cmd_report(const std::string& runs_csv, const std::string& out) {
  std::vector<MetricsReport> reports;
  std::string cur;
  for (char c : runs_csv + ",") {
    if (c != ',') {
      cur += c;
      continue;
    }
    if (cur.empty()) continue;
    fs::path rundir = resolve(cur);
    json manifest = json::parse(read_text_file(rundir / "manifest.json"));
    auto ledger = load_ledger(rundir / "ledger.jsonl");
    reports.push_back(evaluate_run(ledger, manifest.at("strategy").get<std::string>(),
                                   manifest.at("gaps").get<std::vector<int>>()));
    cur.clear();
  }
  std::string csv = report_csv(reports);
  if (!out.empty()) {
    write_text_file(resolve(out), csv);
  }
  std::printf("%s", csv.c_str());
  return 0;
}

int cmd_selftest() {
  bool all_pass = true;
  for (const CheckResult& r : run_selftest()) {
    std::printf("[%s] %-24s %s (%.2fs)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.c_str(), r.elapsed_s);
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual and compositional knowledge-editing laboratory"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic world and edit streams");
  std::string gen_out = "data";
  uint64_t gen_seed = 1;
  int gen_entities = 660, gen_relations = 8, gen_facts = 2, gen_pairs = 250, gen_train = 500;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", gen_seed);
  gen->add_option("--entities", gen_entities);
  gen->add_option("--relations", gen_relations);
  gen->add_option("--facts-per-entity", gen_facts);
  gen->add_option("--pairs", gen_pairs, "test stream pairs (2 edits each)");
  gen->add_option("--train-pairs", gen_train);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train and freeze the base model");
  std::string pre_data = "data", pre_out = "model.json";
  PretrainOptions pre_opts;
  ModelConfig pre_cfg;
  bool pre_has_cfg = false;
  pre->add_option("--data", pre_data);
  pre->add_option("--out", pre_out);
  pre->add_option("--target-acc", pre_opts.target_acc);
  pre->add_option("--max-epochs", pre_opts.max_epochs);
  pre->add_option("--batch", pre_opts.batch_size);
  pre->add_option("--lr", pre_opts.lr);
  pre->add_option("--threads", pre_opts.threads);
  pre->add_flag("--verbose", pre_opts.verbose);
  auto* dmodel_opt = pre->add_option("--d-model", pre_cfg.d_model);
  pre->add_option("--layers", pre_cfg.n_layers);
  pre->add_option("--heads", pre_cfg.n_heads);
  pre->add_option("--d-ff", pre_cfg.d_ff);
  pre->add_option("--rank", pre_cfg.lora_rank);

  // train-stage1
  auto* s1 = app.add_subcommand("train-stage1", "train the external-memory encoders");
  std::string s1_data = "data", s1_out = "encoders.json";
  EncoderTrainOptions s1_opts;
  s1->add_option("--data", s1_data);
  s1->add_option("--out", s1_out);
  s1->add_option("--iters", s1_opts.max_iters);
  s1->add_option("--dim", s1_opts.dim);
  s1->add_option("--negatives", s1_opts.negatives_per_positive);
  s1->add_option("--lr", s1_opts.lr);
  s1->add_option("--alpha", s1_opts.alpha);
  s1->add_option("--seed", s1_opts.seed);
  s1->add_option("--threads", s1_opts.threads);
  s1->add_flag("--verbose", s1_opts.verbose);

  // train-stage2
  auto* s2 = app.add_subcommand("train-stage2", "train the knowledge connector adversarially");
  std::string s2_data = "data", s2_model = "model.json", s2_out = "connector.json";
  double s2_hit = 0.7;
  Stage2Options s2_opts;
  s2->add_option("--data", s2_data);
  s2->add_option("--model", s2_model);
  s2->add_option("--out", s2_out);
  s2->add_option("--hit-rate", s2_hit, "training-time retrieval hit-rate cap");
  s2->add_option("--epochs", s2_opts.epochs);
  s2->add_option("--inner-steps", s2_opts.inner_steps);
  s2->add_option("--lr", s2_opts.lr);
  s2->add_option("--edit-steps", s2_opts.edit_steps);
  s2->add_option("--edit-lr", s2_opts.edit_lr);
  s2->add_option("--seed", s2_opts.seed);
  s2->add_flag("--verbose", s2_opts.verbose);

  // run
  auto* run = app.add_subcommand("run", "sequential editing run with gap evaluation");
  std::string run_data = "data", run_model = "model.json", run_enc = "", run_conn = "";
  std::string run_strategy = "memeic_full", run_gaps = "0,10,20,50,100", run_out = "runs/run";
  EditorConfig run_cfg;
  double run_test_hit = -1.0;
  run->add_option("--data", run_data);
  run->add_option("--model", run_model);
  run->add_option("--encoders", run_enc);
  run->add_option("--connector", run_conn);
  run->add_option("--strategy", run_strategy,
                  "external_only | internal_single_lora | internal_dual_lora | "
                  "hybrid_no_connector | memeic_full");
  run->add_option("--gaps", run_gaps);
  run->add_option("--edits", gen_pairs,
                  "informational; the stream file fixes the edit count")
      ->group("");
  run->add_option("--edit-steps", run_cfg.edit_steps);
  run->add_option("--edit-lr", run_cfg.edit_lr);
  run->add_option("--tau", run_cfg.tau, "manual scope threshold (disables calibrated values)");
  run->add_option("--alpha", run_cfg.alpha);
  run->add_option("--seed", run_cfg.seed);
  run->add_option("--threads", run_cfg.threads);
  run->add_option("--test-hit-rate", run_test_hit,
                  "adversarial retrieval rate for compositional probes");
  run->add_option("--out", run_out);

  // report
  auto* rep = app.add_subcommand("report", "aggregate run ledgers into one CSV");
  std::string rep_runs, rep_out;
  rep->add_option("--compare,--runs", rep_runs, "comma-separated run directories")->required();
  rep->add_option("--out", rep_out);

  auto* self = app.add_subcommand("selftest", "run the property suites");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_out, gen_seed, gen_entities, gen_relations, gen_facts, gen_pairs,
                          gen_train);
    }
    if (pre->parsed()) {
      pre_has_cfg = dmodel_opt->count() > 0;
      return cmd_pretrain(pre_data, pre_out, pre_opts, pre_cfg, pre_has_cfg);
    }
    if (s1->parsed()) return cmd_stage1(s1_data, s1_out, s1_opts);
    if (s2->parsed()) return cmd_stage2(s2_data, s2_model, s2_out, s2_hit, s2_opts);
    if (run->parsed()) {
      if (run->count("--tau") > 0) run_cfg.use_calibrated_tau = false;
      if (run_test_hit >= 0.0) run_cfg.test_hit_rate = run_test_hit;
      return cmd_run(run_data, run_model, run_enc, run_conn, run_strategy, run_gaps, run_cfg,
                     run_out);
    }
    if (rep->parsed()) return cmd_report(rep_runs, rep_out);
    if (self->parsed()) return cmd_selftest();
  } catch (const DependencyError& e) {
    std::fprintf(stderr, "dependency error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
