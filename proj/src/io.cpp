#include "editlab/io.hpp"

#include <fstream>
#include <sstream>

#include "editlab/errors.hpp"
#include "json.hpp"

namespace editlab {

using nlohmann::json;

namespace {

void require_schema(const json& j, const char* what) {
  if (!j.contains("schema") || j["schema"].get<int>() != kSchemaVersion) {
    throw ConfigError(std::string(what) + ": unsupported or missing schema version");
  }
}

void require_artifact(const json& j, const char* kind) {
  require_schema(j, kind);
  if (!j.contains("kind") || j["kind"].get<std::string>() != kind) {
    throw ConfigError(std::string("expected artifact kind '") + kind + "'");
  }
}

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape}, {"data", t.data}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<std::vector<int64_t>>(),
                j.at("data").get<std::vector<double>>());
}

json query_to_json(const Query& q) {
  json j{{"qtype", to_string(q.qtype)}, {"body", q.body}, {"text", q.text}};
  if (q.image) {
    j["image"] = {{"entity", q.image->entity_id}, {"variant", q.image->variant_seed}};
  } else {
    j["image"] = nullptr;
  }
  return j;
}

Query query_from_json(const json& j) {
  Query q;
  std::string t = j.at("qtype").get<std::string>();
  if (t == "visual") q.qtype = QueryType::visual;
  else if (t == "textual") q.qtype = QueryType::textual;
  else if (t == "compositional") q.qtype = QueryType::compositional;
  else throw ConfigError("unknown qtype " + t);
  q.body = j.at("body").get<TokenList>();
  q.text = j.at("text").get<std::string>();
  if (!j.at("image").is_null()) {
    q.image = ImageSpec{j["image"].at("entity").get<int>(), j["image"].at("variant").get<int>()};
  }
  return q;
}

json probe_to_json(const Probe& p) {
  return json{{"kind", to_string(p.kind)}, {"query", query_to_json(p.query)}, {"gold", p.gold}};
}

Probe probe_from_json(const json& j) {
  Probe p;
  auto kind = probe_kind_from(j.at("kind").get<std::string>());
  if (!kind) throw ConfigError("unknown probe kind");
  p.kind = *kind;
  p.query = query_from_json(j.at("query"));
  p.gold = j.at("gold").get<TokenList>();
  return p;
}

json record_to_json(const EditRecord& r) {
  json j{
      {"schema", kSchemaVersion},
      {"index", r.index},
      {"pair", r.pair},
      {"kind", to_string(r.kind)},
      {"visual",
       {{"image", {{"entity", r.visual.image.entity_id}, {"variant", r.visual.image.variant_seed}}},
        {"old_entity", r.visual.old_entity},
        {"new_entity", r.visual.new_entity}}},
      {"edit_prompt", query_to_json(r.edit_prompt)},
      {"edit_target", r.edit_target},
  };
  if (r.kind == EditKind::textual) {
    j["textual"] = {{"subject", r.textual.subject},
                    {"relation", r.textual.relation},
                    {"old_object", r.textual.old_object},
                    {"new_object", r.textual.new_object}};
  }
  json probes = json::array();
  for (const Probe& p : r.probes) probes.push_back(probe_to_json(p));
  j["probes"] = probes;
  return j;
}

EditRecord record_from_json(const json& j) {
  require_schema(j, "record");
  EditRecord r;
  r.index = j.at("index").get<int>();
  r.pair = j.at("pair").get<int>();
  r.kind = j.at("kind").get<std::string>() == "visual" ? EditKind::visual : EditKind::textual;
  const json& v = j.at("visual");
  r.visual.image = ImageSpec{v.at("image").at("entity").get<int>(),
                             v.at("image").at("variant").get<int>()};
  r.visual.old_entity = v.at("old_entity").get<int>();
  r.visual.new_entity = v.at("new_entity").get<int>();
  if (r.kind == EditKind::textual) {
    const json& t = j.at("textual");
    r.textual.subject = t.at("subject").get<int>();
    r.textual.relation = t.at("relation").get<int>();
    r.textual.old_object = t.at("old_object").get<int>();
    r.textual.new_object = t.at("new_object").get<int>();
  }
  r.edit_prompt = query_from_json(j.at("edit_prompt"));
  r.edit_target = j.at("edit_target").get<TokenList>();
  for (const json& pj : j.at("probes")) r.probes.push_back(probe_from_json(pj));
  return r;
}

json params_to_json(const std::vector<const Parameter*>& params,
                    const std::vector<std::string>& names) {
  json j = json::object();
  for (size_t i = 0; i < params.size(); ++i) j[names[i]] = tensor_to_json(params[i]->value);
  return j;
}

std::vector<std::string> model_param_names(const ModelConfig& cfg) {
  std::vector<std::string> names = {"tok_emb", "pos_emb"};
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    for (const char* n : {"wq", "wk", "wv", "wo", "ln1_g", "ln1_b", "w1", "w2", "ln2_g", "ln2_b"}) {
      names.push_back(p + n);
    }
  }
  names.push_back("lnf_g");
  names.push_back("lnf_b");
  names.push_back("head");
  return names;
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f.is_open()) {
    throw DependencyError("missing required file: " + path.string());
  }
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f.is_open()) throw ConfigError("cannot write " + path.string());
  f << content;
}

uint64_t file_hash(const std::filesystem::path& path) {
  std::string bytes = read_text_file(path);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_world(const std::filesystem::path& path, const KnowledgeBase& kb) {
  json j{{"schema", kSchemaVersion},
         {"kind", "world"},
         {"config",
          {{"seed", kb.config.seed},
           {"n_entities", kb.config.n_entities},
           {"n_relations", kb.config.n_relations},
           {"facts_per_entity", kb.config.facts_per_entity},
           {"image_positions", kb.config.image_positions},
           {"image_alphabet", kb.config.image_alphabet},
           {"n_frames", kb.config.n_frames}}}};
  json facts = json::array();
  for (const Fact& f : kb.facts) facts.push_back({f.subject, f.relation, f.object});
  j["facts"] = facts;
  write_text_file(path, j.dump());
}

KnowledgeBase load_world(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path));
  require_artifact(j, "world");
  const json& c = j.at("config");
  WorldConfig cfg;
  cfg.seed = c.at("seed").get<uint64_t>();
  cfg.n_entities = c.at("n_entities").get<int>();
  cfg.n_relations = c.at("n_relations").get<int>();
  cfg.facts_per_entity = c.at("facts_per_entity").get<int>();
  cfg.image_positions = c.at("image_positions").get<int>();
  cfg.image_alphabet = c.at("image_alphabet").get<int>();
  cfg.n_frames = c.at("n_frames").get<int>();
  KnowledgeBase kb = generate_world(cfg);
  // facts are regenerated; verify the file matches the generator
  const json& facts = j.at("facts");
  if (facts.size() != kb.facts.size()) throw ConfigError("world file facts diverge from seed");
  for (size_t i = 0; i < kb.facts.size(); ++i) {
    if (facts[i][0].get<int>() != kb.facts[i].subject ||
        facts[i][1].get<int>() != kb.facts[i].relation ||
        facts[i][2].get<int>() != kb.facts[i].object) {
      throw ConfigError("world file facts diverge from seed");
    }
  }
  return kb;
}

void save_stream(const std::filesystem::path& path, const EditStream& stream) {
  std::ostringstream os;
  for (const EditRecord& r : stream.records) os << record_to_json(r).dump() << '\n';
  write_text_file(path, os.str());
}

EditStream load_stream(const std::filesystem::path& path, const KnowledgeBase& kb) {
  std::istringstream is(read_text_file(path));
  EditStream stream;
  std::string line;
  std::vector<bool> touched(static_cast<size_t>(kb.config.n_entities), false);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EditRecord r = record_from_json(json::parse(line));
    if (r.kind == EditKind::visual) {
      touched[static_cast<size_t>(r.visual.old_entity)] = true;
      touched[static_cast<size_t>(r.visual.new_entity)] = true;
    } else {
      touched[static_cast<size_t>(r.textual.subject)] = true;
    }
    stream.records.push_back(std::move(r));
  }
  for (int e = 0; e < kb.config.n_entities; ++e) {
    (touched[static_cast<size_t>(e)] ? stream.touched_entities : stream.untouched_entities)
        .push_back(e);
  }
  return stream;
}

void save_training_pairs(const std::filesystem::path& path,
                         const std::vector<TrainingPair>& pairs) {
  std::ostringstream os;
  for (const TrainingPair& tp : pairs) {
    json j{{"schema", kSchemaVersion},
           {"visual", record_to_json(tp.visual)},
           {"textual", record_to_json(tp.textual)},
           {"comp", probe_to_json(tp.comp)}};
    os << j.dump() << '\n';
  }
  write_text_file(path, os.str());
}

std::vector<TrainingPair> load_training_pairs(const std::filesystem::path& path) {
  std::istringstream is(read_text_file(path));
  std::vector<TrainingPair> pairs;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    require_schema(j, "pair");
    TrainingPair tp;
    tp.visual = record_from_json(j.at("visual"));
    tp.textual = record_from_json(j.at("textual"));
    tp.comp = probe_from_json(j.at("comp"));
    pairs.push_back(std::move(tp));
  }
  return pairs;
}

void save_model(const std::filesystem::path& path, const TransformerWeights& weights) {
  const ModelConfig& cfg = weights.config;
  json j{{"schema", kSchemaVersion},
         {"kind", "model"},
         {"frozen", weights.frozen},
         {"config",
          {{"d_model", cfg.d_model},
           {"n_layers", cfg.n_layers},
           {"n_heads", cfg.n_heads},
           {"d_ff", cfg.d_ff},
           {"vocab_size_text", cfg.vocab_size_text},
           {"vocab_size_image", cfg.vocab_size_image},
           {"max_seq_len", cfg.max_seq_len},
           {"lora_rank", cfg.lora_rank},
           {"connector_layers", cfg.connector_layers},
           {"seed", cfg.seed}}}};
  j["params"] = params_to_json(weights.params(), model_param_names(cfg));
  write_text_file(path, j.dump());
}

TransformerWeights load_model(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path));
  require_artifact(j, "model");
  const json& c = j.at("config");
  ModelConfig cfg;
  cfg.d_model = c.at("d_model").get<int>();
  cfg.n_layers = c.at("n_layers").get<int>();
  cfg.n_heads = c.at("n_heads").get<int>();
  cfg.d_ff = c.at("d_ff").get<int>();
  cfg.vocab_size_text = c.at("vocab_size_text").get<int>();
  cfg.vocab_size_image = c.at("vocab_size_image").get<int>();
  cfg.max_seq_len = c.at("max_seq_len").get<int>();
  cfg.lora_rank = c.at("lora_rank").get<int>();
  cfg.connector_layers = c.at("connector_layers").get<std::vector<int>>();
  cfg.seed = c.at("seed").get<uint64_t>();
  TransformerWeights w = init_model(cfg);
  std::vector<std::string> names = model_param_names(cfg);
  std::vector<Parameter*> params = w.params();
  const json& pj = j.at("params");
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor t = tensor_from_json(pj.at(names[i]));
    if (t.shape != params[i]->value.shape) {
      throw ConfigError("model checkpoint shape mismatch at " + names[i]);
    }
    params[i]->value = std::move(t);
  }
  if (j.at("frozen").get<bool>()) w.freeze();
  return w;
}

void save_encoders(const std::filesystem::path& path, const Encoders& enc) {
  json j{{"schema", kSchemaVersion},
         {"kind", "encoders"},
         {"dim", enc.dim},
         {"text_vocab", enc.text_vocab},
         {"image_offset", enc.image_offset},
         {"image_vocab", enc.image_vocab},
         {"image_positions", enc.image_positions},
         {"tau_text", enc.thresholds.text},
         {"tau_visual", enc.thresholds.visual},
         {"frozen", enc.frozen},
         {"params",
          {{"text_emb", tensor_to_json(enc.text_emb.value)},
           {"text_head", tensor_to_json(enc.text_head.value)},
           {"img_emb", tensor_to_json(enc.img_emb.value)},
           {"img_head", tensor_to_json(enc.img_head.value)}}}};
  write_text_file(path, j.dump());
}

Encoders load_encoders(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path));
  require_artifact(j, "encoders");
  Encoders e;
  e.dim = j.at("dim").get<int>();
  e.text_vocab = j.at("text_vocab").get<int>();
  e.image_offset = j.at("image_offset").get<int>();
  e.image_vocab = j.at("image_vocab").get<int>();
  e.image_positions = j.at("image_positions").get<int>();
  e.thresholds.text = j.at("tau_text").get<double>();
  e.thresholds.visual = j.at("tau_visual").get<double>();
  const json& p = j.at("params");
  e.text_emb = Parameter(tensor_from_json(p.at("text_emb")));
  e.text_head = Parameter(tensor_from_json(p.at("text_head")));
  e.img_emb = Parameter(tensor_from_json(p.at("img_emb")));
  e.img_head = Parameter(tensor_from_json(p.at("img_head")));
  if (j.at("frozen").get<bool>()) e.freeze();
  return e;
}

namespace {

json adapter_to_json(const LoraAdapter& a) {
  return json{{"down", tensor_to_json(a.down.value)},
              {"up", tensor_to_json(a.up.value)},
              {"scale", a.scale}};
}

LoraAdapter adapter_from_json(const json& j) {
  LoraAdapter a;
  a.down = Parameter(tensor_from_json(j.at("down")));
  a.up = Parameter(tensor_from_json(j.at("up")));
  a.scale = j.at("scale").get<double>();
  return a;
}

json adapters_to_json(const std::vector<LoraAdapter>& v) {
  json arr = json::array();
  for (const LoraAdapter& a : v) arr.push_back(adapter_to_json(a));
  return arr;
}

std::vector<LoraAdapter> adapters_from_json(const json& arr) {
  std::vector<LoraAdapter> v;
  for (const json& j : arr) v.push_back(adapter_from_json(j));
  return v;
}

}  // namespace

void save_adapter_bank(const std::filesystem::path& path, const AdapterBank& bank) {
  json connector{{"layer_indices", bank.connector.layer_indices}, {"deltas", json::array()}};
  for (const ConnectorWeights::LayerDelta& d : bank.connector.deltas) {
    connector["deltas"].push_back(
        {{"dq", adapter_to_json(d.dq)}, {"dk", adapter_to_json(d.dk)}});
  }
  json j{{"schema", kSchemaVersion},
         {"kind", "adapters"},
         {"mode", bank.mode == AdapterBank::Mode::dual ? "dual" : "single"},
         {"visual", adapters_to_json(bank.visual)},
         {"textual", adapters_to_json(bank.textual)},
         {"shared", adapters_to_json(bank.shared)},
         {"connector", connector}};
  write_text_file(path, j.dump());
}

AdapterBank load_adapter_bank(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path));
  require_artifact(j, "adapters");
  AdapterBank bank;
  bank.mode = j.at("mode").get<std::string>() == "dual" ? AdapterBank::Mode::dual
                                                        : AdapterBank::Mode::single;
  bank.visual = adapters_from_json(j.at("visual"));
  bank.textual = adapters_from_json(j.at("textual"));
  bank.shared = adapters_from_json(j.at("shared"));
  const json& c = j.at("connector");
  bank.connector.layer_indices = c.at("layer_indices").get<std::vector<int>>();
  for (const json& dj : c.at("deltas")) {
    ConnectorWeights::LayerDelta d;
    d.dq = adapter_from_json(dj.at("dq"));
    d.dk = adapter_from_json(dj.at("dk"));
    bank.connector.deltas.push_back(std::move(d));
  }
  return bank;
}

std::string ledger_to_jsonl(const std::vector<LedgerRow>& ledger) {
  std::ostringstream os;
  for (const LedgerRow& r : ledger) {
    json j{{"edit", r.edit},
           {"gap", r.gap},
           {"kind", to_string(r.kind)},
           {"ok", r.ok},
           {"pred", r.pred}};
    os << j.dump() << '\n';
  }
  return os.str();
}

void save_ledger(const std::filesystem::path& path, const std::vector<LedgerRow>& ledger) {
  write_text_file(path, ledger_to_jsonl(ledger));
}

std::vector<LedgerRow> load_ledger(const std::filesystem::path& path) {
  std::istringstream is(read_text_file(path));
  std::vector<LedgerRow> ledger;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    LedgerRow r;
    r.edit = j.at("edit").get<int>();
    r.gap = j.at("gap").get<int>();
    auto kind = probe_kind_from(j.at("kind").get<std::string>());
    if (!kind) throw ConfigError("ledger row with unknown probe kind");
    r.kind = *kind;
    r.ok = j.at("ok").get<bool>();
    r.pred = j.at("pred").get<TokenList>();
    ledger.push_back(std::move(r));
  }
  return ledger;
}

void save_trace(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  for (const TraceRow& t : trace) {
    json j{{"edit", t.edit},       {"gap", t.gap},
           {"kind", to_string(t.kind)}, {"slot", std::string(1, t.slot)},
           {"index", t.index},     {"score", t.score},
           {"above_tau", t.above_tau}};
    if (t.truth_hit >= 0) j["hit"] = t.truth_hit == 1;
    os << j.dump() << '\n';
  }
  write_text_file(path, os.str());
}

void save_store_snapshot(const std::filesystem::path& text_path,
                         const std::filesystem::path& visual_path, const MemoryStore& store) {
  std::ostringstream ts;
  for (const TextMemoryEntry& e : store.text) {
    ts << json{{"question", e.question},
               {"answer", e.answer},
               {"embedding", e.q_embedding.data}}
              .dump()
       << '\n';
  }
  write_text_file(text_path, ts.str());
  std::ostringstream vs;
  for (const VisualMemoryEntry& e : store.visual) {
    vs << json{{"image", e.image},
               {"question", e.question},
               {"answer", e.answer},
               {"img_embedding", e.img_embedding.data},
               {"q_embedding", e.q_embedding.data}}
              .dump()
       << '\n';
  }
  write_text_file(visual_path, vs.str());
}

}  // namespace editlab
