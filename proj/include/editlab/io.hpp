#pragma once

#include <filesystem>
#include <string>

#include "editlab/editor.hpp"
#include "editlab/memory.hpp"
#include "editlab/world.hpp"

namespace editlab {

// All artifacts are schema-versioned JSON / JSONL and round-trip exactly
// (doubles serialize shortest-round-trip).

inline constexpr int kSchemaVersion = 1;

std::string read_text_file(const std::filesystem::path& path);  // DependencyError if missing
void write_text_file(const std::filesystem::path& path, const std::string& content);
uint64_t file_hash(const std::filesystem::path& path);  // FNV-1a over bytes

void save_world(const std::filesystem::path& path, const KnowledgeBase& kb);
KnowledgeBase load_world(const std::filesystem::path& path);

void save_stream(const std::filesystem::path& path, const EditStream& stream);
EditStream load_stream(const std::filesystem::path& path, const KnowledgeBase& kb);

void save_training_pairs(const std::filesystem::path& path,
                         const std::vector<TrainingPair>& pairs);
std::vector<TrainingPair> load_training_pairs(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const TransformerWeights& weights);
TransformerWeights load_model(const std::filesystem::path& path);

void save_encoders(const std::filesystem::path& path, const Encoders& encoders);
Encoders load_encoders(const std::filesystem::path& path);

// Adapter checkpoint with modality labels; the connector is a distinct
// section. Works for full banks and for connector-only artifacts.
void save_adapter_bank(const std::filesystem::path& path, const AdapterBank& bank);
AdapterBank load_adapter_bank(const std::filesystem::path& path);

std::string ledger_to_jsonl(const std::vector<LedgerRow>& ledger);
void save_ledger(const std::filesystem::path& path, const std::vector<LedgerRow>& ledger);
std::vector<LedgerRow> load_ledger(const std::filesystem::path& path);

void save_trace(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

void save_store_snapshot(const std::filesystem::path& text_path,
                         const std::filesystem::path& visual_path, const MemoryStore& store);

}  // namespace editlab
