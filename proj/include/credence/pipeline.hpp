#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "credence/data.hpp"
#include "credence/encoder.hpp"
#include "credence/train_eval.hpp"

namespace credence {

// Incremental FNV-1a over arbitrary bytes; the content hash behind
// checkpoint fingerprints and cache keys.
struct Fnv1a64 {
  std::uint64_t state = 1469598103934665603ull;
  void update(const void* data, std::size_t size);
  std::uint64_t digest() const { return state; }
};

// ---------------------------------------------------------------------------
// Checkpoint file: named-tensor archive with a text manifest.
//
//   magic line          "credence-checkpoint 1\n"
//   header length       8-byte little-endian integer
//   header              JSON: kind, config snapshot, params
//                       [{name, shape, count, offset}...] with byte offsets
//                       contiguous from 0 in payload order
//   payload             little-endian float32, concatenated in header order
//   fingerprint         8-byte little-endian FNV-1a over header + payload
// ---------------------------------------------------------------------------

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::int64_t count = 0;
  std::int64_t offset = 0;  // bytes from payload start
};

struct CheckpointSummary {
  std::string kind;  // "encoder" or "head"
  std::vector<CheckpointEntry> entries;
  std::int64_t total_params = 0;
  std::uint64_t fingerprint = 0;
  std::string config_json;
};

void save_encoder_checkpoint(const EncoderModel& model, std::uint64_t seed,
                             const std::string& path);
// Rebuilds the model from the stored config, then imports every weight.
EncoderModel load_encoder_checkpoint(const std::string& path);

void save_head_checkpoint(ClassifierHead& head, int input_width,
                          const std::string& path);
ClassifierHead load_head_checkpoint(const std::string& path);

// Validates magic, header structure, offset contiguity, payload length and
// fingerprint without loading any model. Distinct errors per defect.
CheckpointSummary verify_checkpoint(const std::string& path);

// The stored content hash, used as the cache key.
std::uint64_t checkpoint_fingerprint(const std::string& path);

// ---------------------------------------------------------------------------
// Vector cache: one row per record, keyed to the producing checkpoint.
// Same envelope as checkpoints (magic "credence-vectors 1").
// ---------------------------------------------------------------------------

struct VectorCacheFile {
  std::string dataset;
  std::uint64_t encoder_fingerprint = 0;
  std::int64_t hidden = 0;
  std::vector<std::string> ids;
  std::vector<float> values;  // ids.size() x hidden, row-major
};

void save_vector_cache(const VectorCacheFile& cache, const std::string& path);
VectorCacheFile load_vector_cache(const std::string& path);

// ---------------------------------------------------------------------------
// Pipeline configuration: flat "key = value" text, '#' comments, later keys
// win. Command lines apply the same syntax as overrides.
// ---------------------------------------------------------------------------

struct PipelineConfig {
  std::string dataset_path;
  std::string dataset_adapter = "canonical-jsonl";
  LabelScheme scheme = LabelScheme::rumour();
  std::string dataset_name;
  std::string text_column = "text";
  std::string label_column = "label";

  std::string preset = "tiny";
  std::string head = "4l-mlp";
  FinetuneConfig finetune;
  TrainConfig train;
  std::uint64_t seed = 0;
  bool seed_set = false;  // the seed key is mandatory
  std::string out_dir = "run";
  Averaging averaging = Averaging::macro;

  int max_len = 128;
  int vocab_target = 2048;
  int vocab_min_freq = 2;

  std::vector<std::string> benchmark_presets;  // default: preset
  std::vector<std::string> benchmark_heads;    // default: the four variants
  std::vector<std::uint64_t> benchmark_seeds;  // default: seed

  void validate() const;
};

PipelineConfig parse_pipeline_config(const std::string& path);
// One "key = value" assignment; unknown keys and malformed values throw.
void apply_config_entry(PipelineConfig& cfg, const std::string& entry);

// ---------------------------------------------------------------------------
// Staged pipeline: ingest -> split -> finetune -> encode -> train-head ->
// eval -> report. Failures carry the stage name; artifacts written before
// the failure stay on disk.
// ---------------------------------------------------------------------------

enum class Stage {
  ingest = 0,
  split = 1,
  finetune = 2,
  encode = 3,
  train_head = 4,
  eval = 5,
  report = 6,
};
const char* stage_name(Stage stage);

struct StageError : std::runtime_error {
  StageError(Stage stage, const std::string& message)
      : std::runtime_error(std::string(stage_name(stage)) + ": " + message),
        stage(stage) {}
  Stage stage;
};

struct PipelineResult {
  Stage last_stage = Stage::ingest;
  DatasetManifest manifest;
  std::array<std::int64_t, 3> split_sizes = {0, 0, 0};

  // Artifact paths (empty when the stage did not run).
  std::string canonical_path, split_path, vocab_path;
  std::string init_checkpoint, finetuned_checkpoint;
  std::string cache_path, head_checkpoint;
  std::string csv_report, md_report, grid_path;

  bool finetune_reused = false;  // valid checkpoints found, stage skipped
  bool encode_reused = false;    // cache fingerprint matched, stage skipped
  bool head_loaded = false;      // train-head satisfied from head checkpoint

  FinetuneResult finetune_result;
  TrainResult head_result;
  Metrics test_metrics;
};

// Runs stages up to and including `through`. `persist_head` additionally
// writes the trained head as a checkpoint (the train-head command's mode).
PipelineResult run_pipeline(const PipelineConfig& cfg,
                            Stage through = Stage::report,
                            bool persist_head = false);

// The benchmark command: ingest + split, then the grid over the config's
// preset/head/seed lists; writes csv + markdown reports and the jsonl grid.
struct BenchmarkArtifacts {
  BenchmarkGrid grid;
  std::string csv_report, md_report, grid_path;
};
BenchmarkArtifacts run_benchmark_command(const PipelineConfig& cfg);

BenchmarkGrid load_grid(const std::string& path);

}  // namespace credence
