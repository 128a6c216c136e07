#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "credence/data.hpp"
#include "credence/encoder.hpp"
#include "credence/heads.hpp"
#include "credence/tensor.hpp"

namespace credence {

struct TrainConfig {
  float lr = 2e-4f;
  int batch_size = 512;
  int max_epochs = 1000;
  int patience = 50;  // epochs without validation-loss improvement
  std::uint64_t seed = 42;
};

struct ConfusionMatrix {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  int positive_class = 1;
  std::int64_t total() const { return tp + tn + fp + fn; }
};

enum class Averaging { positive_class, macro };
const char* averaging_name(Averaging averaging);

struct Metrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  Averaging averaging = Averaging::macro;
};

ConfusionMatrix confusion(const std::vector<int>& preds,
                          const std::vector<int>& labels, int positive_class);

// A=(TP+TN)/total, P=TP/(TP+FP), R=TP/(TP+FN), F1=2PR/(P+R), with zero
// denominators mapped to 0.  Macro mode averages P/R/F1 over both classes
// (the negative class is scored by swapping the matrix).
Metrics metrics(const ConfusionMatrix& cm, Averaging averaging = Averaging::macro);

// One of the four benchmark heads over sentence vectors.
class ClassifierHead {
 public:
  // kind: 4l-mlp | 4l-mlp-reg-drop | resnet10 | resnet18
  ClassifierHead(const std::string& kind, int input_width, Rng init_rng);

  static const std::vector<std::string>& benchmark_variants();

  const std::string& kind() const { return kind_; }
  float weight_decay() const;
  float dropout_p() const;
  ParameterMap& parameters();
  Tensor forward(const Tensor& x, bool training, Rng* dropout_rng = nullptr);

 private:
  std::string kind_;
  std::unique_ptr<MlpHead> mlp_;
  std::unique_ptr<ResNetHead> resnet_;
};

struct TrainLogEntry {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  int best_epoch = 0;  // 1-based; 0 when nothing ran
  double best_val_loss = 0;
  double best_val_acc = 0;
  bool stopped_early = false;
  std::vector<std::string> warnings;
};

// Adam + cross-entropy mini-batches over precomputed vectors; early stop on
// stalled validation loss; the head keeps its best-validation weights.
TrainResult train_head(ClassifierHead& head,
                       const std::vector<SentenceVector>& train_vectors,
                       const std::vector<int>& train_labels,
                       const std::vector<SentenceVector>& val_vectors,
                       const std::vector<int>& val_labels,
                       const TrainConfig& cfg);

// Stacks vectors into a [B,H] tensor.
Tensor vectors_to_tensor(const std::vector<SentenceVector>& vectors);

std::vector<int> predict(ClassifierHead& head,
                         const std::vector<SentenceVector>& vectors,
                         int batch_size = 512);

struct BenchmarkCell {
  std::string preset;
  std::string head;
  Metrics mean_metrics;
  bool failed = false;
  std::string error;
};

struct BenchmarkGrid {
  std::string dataset;
  std::uint64_t split_seed = 0;
  Averaging averaging = Averaging::macro;
  std::vector<std::uint64_t> run_seeds;
  std::vector<BenchmarkCell> cells;  // preset-major, head-minor
};

struct BenchmarkOptions {
  FinetuneConfig finetune;
  TrainConfig train;
  int max_len = 128;
  int vocab_target = 2048;  // built from the train split
  int vocab_min_freq = 1;
  int encode_batch = 32;
  Averaging averaging = Averaging::macro;
};

// For each (preset, seed): finetune the encoder on the train/val split,
// encode all records once, then train and test every head on the shared
// vectors.  Cells average metrics over seeds; a failing stage marks its
// cells and the rest of the grid completes.
BenchmarkGrid run_benchmark(const Dataset& dataset,
                            const SplitAssignment& assignment,
                            const std::vector<std::string>& presets,
                            const std::vector<std::string>& heads,
                            const std::vector<std::uint64_t>& seeds,
                            const BenchmarkOptions& opts);

// format: csv | markdown.  Percentages with 3 decimals; markdown bolds each
// column's best value.
std::string render_report(const BenchmarkGrid& grid, const std::string& format);

// One header line, then one JSON object per cell.
void save_grid(const BenchmarkGrid& grid, const std::string& path);

}  // namespace credence
