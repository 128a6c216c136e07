#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "credence/rng.hpp"
#include "credence/tensor.hpp"
#include "credence/tokenizer.hpp"

namespace credence {

struct EncoderConfig {
  int num_layers = 12;
  int hidden_size = 768;
  int num_heads = 12;
  int feedforward_size = 3072;
  int vocab_size = 30522;
  int max_positions = 512;
  float dropout_p = 0.1f;
  std::string preset = "bert-like";

  static EncoderConfig from_preset(const std::string& name);
  void validate() const;
};

// Post-norm transformer encoder: token + position embeddings, then per layer
// masked multi-head self-attention and a GELU feedforward block, each with a
// residual connection and layer norm.  All parameters live in a registry of
// dotted names for checkpointing.
class EncoderModel {
 public:
  EncoderModel(EncoderConfig cfg, Rng init_rng);

  const EncoderConfig& config() const { return cfg_; }
  ParameterMap& parameters() { return params_; }
  const ParameterMap& parameters() const { return params_; }
  std::int64_t parameter_count() const;

  // ids/mask are [B,T]. Returns hidden states [B,T,H]. When attention_out is
  // non-null it receives each layer's post-softmax attention [B*A,T,T].
  Tensor forward(const Tensor& ids, const Tensor& mask, bool training,
                 Rng* dropout_rng = nullptr,
                 std::vector<Tensor>* attention_out = nullptr);

 private:
  Tensor param(const std::string& name) const;

  EncoderConfig cfg_;
  ParameterMap params_;
};

struct SentenceVector {
  std::vector<float> values;
  std::string source_id;
};

struct FinetuneConfig {
  float lr = 5e-5f;
  int batch_size = 8;
  int epochs = 10;
  int num_classes = 2;
  std::uint64_t seed = 42;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
};

struct FinetuneResult {
  std::vector<EpochStats> log;
  int best_epoch = 0;  // 1-based; 0 when no epochs ran
  double best_val_acc = 0;
};

// Trains the encoder end-to-end under a temporary linear head over the
// mean-pooled output (Adam, cross-entropy), keeps the weights from the epoch
// with the best validation accuracy, and discards the head.
FinetuneResult finetune(EncoderModel& model,
                        const std::vector<TokenizedSequence>& train,
                        const std::vector<int>& train_labels,
                        const std::vector<TokenizedSequence>& val,
                        const std::vector<int>& val_labels,
                        const FinetuneConfig& cfg);

// Mean-pooled vector per sequence, eval mode, order preserving.
std::vector<SentenceVector> encode_dataset(
    EncoderModel& model, const std::vector<TokenizedSequence>& seqs,
    const std::vector<std::string>& source_ids, int batch_size = 32);

// In-memory weight archive; the checkpoint file format wraps this.
struct ArchiveEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};
struct WeightArchive {
  std::vector<ArchiveEntry> entries;
};

WeightArchive export_weights(const EncoderModel& model);
// Validates every name and shape before touching the model, so a failed
// import leaves it untouched.
void import_weights(EncoderModel& model, const WeightArchive& archive);

}  // namespace credence
