#include "credence/train_eval.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "credence/adam.hpp"
#include "credence/ops.hpp"

namespace credence {
namespace {

std::string require_format(const std::string& format) {
  if (format != "csv" && format != "markdown")
    throw std::invalid_argument("render_report: unknown format \"" + format +
                                "\" (expected csv or markdown)");
  return format;
}

// Percentage with three decimals, e.g. "88.908".
std::string percent3(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", fraction * 100.0);
  return buf;
}

std::vector<std::vector<float>> snapshot_params(const ParameterMap& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.data());
  return out;
}

void restore_params(ParameterMap& params,
                    const std::vector<std::vector<float>>& snapshot) {
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i].tensor.mutable_data() = snapshot[i];
}

Tensor stack_rows(const std::vector<SentenceVector>& vectors,
                  const std::vector<std::size_t>& indices) {
  const auto width = vectors[indices[0]].values.size();
  std::vector<float> flat;
  flat.reserve(indices.size() * width);
  for (std::size_t idx : indices) {
    const auto& row = vectors[idx].values;
    if (row.size() != width)
      throw std::invalid_argument(
          "sentence vectors: inconsistent widths (" + std::to_string(width) +
          " vs " + std::to_string(row.size()) + ")");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(indices.size()),
                            static_cast<std::int64_t>(width)},
                           std::move(flat));
}

struct EvalStats {
  double loss = 0;
  double accuracy = 0;
};

EvalStats evaluate(ClassifierHead& head,
                   const std::vector<SentenceVector>& vectors,
                   const std::vector<int>& labels, int batch_size) {
  NoGradGuard guard;
  const std::size_t n = vectors.size();
  double loss_sum = 0;
  std::int64_t correct = 0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    std::vector<std::size_t> indices(stop - start);
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = start + i;
    std::vector<int> batch_labels(labels.begin() + start, labels.begin() + stop);
    Tensor logits = head.forward(stack_rows(vectors, indices), false);
    loss_sum += static_cast<double>(cross_entropy(logits, batch_labels).item()) *
                static_cast<double>(indices.size());
    const auto preds = argmax_rows(logits);
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == batch_labels[i]) ++correct;
  }
  return {loss_sum / static_cast<double>(n),
          static_cast<double>(correct) / static_cast<double>(n)};
}

}  // namespace

const char* averaging_name(Averaging averaging) {
  return averaging == Averaging::macro ? "macro" : "positive-class";
}

ConfusionMatrix confusion(const std::vector<int>& preds,
                          const std::vector<int>& labels, int positive_class) {
  if (preds.size() != labels.size())
    throw std::invalid_argument("confusion: length mismatch (" +
                                std::to_string(preds.size()) + " preds vs " +
                                std::to_string(labels.size()) + " labels)");
  ConfusionMatrix cm;
  cm.positive_class = positive_class;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool pred_pos = preds[i] == positive_class;
    const bool label_pos = labels[i] == positive_class;
    if (pred_pos && label_pos)
      ++cm.tp;
    else if (!pred_pos && !label_pos)
      ++cm.tn;
    else if (pred_pos)
      ++cm.fp;
    else
      ++cm.fn;
  }
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm, Averaging averaging) {
  if (cm.tp < 0 || cm.tn < 0 || cm.fp < 0 || cm.fn < 0)
    throw std::invalid_argument("metrics: negative confusion count");
  const double tp = static_cast<double>(cm.tp);
  const double tn = static_cast<double>(cm.tn);
  const double fp = static_cast<double>(cm.fp);
  const double fn = static_cast<double>(cm.fn);
  const double total = tp + tn + fp + fn;
  if (total == 0)
    throw std::invalid_argument("metrics: empty confusion matrix");

  // P, R and F1 with zero denominators defined as 0.
  const auto prf = [](double tp_, double fp_, double fn_) {
    const double p = tp_ + fp_ > 0 ? tp_ / (tp_ + fp_) : 0.0;
    const double r = tp_ + fn_ > 0 ? tp_ / (tp_ + fn_) : 0.0;
    const double f1 = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    return std::array<double, 3>{p, r, f1};
  };

  Metrics m;
  m.averaging = averaging;
  m.accuracy = (tp + tn) / total;
  const auto positive = prf(tp, fp, fn);
  if (averaging == Averaging::positive_class) {
    m.precision = positive[0];
    m.recall = positive[1];
    m.f1 = positive[2];
  } else {
    // The other class's matrix is the swap TP<->TN, FP<->FN.
    const auto negative = prf(tn, fn, fp);
    m.precision = (positive[0] + negative[0]) / 2.0;
    m.recall = (positive[1] + negative[1]) / 2.0;
    m.f1 = (positive[2] + negative[2]) / 2.0;
  }
  return m;
}

ClassifierHead::ClassifierHead(const std::string& kind, int input_width,
                               Rng init_rng)
    : kind_(kind) {
  if (kind == "4l-mlp") {
    mlp_ = std::make_unique<MlpHead>(MlpConfig::four_layer(input_width),
                                     init_rng);
  } else if (kind == "4l-mlp-reg-drop") {
    mlp_ = std::make_unique<MlpHead>(MlpConfig::four_layer_reg_drop(input_width),
                                     init_rng);
  } else if (kind == "resnet10" || kind == "resnet18") {
    resnet_ = std::make_unique<ResNetHead>(ResNetConfig::from_variant(kind),
                                           init_rng);
  } else {
    throw std::invalid_argument("ClassifierHead: unknown head variant \"" +
                                kind + "\"");
  }
}

const std::vector<std::string>& ClassifierHead::benchmark_variants() {
  static const std::vector<std::string> variants = {
      "4l-mlp", "4l-mlp-reg-drop", "resnet10", "resnet18"};
  return variants;
}

float ClassifierHead::weight_decay() const {
  return mlp_ ? mlp_->config().weight_decay : 0.0f;
}

float ClassifierHead::dropout_p() const {
  return mlp_ ? mlp_->config().dropout_p : 0.0f;
}

ParameterMap& ClassifierHead::parameters() {
  return mlp_ ? mlp_->parameters() : resnet_->parameters();
}

Tensor ClassifierHead::forward(const Tensor& x, bool training,
                               Rng* dropout_rng) {
  return mlp_ ? mlp_->forward(x, training, dropout_rng)
              : resnet_->forward(x, training, dropout_rng);
}

Tensor vectors_to_tensor(const std::vector<SentenceVector>& vectors) {
  if (vectors.empty())
    throw std::invalid_argument("vectors_to_tensor: empty vector list");
  std::vector<std::size_t> all(vectors.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return stack_rows(vectors, all);
}

TrainResult train_head(ClassifierHead& head,
                       const std::vector<SentenceVector>& train_vectors,
                       const std::vector<int>& train_labels,
                       const std::vector<SentenceVector>& val_vectors,
                       const std::vector<int>& val_labels,
                       const TrainConfig& cfg) {
  if (!(cfg.lr > 0)) throw std::invalid_argument("train_head: lr must be > 0");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("train_head: batch_size must be >= 1");
  if (cfg.max_epochs < 0)
    throw std::invalid_argument("train_head: max_epochs must be >= 0");
  if (cfg.patience < 1)
    throw std::invalid_argument("train_head: patience must be >= 1");
  if (train_vectors.empty())
    throw std::invalid_argument("train_head: empty training set");
  if (val_vectors.empty())
    throw std::invalid_argument("train_head: empty validation set");
  if (train_vectors.size() != train_labels.size())
    throw std::invalid_argument(
        "train_head: training vectors/labels misaligned (" +
        std::to_string(train_vectors.size()) + " vs " +
        std::to_string(train_labels.size()) + ")");
  if (val_vectors.size() != val_labels.size())
    throw std::invalid_argument(
        "train_head: validation vectors/labels misaligned (" +
        std::to_string(val_vectors.size()) + " vs " +
        std::to_string(val_labels.size()) + ")");
  for (int label : train_labels)
    if (label < 0)
      throw std::invalid_argument("train_head: negative class label");

  TrainResult result;
  const bool single_class =
      std::all_of(train_labels.begin(), train_labels.end(),
                  [&](int l) { return l == train_labels.front(); });
  if (single_class)
    result.warnings.push_back(
        "train_head: training set contains a single class (" +
        std::to_string(train_labels.front()) + ")");
  if (cfg.max_epochs == 0) return result;

  Rng root(cfg.seed);
  Rng shuffle_rng = root.child("shuffle");
  Rng dropout_rng = root.child("dropout");

  ParameterMap& params = head.parameters();
  AdamState adam;
  auto best_weights = snapshot_params(params);
  double best_val_loss = std::numeric_limits<double>::infinity();
  int stall = 0;

  const std::size_t n = train_vectors.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t start = 0; start < n;
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> indices(order.begin() + start,
                                       order.begin() + stop);
      std::vector<int> batch_labels(indices.size());
      for (std::size_t i = 0; i < indices.size(); ++i)
        batch_labels[i] = train_labels[indices[i]];

      Tensor x = stack_rows(train_vectors, indices);
      Tensor logits = head.forward(x, true, &dropout_rng);
      Tensor loss = cross_entropy(logits, batch_labels);
      loss_sum += static_cast<double>(loss.item()) *
                  static_cast<double>(indices.size());
      zero_grads(params);
      backward(loss);
      adam_step(params, adam, cfg.lr, head.weight_decay());
    }

    const EvalStats val =
        evaluate(head, val_vectors, val_labels, cfg.batch_size);
    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(n);
    entry.val_loss = val.loss;
    entry.val_acc = val.accuracy;
    result.log.push_back(entry);

    if (val.loss < best_val_loss) {
      best_val_loss = val.loss;
      best_weights = snapshot_params(params);
      result.best_epoch = epoch;
      result.best_val_acc = val.accuracy;
      stall = 0;
    } else if (++stall >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }

  restore_params(params, best_weights);
  result.best_val_loss = best_val_loss;
  return result;
}

std::vector<int> predict(ClassifierHead& head,
                         const std::vector<SentenceVector>& vectors,
                         int batch_size) {
  if (batch_size < 1)
    throw std::invalid_argument("predict: batch_size must be >= 1");
  NoGradGuard guard;
  std::vector<int> preds;
  preds.reserve(vectors.size());
  for (std::size_t start = 0; start < vectors.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(vectors.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> indices(stop - start);
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = start + i;
    const auto batch = argmax_rows(head.forward(stack_rows(vectors, indices),
                                                false));
    preds.insert(preds.end(), batch.begin(), batch.end());
  }
  return preds;
}

namespace {

struct PartitionedData {
  std::vector<TokenizedSequence> seqs[3];
  std::vector<std::string> ids[3];
  std::vector<int> labels[3];
  std::vector<std::string> texts[3];
};

PartitionedData partition(const Dataset& dataset,
                          const SplitAssignment& assignment) {
  PartitionedData parts;
  for (const Record& rec : dataset.records) {
    const int part = static_cast<int>(assignment.part_of(rec.id));
    parts.ids[part].push_back(rec.id);
    parts.labels[part].push_back(rec.label_index);
    parts.texts[part].push_back(rec.text);
  }
  return parts;
}

struct CellAccumulator {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  int runs = 0;
  bool failed = false;
  std::string error;

  void add(const Metrics& m) {
    accuracy += m.accuracy;
    precision += m.precision;
    recall += m.recall;
    f1 += m.f1;
    ++runs;
  }
  void fail(const std::string& message) {
    failed = true;
    if (!error.empty()) error += "; ";
    error += message;
  }
};

}  // namespace

BenchmarkGrid run_benchmark(const Dataset& dataset,
                            const SplitAssignment& assignment,
                            const std::vector<std::string>& presets,
                            const std::vector<std::string>& heads,
                            const std::vector<std::uint64_t>& seeds,
                            const BenchmarkOptions& opts) {
  if (presets.empty())
    throw std::invalid_argument("run_benchmark: no presets requested");
  if (heads.empty())
    throw std::invalid_argument("run_benchmark: no heads requested");
  if (seeds.empty())
    throw std::invalid_argument("run_benchmark: no seeds requested");
  if (dataset.records.empty())
    throw std::invalid_argument("run_benchmark: empty dataset");

  PartitionedData parts = partition(dataset, assignment);
  for (int p = 0; p < 3; ++p)
    if (parts.ids[p].empty())
      throw std::invalid_argument(std::string("run_benchmark: empty ") +
                                  split_part_name(static_cast<SplitPart>(p)) +
                                  " part");

  BenchmarkGrid grid;
  grid.dataset = dataset.manifest.name;
  grid.split_seed = assignment.seed;
  grid.averaging = opts.averaging;
  grid.run_seeds = seeds;

  std::vector<CellAccumulator> acc(presets.size() * heads.size());

  constexpr int kTrain = static_cast<int>(SplitPart::train);
  constexpr int kVal = static_cast<int>(SplitPart::val);
  constexpr int kTest = static_cast<int>(SplitPart::test);

  // The vocabulary (train split only, so the test text never shapes it) and
  // the tokenized parts are shared by every cell.
  std::vector<TokenizedSequence> seqs[3];
  int vocab_size = 0;
  try {
    Vocabulary vocab = build_vocab(parts.texts[kTrain], opts.vocab_target,
                                   opts.vocab_min_freq);
    vocab_size = static_cast<int>(vocab.size());
    for (int p = 0; p < 3; ++p) {
      seqs[p].reserve(parts.texts[p].size());
      for (const auto& text : parts.texts[p])
        seqs[p].push_back(encode(text, vocab, opts.max_len));
    }
  } catch (const std::exception& e) {
    for (auto& cell : acc) cell.fail(std::string("tokenization: ") + e.what());
  }

  for (std::size_t pi = 0; pi < presets.size() && vocab_size > 0; ++pi) {
    for (std::uint64_t seed : seeds) {
      std::vector<SentenceVector> vectors[3];
      int hidden_size = 0;
      try {
        EncoderConfig cfg = EncoderConfig::from_preset(presets[pi]);
        cfg.vocab_size = vocab_size;
        hidden_size = cfg.hidden_size;

        Rng run_rng(seed);
        EncoderModel model(cfg, run_rng.child("encoder.init"));
        FinetuneConfig fcfg = opts.finetune;
        fcfg.seed = seed;
        finetune(model, seqs[kTrain], parts.labels[kTrain], seqs[kVal],
                 parts.labels[kVal], fcfg);
        for (int p = 0; p < 3; ++p)
          vectors[p] = encode_dataset(model, seqs[p], parts.ids[p],
                                      opts.encode_batch);
      } catch (const std::exception& e) {
        for (std::size_t hi = 0; hi < heads.size(); ++hi)
          acc[pi * heads.size() + hi].fail("preset " + presets[pi] + ", seed " +
                                           std::to_string(seed) + ": " +
                                           e.what());
        continue;
      }

      for (std::size_t hi = 0; hi < heads.size(); ++hi) {
        CellAccumulator& cell = acc[pi * heads.size() + hi];
        try {
          Rng run_rng(seed);
          ClassifierHead head(heads[hi], hidden_size,
                              run_rng.child("head.init." + heads[hi]));
          TrainConfig tcfg = opts.train;
          tcfg.seed = run_rng.child("head.train." + heads[hi]).next_u64();
          train_head(head, vectors[kTrain], parts.labels[kTrain],
                     vectors[kVal], parts.labels[kVal], tcfg);
          const auto preds = predict(head, vectors[kTest], tcfg.batch_size);
          cell.add(metrics(confusion(preds, parts.labels[kTest], 1),
                           opts.averaging));
        } catch (const std::exception& e) {
          cell.fail("head " + heads[hi] + ", seed " + std::to_string(seed) +
                    ": " + e.what());
        }
      }
    }
  }

  for (std::size_t pi = 0; pi < presets.size(); ++pi) {
    for (std::size_t hi = 0; hi < heads.size(); ++hi) {
      const CellAccumulator& a = acc[pi * heads.size() + hi];
      BenchmarkCell cell;
      cell.preset = presets[pi];
      cell.head = heads[hi];
      cell.failed = a.failed;
      cell.error = a.error;
      cell.mean_metrics.averaging = opts.averaging;
      if (a.runs > 0) {
        cell.mean_metrics.accuracy = a.accuracy / a.runs;
        cell.mean_metrics.precision = a.precision / a.runs;
        cell.mean_metrics.recall = a.recall / a.runs;
        cell.mean_metrics.f1 = a.f1 / a.runs;
      }
      grid.cells.push_back(std::move(cell));
    }
  }
  return grid;
}

std::string render_report(const BenchmarkGrid& grid, const std::string& format) {
  const bool markdown = require_format(format) == "markdown";

  // Formatted metric columns; failed cells render as "failed" and never win
  // a column.
  std::vector<std::array<std::string, 4>> cells(grid.cells.size());
  std::array<double, 4> best{-1, -1, -1, -1};
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    const BenchmarkCell& c = grid.cells[i];
    if (c.failed) {
      cells[i] = {"failed", "failed", "failed", "failed"};
      continue;
    }
    const std::array<double, 4> values{c.mean_metrics.accuracy,
                                       c.mean_metrics.precision,
                                       c.mean_metrics.recall,
                                       c.mean_metrics.f1};
    for (int k = 0; k < 4; ++k) {
      cells[i][k] = percent3(values[k]);
      best[k] = std::max(best[k], values[k]);
    }
  }
  const std::array<std::string, 4> best_text{
      percent3(best[0]), percent3(best[1]), percent3(best[2]),
      percent3(best[3])};

  std::ostringstream out;
  if (markdown) {
    out << "Dataset: " << grid.dataset << " (split seed " << grid.split_seed
        << ", " << averaging_name(grid.averaging) << " averaging, "
        << grid.run_seeds.size() << " run seed(s))\n\n";
    out << "| Preset | Head | Accuracy | Precision | Recall | F1 |\n";
    out << "|---|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
      const BenchmarkCell& c = grid.cells[i];
      out << "| " << c.preset << " | " << c.head;
      for (int k = 0; k < 4; ++k) {
        const bool bold = !c.failed && cells[i][k] == best_text[k];
        out << " | " << (bold ? "**" + cells[i][k] + "**" : cells[i][k]);
      }
      out << " |\n";
    }
    for (const BenchmarkCell& c : grid.cells)
      if (c.failed)
        out << "\n- failed: " << c.preset << "/" << c.head << ": " << c.error;
  } else {
    out << "# dataset: " << grid.dataset << "; split_seed: " << grid.split_seed
        << "; averaging: " << averaging_name(grid.averaging)
        << "; run_seeds: " << grid.run_seeds.size() << "\n";
    out << "preset,head,accuracy,precision,recall,f1\n";
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
      const BenchmarkCell& c = grid.cells[i];
      out << c.preset << "," << c.head;
      for (int k = 0; k < 4; ++k) out << "," << cells[i][k];
      out << "\n";
    }
    for (const BenchmarkCell& c : grid.cells)
      if (c.failed)
        out << "# failed: " << c.preset << "/" << c.head << ": " << c.error
            << "\n";
  }
  return out.str();
}

void save_grid(const BenchmarkGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_grid: cannot open " + path);

  nlohmann::ordered_json header;
  header["dataset"] = grid.dataset;
  header["split_seed"] = grid.split_seed;
  header["averaging"] = averaging_name(grid.averaging);
  header["run_seeds"] = grid.run_seeds;
  out << header.dump() << "\n";

  for (const BenchmarkCell& c : grid.cells) {
    nlohmann::ordered_json row;
    row["preset"] = c.preset;
    row["head"] = c.head;
    row["accuracy"] = c.mean_metrics.accuracy;
    row["precision"] = c.mean_metrics.precision;
    row["recall"] = c.mean_metrics.recall;
    row["f1"] = c.mean_metrics.f1;
    row["failed"] = c.failed;
    row["error"] = c.error;
    out << row.dump() << "\n";
  }
  if (!out) throw std::runtime_error("save_grid: write failed for " + path);
}

}  // namespace credence
