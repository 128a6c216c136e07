#include "credence/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "credence/adam.hpp"
#include "credence/ops.hpp"

namespace credence {

EncoderConfig EncoderConfig::from_preset(const std::string& name) {
  EncoderConfig cfg;
  cfg.preset = name;
  if (name == "bert-like") {
    // defaults already match
  } else if (name == "distil-like") {
    cfg.num_layers = 6;
  } else if (name == "roberta-like") {
    cfg.vocab_size = 50265;
  } else if (name == "tiny") {
    cfg.num_layers = 2;
    cfg.hidden_size = 128;
    cfg.num_heads = 2;
    cfg.feedforward_size = 512;
    cfg.vocab_size = 8192;
    cfg.max_positions = 128;
  } else {
    throw std::invalid_argument("unknown encoder preset '" + name + "'");
  }
  return cfg;
}

void EncoderConfig::validate() const {
  if (num_layers < 1) {
    throw std::invalid_argument("encoder config: num_layers must be >= 1");
  }
  if (hidden_size % num_heads != 0) {
    throw std::invalid_argument(
        "encoder config: hidden_size " + std::to_string(hidden_size) +
        " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (feedforward_size < hidden_size) {
    throw std::invalid_argument(
        "encoder config: feedforward_size must be >= hidden_size");
  }
  if (vocab_size < 6 || max_positions < 2) {
    throw std::invalid_argument("encoder config: degenerate sizes");
  }
  if (dropout_p < 0.0f || dropout_p >= 1.0f) {
    throw std::invalid_argument("encoder config: dropout_p must be in [0,1)");
  }
}

namespace {

Tensor init_weight(Shape shape, Rng rng) {
  std::vector<float> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = rng.next_truncated_normal(0.02f);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

}  // namespace

EncoderModel::EncoderModel(EncoderConfig cfg, Rng init_rng)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::int64_t H = cfg_.hidden_size;
  const std::int64_t F = cfg_.feedforward_size;

  auto add = [&](const std::string& name, Tensor t) {
    params_.push_back({name, std::move(t)});
  };
  auto weight = [&](const std::string& name, Shape shape) {
    add(name, init_weight(std::move(shape), init_rng.child(name)));
  };
  auto zeros = [&](const std::string& name, Shape shape) {
    add(name, Tensor::zeros(std::move(shape), true));
  };
  auto norm = [&](const std::string& prefix) {
    add(prefix + ".gamma", Tensor::full({H}, 1.0f, true));
    add(prefix + ".beta", Tensor::zeros({H}, true));
  };

  weight("embeddings.token", {cfg_.vocab_size, H});
  weight("embeddings.position", {cfg_.max_positions, H});
  norm("embeddings.norm");

  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string base = "layers." + std::to_string(l);
    for (const char* proj : {"query", "key", "value", "output"}) {
      weight(base + ".attention." + proj + ".weight", {H, H});
      zeros(base + ".attention." + std::string(proj) + ".bias", {H});
    }
    norm(base + ".attention.norm");
    weight(base + ".ffn.in.weight", {H, F});
    zeros(base + ".ffn.in.bias", {F});
    weight(base + ".ffn.out.weight", {F, H});
    zeros(base + ".ffn.out.bias", {H});
    norm(base + ".ffn.norm");
  }
}

std::int64_t EncoderModel::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += p.tensor.size();
  return total;
}

Tensor EncoderModel::param(const std::string& name) const {
  const Tensor* t = find_param(params_, name);
  if (!t) {
    throw std::logic_error("encoder: missing parameter '" + name + "'");
  }
  return *t;
}

Tensor EncoderModel::forward(const Tensor& ids, const Tensor& mask,
                             bool training, Rng* dropout_rng,
                             std::vector<Tensor>* attention_out) {
  if (ids.rank() != 2 || mask.shape() != ids.shape()) {
    throw std::invalid_argument(
        "forward: ids and mask must share shape [B,T]; got ids " +
        shape_to_string(ids.shape()) + ", mask " +
        shape_to_string(mask.shape()));
  }
  const std::int64_t B = ids.dim(0);
  const std::int64_t T = ids.dim(1);
  const std::int64_t H = cfg_.hidden_size;
  const std::int64_t A = cfg_.num_heads;
  const std::int64_t Dh = H / A;
  if (T > cfg_.max_positions) {
    throw std::invalid_argument(
        "forward: sequence length " + std::to_string(T) +
        " exceeds max positions " + std::to_string(cfg_.max_positions));
  }
  for (float v : ids.data()) {
    const auto id = static_cast<std::int64_t>(v);
    if (id < 0 || id >= cfg_.vocab_size) {
      throw std::invalid_argument("forward: token id " + std::to_string(id) +
                                  " out of range [0," +
                                  std::to_string(cfg_.vocab_size) + ")");
    }
  }
  const bool use_dropout = training && cfg_.dropout_p > 0.0f;
  if (use_dropout && !dropout_rng) {
    throw std::invalid_argument("forward: training mode needs a dropout rng");
  }
  auto drop = [&](const Tensor& x) {
    return use_dropout ? dropout(x, cfg_.dropout_p, true, *dropout_rng) : x;
  };

  std::vector<float> pos_ids(static_cast<std::size_t>(B * T));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t t = 0; t < T; ++t) {
      pos_ids[b * T + t] = static_cast<float>(t);
    }
  }
  Tensor positions = Tensor::from_data({B, T}, std::move(pos_ids), false);

  Tensor x = add(gather_rows(param("embeddings.token"), ids),
                 gather_rows(param("embeddings.position"), positions));
  x = layer_norm(x, param("embeddings.norm.gamma"),
                 param("embeddings.norm.beta"), 1e-12f);
  x = drop(x);
  x = reshape(x, {B * T, H});

  const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(Dh));
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string base = "layers." + std::to_string(l);
    auto project = [&](const char* which) {
      Tensor p = add_bias(
          matmul(x, param(base + ".attention." + which + ".weight")),
          param(base + ".attention." + std::string(which) + ".bias"));
      // [B*T,H] -> [B,A,T,Dh] -> [B*A,T,Dh]
      return reshape(permute(reshape(p, {B, T, A, Dh}), {0, 2, 1, 3}),
                     {B * A, T, Dh});
    };
    Tensor q = project("query");
    Tensor k = project("key");
    Tensor v = project("value");

    Tensor scores = scale(bmm(q, permute(k, {0, 2, 1})), inv_sqrt_dh);
    scores = add_key_mask(scores, mask, A);
    Tensor probs = softmax(scores, -1);
    if (attention_out) attention_out->push_back(probs);
    Tensor ctx = bmm(drop(probs), v);  // [B*A,T,Dh]
    ctx = reshape(permute(reshape(ctx, {B, A, T, Dh}), {0, 2, 1, 3}),
                  {B * T, H});
    Tensor attn = add_bias(matmul(ctx, param(base + ".attention.output.weight")),
                           param(base + ".attention.output.bias"));
    x = layer_norm(add(x, drop(attn)), param(base + ".attention.norm.gamma"),
                   param(base + ".attention.norm.beta"), 1e-12f);

    Tensor h = gelu(add_bias(matmul(x, param(base + ".ffn.in.weight")),
                             param(base + ".ffn.in.bias")));
    h = add_bias(matmul(h, param(base + ".ffn.out.weight")),
                 param(base + ".ffn.out.bias"));
    x = layer_norm(add(x, drop(h)), param(base + ".ffn.norm.gamma"),
                   param(base + ".ffn.norm.beta"), 1e-12f);
  }
  return reshape(x, {B, T, H});
}

namespace {

std::vector<std::vector<float>> snapshot(const ParameterMap& params) {
  std::vector<std::vector<float>> copy;
  copy.reserve(params.size());
  for (const auto& p : params) copy.push_back(p.tensor.data());
  return copy;
}

void restore(ParameterMap& params, const std::vector<std::vector<float>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].tensor.mutable_data() = snap[i];
  }
}

struct EvalStats {
  double loss = 0;
  double acc = 0;
};

EvalStats evaluate_head(EncoderModel& model, const Tensor& head_w,
                        const Tensor& head_b,
                        const std::vector<TokenizedSequence>& seqs,
                        const std::vector<int>& labels, int batch_size) {
  NoGradGuard guard;
  EvalStats stats;
  if (seqs.empty()) return stats;
  std::int64_t correct = 0;
  double loss_sum = 0;
  for (std::size_t begin = 0; begin < seqs.size();
       begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(seqs.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<TokenizedSequence> chunk(seqs.begin() + begin,
                                         seqs.begin() + end);
    std::vector<int> chunk_labels(labels.begin() + begin, labels.begin() + end);
    auto [ids, mask] = pad_batch(chunk);
    Tensor pooled = mean_pool(model.forward(ids, mask, false), mask);
    Tensor logits = add_bias(matmul(pooled, head_w), head_b);
    loss_sum += static_cast<double>(cross_entropy(logits, chunk_labels).item()) *
                static_cast<double>(chunk.size());
    std::vector<int> pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == chunk_labels[i]) ++correct;
    }
  }
  stats.loss = loss_sum / static_cast<double>(seqs.size());
  stats.acc = static_cast<double>(correct) / static_cast<double>(seqs.size());
  return stats;
}

}  // namespace

FinetuneResult finetune(EncoderModel& model,
                        const std::vector<TokenizedSequence>& train,
                        const std::vector<int>& train_labels,
                        const std::vector<TokenizedSequence>& val,
                        const std::vector<int>& val_labels,
                        const FinetuneConfig& cfg) {
  if (train.empty()) {
    throw std::invalid_argument("finetune: empty train set");
  }
  if (train.size() != train_labels.size() || val.size() != val_labels.size()) {
    throw std::invalid_argument("finetune: labels do not match sequences");
  }
  if (cfg.batch_size < 1) {
    throw std::invalid_argument("finetune: batch_size must be >= 1");
  }

  FinetuneResult result;
  if (cfg.epochs == 0) return result;

  Rng root(cfg.seed);
  const std::int64_t H = model.config().hidden_size;
  Tensor head_w = init_weight({H, cfg.num_classes}, root.child("head.weight"));
  Tensor head_b = Tensor::zeros({cfg.num_classes}, true);

  ParameterMap trainable = model.parameters();
  trainable.push_back({"head.weight", head_w});
  trainable.push_back({"head.bias", head_b});

  AdamState opt;
  Rng dropout_rng = root.child("dropout");
  Rng shuffle_rng = root.child("shuffle");

  std::vector<std::vector<float>> best_weights;
  double best_val_acc = -1.0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    std::int64_t correct = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(
          order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TokenizedSequence> chunk;
      std::vector<int> chunk_labels;
      chunk.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        chunk.push_back(train[order[i]]);
        chunk_labels.push_back(train_labels[order[i]]);
      }
      auto [ids, mask] = pad_batch(chunk);
      Tensor pooled =
          mean_pool(model.forward(ids, mask, true, &dropout_rng), mask);
      Tensor logits = add_bias(matmul(pooled, head_w), head_b);
      Tensor loss = cross_entropy(logits, chunk_labels);
      zero_grads(trainable);
      backward(loss);
      adam_step(trainable, opt, cfg.lr);

      loss_sum += static_cast<double>(loss.item()) *
                  static_cast<double>(chunk.size());
      std::vector<int> pred = argmax_rows(logits);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == chunk_labels[i]) ++correct;
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train.size());
    stats.train_acc =
        static_cast<double>(correct) / static_cast<double>(train.size());
    EvalStats vs =
        evaluate_head(model, head_w, head_b, val, val_labels, cfg.batch_size);
    stats.val_loss = vs.loss;
    stats.val_acc = vs.acc;
    result.log.push_back(stats);

    if (stats.val_acc > best_val_acc) {
      best_val_acc = stats.val_acc;
      result.best_epoch = epoch;
      best_weights = snapshot(model.parameters());
    }
  }

  restore(model.parameters(), best_weights);
  result.best_val_acc = best_val_acc;
  return result;
}

std::vector<SentenceVector> encode_dataset(
    EncoderModel& model, const std::vector<TokenizedSequence>& seqs,
    const std::vector<std::string>& source_ids, int batch_size) {
  if (!source_ids.empty() && source_ids.size() != seqs.size()) {
    throw std::invalid_argument(
        "encode_dataset: source ids do not match sequences");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("encode_dataset: batch_size must be >= 1");
  }
  NoGradGuard guard;
  std::vector<SentenceVector> out;
  out.reserve(seqs.size());
  const std::int64_t H = model.config().hidden_size;
  for (std::size_t begin = 0; begin < seqs.size();
       begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(seqs.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<TokenizedSequence> chunk(seqs.begin() + begin,
                                         seqs.begin() + end);
    auto [ids, mask] = pad_batch(chunk);
    Tensor pooled = mean_pool(model.forward(ids, mask, false), mask);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      SentenceVector v;
      v.values.assign(pooled.data().begin() + static_cast<std::int64_t>(i) * H,
                      pooled.data().begin() +
                          static_cast<std::int64_t>(i + 1) * H);
      v.source_id =
          source_ids.empty() ? std::to_string(begin + i) : source_ids[begin + i];
      out.push_back(std::move(v));
    }
  }
  return out;
}

WeightArchive export_weights(const EncoderModel& model) {
  WeightArchive archive;
  archive.entries.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) {
    archive.entries.push_back({p.name, p.tensor.shape(), p.tensor.data()});
  }
  return archive;
}

void import_weights(EncoderModel& model, const WeightArchive& archive) {
  std::unordered_map<std::string, const ArchiveEntry*> by_name;
  for (const auto& e : archive.entries) {
    if (!by_name.emplace(e.name, &e).second) {
      throw std::invalid_argument("import_weights: duplicate entry '" + e.name +
                                  "'");
    }
  }
  ParameterMap& params = model.parameters();
  for (const auto& e : archive.entries) {
    if (!find_param(params, e.name)) {
      throw std::invalid_argument("import_weights: unknown parameter '" +
                                  e.name + "'");
    }
  }
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw std::invalid_argument("import_weights: archive missing parameter '" +
                                  p.name + "'");
    }
    const ArchiveEntry& e = *it->second;
    if (e.shape != p.tensor.shape()) {
      throw std::invalid_argument(
          "import_weights: shape mismatch for '" + p.name + "': archive " +
          shape_to_string(e.shape) + " vs model " +
          shape_to_string(p.tensor.shape()));
    }
    if (e.data.size() != p.tensor.data().size()) {
      throw std::invalid_argument("import_weights: truncated payload for '" +
                                  p.name + "'");
    }
  }
  for (auto& p : params) {
    p.tensor.mutable_data() = by_name.at(p.name)->data;
  }
}

}  // namespace credence
