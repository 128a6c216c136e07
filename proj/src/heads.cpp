#include "credence/heads.hpp"

#include <stdexcept>

#include "credence/ops.hpp"

namespace credence {

namespace {

Tensor init_weight(Shape shape, Rng rng) {
  std::vector<float> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = rng.next_truncated_normal(0.02f);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

// Layer norm across channels at every signal position: [B,C,L] normalized
// over C with per-channel gain/shift.
Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  Tensor t = permute(x, {0, 2, 1});  // [B,L,C]
  t = layer_norm(t, gamma, beta, 1e-5f);
  return permute(t, {0, 2, 1});
}

}  // namespace

MlpConfig MlpConfig::four_layer(int input_width) {
  MlpConfig cfg;
  cfg.layer_widths = {input_width, 512, 128, 32, 2};
  return cfg;
}

MlpConfig MlpConfig::four_layer_reg_drop(int input_width) {
  MlpConfig cfg = four_layer(input_width);
  cfg.dropout_p = 0.2f;
  cfg.weight_decay = 1e-4f;
  return cfg;
}

void MlpConfig::validate() const {
  if (layer_widths.size() < 2) {
    throw std::invalid_argument("mlp config: need at least input and output");
  }
  for (int w : layer_widths) {
    if (w < 1) throw std::invalid_argument("mlp config: widths must be >= 1");
  }
  if (dropout_p < 0.0f || dropout_p >= 1.0f) {
    throw std::invalid_argument("mlp config: dropout_p must be in [0,1)");
  }
}

ResNetConfig ResNetConfig::from_variant(const std::string& variant) {
  ResNetConfig cfg;
  cfg.variant = variant;
  if (variant == "resnet10") {
    cfg.blocks_per_stage = {2, 1, 1};
  } else if (variant == "resnet18") {
    cfg.blocks_per_stage = {3, 3, 2};
  } else {
    throw std::invalid_argument("unknown resnet variant '" + variant + "'");
  }
  return cfg;
}

void ResNetConfig::validate() const {
  if (stem_channels < 1 || kernel_size < 1 || num_classes < 2) {
    throw std::invalid_argument("resnet config: degenerate sizes");
  }
  if (blocks_per_stage.empty()) {
    throw std::invalid_argument("resnet config: need at least one stage");
  }
  for (int b : blocks_per_stage) {
    if (b < 1) {
      throw std::invalid_argument("resnet config: empty stage");
    }
  }
}

int count_layers(const MlpConfig& cfg) {
  return static_cast<int>(cfg.layer_widths.size()) - 1;
}

int count_layers(const ResNetConfig& cfg) {
  int blocks = 0;
  for (int b : cfg.blocks_per_stage) blocks += b;
  return 1 + 2 * blocks + 1;
}

MlpHead::MlpHead(MlpConfig cfg, Rng init_rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (std::size_t i = 0; i + 1 < cfg_.layer_widths.size(); ++i) {
    const std::string base = "layers." + std::to_string(i);
    params_.push_back(
        {base + ".weight",
         init_weight({cfg_.layer_widths[i], cfg_.layer_widths[i + 1]},
                     init_rng.child(base + ".weight"))});
    params_.push_back(
        {base + ".bias", Tensor::zeros({cfg_.layer_widths[i + 1]}, true)});
  }
}

Tensor MlpHead::forward(const Tensor& x, bool training, Rng* dropout_rng) {
  if (x.rank() != 2 || x.dim(1) != cfg_.layer_widths.front()) {
    throw std::invalid_argument(
        "mlp_forward: input " + shape_to_string(x.shape()) +
        " does not match configured width " +
        std::to_string(cfg_.layer_widths.front()));
  }
  const bool use_dropout = training && cfg_.dropout_p > 0.0f;
  if (use_dropout && !dropout_rng) {
    throw std::invalid_argument("mlp_forward: training mode needs a dropout rng");
  }
  const std::size_t n_layers = cfg_.layer_widths.size() - 1;
  Tensor h = x;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::string base = "layers." + std::to_string(i);
    h = add_bias(matmul(h, *find_param(params_, base + ".weight")),
                 *find_param(params_, base + ".bias"));
    if (i + 1 < n_layers) {
      h = gelu(h);
      if (use_dropout) h = dropout(h, cfg_.dropout_p, true, *dropout_rng);
    }
  }
  return h;
}

Tensor block_forward(const ResidualBlock& block, const Tensor& x) {
  Tensor branch = conv1d(x, block.conv1, block.stride, block.padding);
  branch = channel_norm(branch, block.norm1_gamma, block.norm1_beta);
  branch = gelu(branch);
  branch = conv1d(branch, block.conv2, 1, block.padding);
  branch = channel_norm(branch, block.norm2_gamma, block.norm2_beta);
  Tensor skip =
      block.has_proj ? conv1d(x, block.proj, block.stride, 0) : x;
  return add(skip, branch);
}

ResNetHead::ResNetHead(ResNetConfig cfg, Rng init_rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int K = cfg_.kernel_size;

  auto add_param = [&](const std::string& name, Tensor t) {
    params_.push_back({name, t});
    return t;
  };
  auto conv = [&](const std::string& name, int out_c, int in_c, int k) {
    return add_param(name, init_weight({out_c, in_c, k}, init_rng.child(name)));
  };
  auto norm_pair = [&](const std::string& prefix, int c, Tensor& gamma,
                       Tensor& beta) {
    gamma = add_param(prefix + ".gamma", Tensor::full({c}, 1.0f, true));
    beta = add_param(prefix + ".beta", Tensor::zeros({c}, true));
  };

  conv("stem.conv", cfg_.stem_channels, 1, K);
  Tensor stem_gamma, stem_beta;
  norm_pair("stem.norm", cfg_.stem_channels, stem_gamma, stem_beta);

  int in_c = cfg_.stem_channels;
  for (std::size_t s = 0; s < cfg_.blocks_per_stage.size(); ++s) {
    const int out_c = cfg_.stem_channels << s;
    std::vector<ResidualBlock> stage;
    for (int b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
      const std::string base =
          "stages." + std::to_string(s) + ".blocks." + std::to_string(b);
      ResidualBlock block;
      block.stride = (s > 0 && b == 0) ? 2 : 1;
      block.padding = (K - 1) / 2;
      block.conv1 = conv(base + ".conv1", out_c, in_c, K);
      norm_pair(base + ".norm1", out_c, block.norm1_gamma, block.norm1_beta);
      block.conv2 = conv(base + ".conv2", out_c, out_c, K);
      norm_pair(base + ".norm2", out_c, block.norm2_gamma, block.norm2_beta);
      if (block.stride != 1 || in_c != out_c) {
        block.proj = conv(base + ".proj", out_c, in_c, 1);
        block.has_proj = true;
      }
      stage.push_back(std::move(block));
      in_c = out_c;
    }
    stages_.push_back(std::move(stage));
  }

  const int final_c = in_c;
  params_.push_back({"fc.weight", init_weight({final_c, cfg_.num_classes},
                                              init_rng.child("fc.weight"))});
  params_.push_back({"fc.bias", Tensor::zeros({cfg_.num_classes}, true)});
}

Tensor ResNetHead::forward(const Tensor& x, bool training, Rng* dropout_rng) {
  (void)training;
  (void)dropout_rng;
  if (x.rank() != 2) {
    throw std::invalid_argument("resnet_forward: input must be [B,H], got " +
                                shape_to_string(x.shape()));
  }
  const std::int64_t B = x.dim(0);
  const std::int64_t H = x.dim(1);
  if (H < cfg_.kernel_size) {
    throw std::invalid_argument(
        "resnet_forward: signal length " + std::to_string(H) +
        " shorter than kernel size " + std::to_string(cfg_.kernel_size));
  }

  Tensor signal = reshape(x, {B, 1, H});
  Tensor h = conv1d(signal, *find_param(params_, "stem.conv"), 1,
                    (cfg_.kernel_size - 1) / 2);
  h = channel_norm(h, *find_param(params_, "stem.norm.gamma"),
                   *find_param(params_, "stem.norm.beta"));
  h = gelu(h);

  for (const auto& stage : stages_) {
    for (const auto& block : stage) {
      h = block_forward(block, h);
    }
  }

  Tensor pooled = global_avg_pool1d(h);  // [B,C]
  return add_bias(matmul(pooled, *find_param(params_, "fc.weight")),
                  *find_param(params_, "fc.bias"));
}

}  // namespace credence
