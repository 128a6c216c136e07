#pragma once

#include <string>
#include <vector>

#include "credence/rng.hpp"
#include "credence/tensor.hpp"

namespace credence {

struct MlpConfig {
  std::vector<int> layer_widths;  // first = input width, last = classes
  float dropout_p = 0.0f;
  float weight_decay = 0.0f;

  // The two MLP variants: same wiring, the second adds dropout 0.2 and
  // weight decay 1e-4.
  static MlpConfig four_layer(int input_width);
  static MlpConfig four_layer_reg_drop(int input_width);
  void validate() const;
};

struct ResNetConfig {
  std::string variant = "resnet10";
  int stem_channels = 16;
  std::vector<int> blocks_per_stage = {2, 1, 1};  // channels double per stage
  int kernel_size = 3;
  int num_classes = 2;

  static ResNetConfig from_variant(const std::string& variant);
  void validate() const;
};

// Weight-bearing layers: affine layers for the MLP; stem conv + two convs
// per residual block + final linear for the ResNet (1x1 skip projections
// are plumbing, not counted).
int count_layers(const MlpConfig& cfg);
int count_layers(const ResNetConfig& cfg);

class MlpHead {
 public:
  MlpHead(MlpConfig cfg, Rng init_rng);

  const MlpConfig& config() const { return cfg_; }
  ParameterMap& parameters() { return params_; }
  const ParameterMap& parameters() const { return params_; }

  // x[B,W0] -> logits [B,classes]; GELU between affine layers, dropout after
  // each hidden activation in training mode.
  Tensor forward(const Tensor& x, bool training, Rng* dropout_rng = nullptr);

 private:
  MlpConfig cfg_;
  ParameterMap params_;
};

// One pre-pool residual unit: conv-norm-GELU-conv-norm plus an identity (or
// 1x1-projected, when shape changes) skip; no activation after the add, so a
// zeroed branch is exactly the skip path.
struct ResidualBlock {
  Tensor conv1, conv2;  // [Cout,Cin,K], [Cout,Cout,K]; convs carry no bias
  Tensor norm1_gamma, norm1_beta;
  Tensor norm2_gamma, norm2_beta;
  Tensor proj;  // [Cout,Cin,1]; unset when the skip is the identity
  bool has_proj = false;
  int stride = 1;
  int padding = 1;
};

Tensor block_forward(const ResidualBlock& block, const Tensor& x);

class ResNetHead {
 public:
  ResNetHead(ResNetConfig cfg, Rng init_rng);

  const ResNetConfig& config() const { return cfg_; }
  ParameterMap& parameters() { return params_; }
  const ParameterMap& parameters() const { return params_; }
  const std::vector<std::vector<ResidualBlock>>& stages() const {
    return stages_;
  }

  // x[B,H] treated as a 1-channel signal of length H: stem conv, residual
  // stages, global average pool, linear logits.
  Tensor forward(const Tensor& x, bool training, Rng* dropout_rng = nullptr);

 private:
  ResNetConfig cfg_;
  ParameterMap params_;
  std::vector<std::vector<ResidualBlock>> stages_;
};

}  // namespace credence
