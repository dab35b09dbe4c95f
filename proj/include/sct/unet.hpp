#pragma once

#include <array>

#include <torch/torch.h>

namespace sct {

struct UNetConfig {
  std::array<int64_t, 3> encoder_features{32, 64, 128};
  int64_t bottleneck_features = 256;
  int64_t in_channels = 2;
  int64_t out_channels = 1;

  void validate() const;
  /// True for the {32, 64, 128, 256} ladder.
  bool is_reference_ladder() const;
};

/// conv3 -> BN -> ReLU -> conv3 -> BN -> ReLU; padding 1, no conv bias.
class DoubleConvImpl : public torch::nn::Module {
public:
  DoubleConvImpl(int64_t in, int64_t out);
  torch::Tensor forward(const torch::Tensor &x);

  torch::nn::Conv3d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm3d norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(DoubleConv);

/// Three-level 3D U-Net: max-pool encoder, transposed-conv decoder,
/// concatenating skip connections and a 1x1x1 logit head.
class UNet3dImpl : public torch::nn::Module {
public:
  explicit UNet3dImpl(UNetConfig cfg = {});

  /// (N, in_channels, D, H, W) -> (N, 1, D, H, W). Spatial dims must be
  /// divisible by 8; anything else is rejected rather than padded.
  torch::Tensor forward(const torch::Tensor &x);

  const UNetConfig &config() const { return cfg_; }
  static constexpr int kSkipConnections = 3;

  DoubleConv enc1{nullptr}, enc2{nullptr}, enc3{nullptr}, bottleneck{nullptr};
  torch::nn::ConvTranspose3d up3{nullptr}, up2{nullptr}, up1{nullptr};
  DoubleConv dec3{nullptr}, dec2{nullptr}, dec1{nullptr};
  torch::nn::Conv3d head{nullptr};

private:
  UNetConfig cfg_;
};
TORCH_MODULE(UNet3d);

int64_t parameter_count(const torch::nn::Module &m);

} // namespace sct
