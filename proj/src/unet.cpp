#include "sct/unet.hpp"

#include "sct/errors.hpp"

namespace sct {

namespace nn = torch::nn;

void UNetConfig::validate() const {
  if (in_channels != 1 && in_channels != 2) throw InvalidArgument("U-Net in_channels must be 1 or 2");
  if (out_channels != 1) throw InvalidArgument("U-Net must produce a single output channel");
  for (auto f : encoder_features)
    if (f < 1) throw InvalidArgument("U-Net feature counts must be positive");
  if (bottleneck_features < 1) throw InvalidArgument("U-Net feature counts must be positive");
}

bool UNetConfig::is_reference_ladder() const {
  return encoder_features == std::array<int64_t, 3>{32, 64, 128} && bottleneck_features == 256;
}

DoubleConvImpl::DoubleConvImpl(int64_t in, int64_t out) {
  conv1 = register_module("conv1", nn::Conv3d(nn::Conv3dOptions(in, out, 3).padding(1).bias(false)));
  norm1 = register_module("norm1", nn::BatchNorm3d(out));
  conv2 = register_module("conv2", nn::Conv3d(nn::Conv3dOptions(out, out, 3).padding(1).bias(false)));
  norm2 = register_module("norm2", nn::BatchNorm3d(out));
}

torch::Tensor DoubleConvImpl::forward(const torch::Tensor &x) {
  torch::Tensor y = torch::relu(norm1->forward(conv1->forward(x)));
  return torch::relu(norm2->forward(conv2->forward(y)));
}

UNet3dImpl::UNet3dImpl(UNetConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto [f1, f2, f3] = cfg_.encoder_features;
  const int64_t fb = cfg_.bottleneck_features;
  const auto up = [](int64_t in, int64_t out) {
    return nn::ConvTranspose3d(nn::ConvTranspose3dOptions(in, out, 2).stride(2));
  };
  enc1 = register_module("enc1", DoubleConv(cfg_.in_channels, f1));
  enc2 = register_module("enc2", DoubleConv(f1, f2));
  enc3 = register_module("enc3", DoubleConv(f2, f3));
  bottleneck = register_module("bottleneck", DoubleConv(f3, fb));
  up3 = register_module("up3", up(fb, f3));
  dec3 = register_module("dec3", DoubleConv(2 * f3, f3));
  up2 = register_module("up2", up(f3, f2));
  dec2 = register_module("dec2", DoubleConv(2 * f2, f2));
  up1 = register_module("up1", up(f2, f1));
  dec1 = register_module("dec1", DoubleConv(2 * f1, f1));
  head = register_module("head", nn::Conv3d(nn::Conv3dOptions(f1, cfg_.out_channels, 1)));
}

torch::Tensor UNet3dImpl::forward(const torch::Tensor &x) {
  if (x.dim() != 5) throw InvalidArgument("U-Net input must be (N, C, D, H, W)");
  if (x.size(1) != cfg_.in_channels)
    throw InvalidArgument("U-Net expects " + std::to_string(cfg_.in_channels) + " channels, got " +
                          std::to_string(x.size(1)));
  for (int i = 2; i < 5; ++i)
    if (x.size(i) % 8 != 0 || x.size(i) == 0)
      throw InvalidArgument("U-Net spatial dims must be divisible by 8, got " + std::to_string(x.size(i)));

  const torch::Tensor s1 = enc1->forward(x);
  const torch::Tensor s2 = enc2->forward(torch::max_pool3d(s1, 2));
  const torch::Tensor s3 = enc3->forward(torch::max_pool3d(s2, 2));
  torch::Tensor y = bottleneck->forward(torch::max_pool3d(s3, 2));
  y = dec3->forward(torch::cat({s3, up3->forward(y)}, 1));
  y = dec2->forward(torch::cat({s2, up2->forward(y)}, 1));
  y = dec1->forward(torch::cat({s1, up1->forward(y)}, 1));
  return head->forward(y);
}

int64_t parameter_count(const nn::Module &m) {
  int64_t total = 0;
  for (const auto &p : m.parameters()) total += p.numel();
  return total;
}

} // namespace sct
