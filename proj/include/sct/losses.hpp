#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>

#include <torch/torch.h>

namespace sct {

struct LossWeights {
  double alpha1 = 0.2;      // MAE
  double alpha2 = 0.1;      // 1 - SSIM
  double alpha3 = 0.7;      // perceptual
  double reg_weight = 1e-3; // registration MSE (MM+STN only)

  void validate() const;
};

struct SSIMConfig {
  int64_t window = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const;
};

/// Mean |a - b|. The subgradient at 0 is 0.
torch::Tensor mae(const torch::Tensor &y_hat, const torch::Tensor &y);
torch::Tensor mse(const torch::Tensor &a, const torch::Tensor &b);

/// Volumetric SSIM averaged over every fully contained Gaussian window.
/// Accepts (D, H, W) or (N, 1, D, H, W).
torch::Tensor ssim(const torch::Tensor &y_hat, const torch::Tensor &y, const SSIMConfig &cfg = {});

/// weight * MSE(v_ct, y)
torch::Tensor registration_loss(const torch::Tensor &v_ct, const torch::Tensor &y, double weight = 1e-3);

/// 2D feature extractor for the perceptual term. Input is a stack of
/// 3-channel slices (B, 3, H, W) already standardized with mean()/stddev().
class FeatureExtractor {
public:
  virtual ~FeatureExtractor() = default;
  virtual torch::Tensor forward(const torch::Tensor &images) = 0;
  virtual std::array<double, 3> mean() const { return {0.0, 0.0, 0.0}; }
  virtual std::array<double, 3> stddev() const { return {1.0, 1.0, 1.0}; }
  virtual void to(torch::Dtype dtype) = 0;
  virtual std::string name() const = 0;
};

/// Features are the standardized slices themselves; reduces the perceptual
/// term to a slice-wise MAE.
class IdentityExtractor : public FeatureExtractor {
public:
  torch::Tensor forward(const torch::Tensor &images) override { return images; }
  void to(torch::Dtype) override {}
  std::string name() const override { return "identity"; }
};

/// VGG-16 convolutional stack truncated after its first 23 feature layers
/// (through the ReLU following conv4_3). Weights are frozen.
class VggFeatureExtractor : public FeatureExtractor {
public:
  static constexpr int kLayers = 23;

  /// Kaiming-normal (fan-out) convolution weights drawn from `seed`, zero biases.
  explicit VggFeatureExtractor(uint64_t seed = 0);

  /// Replace weights with a state dict written by Python `torch.save` with
  /// keys "<layer>.weight" / "<layer>.bias" (e.g. torchvision vgg16 features).
  void load_pretrained(const std::filesystem::path &path);
  bool pretrained() const { return pretrained_; }

  torch::Tensor forward(const torch::Tensor &images) override;
  std::array<double, 3> mean() const override { return {0.485, 0.456, 0.406}; }
  std::array<double, 3> stddev() const override { return {0.229, 0.224, 0.225}; }
  void to(torch::Dtype dtype) override;
  std::string name() const override { return pretrained_ ? "vgg16-pretrained" : "vgg16-random"; }

  torch::nn::Sequential &layers() { return layers_; }

private:
  torch::nn::Sequential layers_;
  bool pretrained_ = false;
};

/// Default extractor: pretrained VGG-16 when `weights` points at a readable
/// file, otherwise the seeded random-weight instance.
std::shared_ptr<FeatureExtractor> make_default_extractor(const std::filesystem::path &weights = {}, uint64_t seed = 0);

/// Axial slices are replicated to 3 channels, standardized, passed through
/// the extractor and compared with MAE, averaged over all slices.
torch::Tensor perceptual(const torch::Tensor &y_hat, const torch::Tensor &y, FeatureExtractor &extractor);

struct LossTerms {
  torch::Tensor mae;
  torch::Tensor one_minus_ssim;
  torch::Tensor perceptual;
  torch::Tensor registration; // undefined unless a registration term applies
  torch::Tensor total;
};

/// alpha1 * MAE + alpha2 * (1 - SSIM) + alpha3 * perceptual.
LossTerms composite(const torch::Tensor &y_hat, const torch::Tensor &y, const LossWeights &w,
                    FeatureExtractor &extractor, const SSIMConfig &ssim_cfg = {});

double weighted_sum(double mae, double one_minus_ssim, double perceptual, const LossWeights &w);

} // namespace sct
