#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sct/affine.hpp"
#include "sct/losses.hpp"
#include "sct/stn.hpp"
#include "sct/unet.hpp"
#include "sct/volume.hpp"

namespace sct {

enum class ModelKind { Unimodal, MM, MMSTN };

std::string to_string(ModelKind k);
/// Accepts "unimodal", "mm", "mm_stn".
ModelKind parse_model_kind(std::string_view s);
/// Human label used in tables: "Base", "MM", "MM+STN".
std::string display_name(ModelKind k);

/// One training / evaluation unit.
struct PairedSample {
  std::string case_id;
  Volume cbct; // intraoperative CBCT
  Volume u_ct; // misaligned preoperative CT
  Volume y;    // aligned ground-truth CT
  AffineMatrix truth = AffineMatrix::identity();
};

/// Samples stacked into (N, 1, D, H, W) tensors.
struct Batch {
  torch::Tensor cbct;
  torch::Tensor u_ct;
  torch::Tensor y;
};

Batch stack_samples(std::span<const PairedSample> samples, torch::Dtype dtype = torch::kFloat32);

struct ModelConfig {
  ModelKind kind = ModelKind::MMSTN;
  UNetConfig unet{};
  LocalizationConfig localization{};
};

struct ForwardOutput {
  torch::Tensor y_hat;               // (N, 1, D, H, W) logits
  std::optional<torch::Tensor> v_ct; // STN-warped CT, MM+STN only
  torch::Tensor theta;               // (N, 3, 4), MM+STN only
};

/// Unimodal:  y_hat = unet(cbct)
/// MM:        y_hat = unet([u_ct, cbct])
/// MM+STN:    v_ct = stn(u_ct, cbct); y_hat = unet([v_ct, cbct])
///
/// Fusion channel order is [CT, CBCT].
class SynthesisModelImpl : public torch::nn::Module {
public:
  explicit SynthesisModelImpl(ModelConfig cfg);

  ForwardOutput forward(const Batch &batch);

  ModelKind kind() const { return cfg_.kind; }
  const ModelConfig &config() const { return cfg_; }

  UNet3d unet{nullptr};
  SpatialTransformer stn{nullptr};

private:
  ModelConfig cfg_;
};
TORCH_MODULE(SynthesisModel);

/// Seeds the global torch generator, then builds the U-Net before the STN so
/// variants sharing a seed share U-Net initial weights.
SynthesisModel make_model(const ModelConfig &cfg, uint64_t seed);

struct LossContext {
  LossWeights weights{};
  SSIMConfig ssim{};
  std::shared_ptr<FeatureExtractor> extractor = std::make_shared<IdentityExtractor>();
};

/// composite(y_hat, y), plus registration_loss(v_ct, y) for MM+STN.
LossTerms loss_for(ModelKind kind, const ForwardOutput &out, const torch::Tensor &y, const LossContext &ctx);

struct VolumeForward {
  Volume y_hat;
  std::optional<Volume> v_ct;
  std::optional<AffineMatrix> theta;
};

/// Single-sample inference in the model's current mode, without gradients.
VolumeForward forward(SynthesisModel &model, const PairedSample &sample);

} // namespace sct
