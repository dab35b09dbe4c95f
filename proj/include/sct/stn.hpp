#pragma once

#include <array>
#include <utility>

#include <torch/torch.h>

#include "sct/affine.hpp"
#include "sct/volume.hpp"

namespace sct {

struct LocalizationConfig {
  std::array<int64_t, 3> conv_filters{16, 32, 64};
  std::array<int64_t, 3> conv_kernels{7, 5, 3};
  bool pool_after_first = true;
  std::array<int64_t, 2> head_widths{32, 12};

  void validate() const;
};

/// Regresses a 3x4 affine from the stacked (moving CT, CBCT) pair.
///
/// conv(7) -> ReLU -> maxpool(2) -> conv(5) -> ReLU -> conv(3) -> ReLU ->
/// adaptive average pool to 1^3 -> dense(32) -> ReLU -> dense(12).
/// Convolutions use stride 1 and extent-preserving padding.
class LocalizationNetImpl : public torch::nn::Module {
public:
  explicit LocalizationNetImpl(LocalizationConfig cfg = {});

  /// (N, 2, D, H, W) -> (N, 3, 4)
  torch::Tensor forward(const torch::Tensor &pair);

  /// Zero the last dense layer and set its bias to the flattened [I | 0].
  void reset_head_to_identity();

  const LocalizationConfig &config() const { return cfg_; }

  torch::nn::Conv3d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};

private:
  LocalizationConfig cfg_;
};
TORCH_MODULE(LocalizationNet);

struct StnOutput {
  torch::Tensor warped; // (N, 1, D, H, W): the moving CT resampled onto the CBCT grid
  torch::Tensor theta;  // (N, 3, 4)
};

class SpatialTransformerImpl : public torch::nn::Module {
public:
  explicit SpatialTransformerImpl(LocalizationConfig cfg = {});

  /// Both inputs (N, 1, D, H, W) with matching shapes.
  StnOutput forward(const torch::Tensor &u_ct, const torch::Tensor &v_cbct);

  LocalizationNet localizer{nullptr};
};
TORCH_MODULE(SpatialTransformer);

/// Volume-level conveniences (no gradient tracking).
AffineMatrix localize(SpatialTransformer &stn, const Volume &u_ct, const Volume &v_cbct);
std::pair<Volume, AffineMatrix> stn_forward(SpatialTransformer &stn, const Volume &u_ct, const Volume &v_cbct);

} // namespace sct
