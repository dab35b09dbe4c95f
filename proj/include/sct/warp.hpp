#pragma once

#include <torch/torch.h>

#include "sct/affine.hpp"
#include "sct/volume.hpp"

namespace sct {

/// Per-output-voxel normalized source coordinates, shape (N, D, H, W, 3) with
/// the last axis ordered (x, y, z).
torch::Tensor affine_grid(const torch::Tensor &theta, const Shape3 &out_shape);

/// Differentiable trilinear sampling of `input` (N, C, D, H, W) at `grid`
/// (N, Do, Ho, Wo, 3). Corners outside the input contribute 0. Gradients flow
/// to both the intensities and the coordinates.
torch::Tensor grid_sample(const torch::Tensor &input, const torch::Tensor &grid);

/// Volume-level wrappers.
struct SamplingGrid {
  torch::Tensor coords; // (D, H, W, 3)
  Shape3 shape() const;
};

SamplingGrid make_grid(const AffineMatrix &m, const Shape3 &shape);
Volume grid_sample(const Volume &v, const SamplingGrid &g);

} // namespace sct
