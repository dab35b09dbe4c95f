#include "sct/warp.hpp"

#include "sct/errors.hpp"

namespace sct {

namespace {

torch::Tensor lattice(int64_t n, const torch::TensorOptions &opts) {
  if (n == 1) return torch::zeros({1}, opts);
  return torch::linspace(-1.0, 1.0, n, opts);
}

// Index-space coordinates within `tol` of an integer are snapped onto it so the
// identity warp reproduces voxel values exactly. The snap is straight-through:
// the forward value moves, the gradient does not see it.
torch::Tensor snap(const torch::Tensor &idx) {
  const double tol = idx.scalar_type() == torch::kFloat64 ? 1e-9 : 1e-4;
  const torch::Tensor rounded = idx.detach().round();
  const torch::Tensor close = (idx.detach() - rounded).abs() < tol;
  return idx + torch::where(close, rounded - idx.detach(), torch::zeros_like(rounded));
}

} // namespace

torch::Tensor affine_grid(const torch::Tensor &theta, const Shape3 &out) {
  TORCH_CHECK(theta.dim() == 3 && theta.size(1) == 3 && theta.size(2) == 4, "theta must be (N, 3, 4)");
  if (out.d < 1 || out.h < 1 || out.w < 1) throw InvalidArgument("affine_grid: empty output shape");
  const auto opts = theta.options().requires_grad(false);
  const torch::Tensor z = lattice(out.d, opts).view({out.d, 1, 1}).expand({out.d, out.h, out.w});
  const torch::Tensor y = lattice(out.h, opts).view({1, out.h, 1}).expand({out.d, out.h, out.w});
  const torch::Tensor x = lattice(out.w, opts).view({1, 1, out.w}).expand({out.d, out.h, out.w});
  // Homogeneous base coordinates (D*H*W, 4) ordered (x, y, z, 1).
  const torch::Tensor base = torch::stack({x, y, z, torch::ones_like(x)}, -1).reshape({-1, 4});
  // (N, P, 4) x (N, 4, 3) -> (N, P, 3)
  const torch::Tensor pts = torch::matmul(base.unsqueeze(0), theta.transpose(1, 2));
  return pts.view({theta.size(0), out.d, out.h, out.w, 3});
}

torch::Tensor grid_sample(const torch::Tensor &input, const torch::Tensor &grid) {
  TORCH_CHECK(input.dim() == 5, "grid_sample input must be (N, C, D, H, W)");
  TORCH_CHECK(grid.dim() == 5 && grid.size(4) == 3, "grid must be (N, Do, Ho, Wo, 3)");
  TORCH_CHECK(grid.size(0) == input.size(0), "grid and input batch sizes differ");
  const int64_t n = input.size(0);
  const int64_t c = input.size(1);
  const int64_t d = input.size(2);
  const int64_t h = input.size(3);
  const int64_t w = input.size(4);
  const int64_t od = grid.size(1);
  const int64_t oh = grid.size(2);
  const int64_t ow = grid.size(3);
  const int64_t npts = od * oh * ow;

  const torch::Tensor g = grid.to(input.scalar_type()).reshape({n, npts, 3});
  // Normalized -> index space: -1 is voxel 0, +1 is voxel n-1.
  const torch::Tensor ix = snap((g.select(2, 0) + 1.0) * (0.5 * static_cast<double>(w - 1)));
  const torch::Tensor iy = snap((g.select(2, 1) + 1.0) * (0.5 * static_cast<double>(h - 1)));
  const torch::Tensor iz = snap((g.select(2, 2) + 1.0) * (0.5 * static_cast<double>(d - 1)));

  const torch::Tensor x0 = ix.detach().floor();
  const torch::Tensor y0 = iy.detach().floor();
  const torch::Tensor z0 = iz.detach().floor();
  const torch::Tensor fx = ix - x0;
  const torch::Tensor fy = iy - y0;
  const torch::Tensor fz = iz - z0;

  const torch::Tensor flat = input.reshape({n, c, d * h * w});
  torch::Tensor out = torch::zeros({n, c, npts}, input.options());

  for (int dz = 0; dz <= 1; ++dz) {
    const torch::Tensor zi = z0 + dz;
    const torch::Tensor wz = dz ? fz : 1.0 - fz;
    for (int dy = 0; dy <= 1; ++dy) {
      const torch::Tensor yi = y0 + dy;
      const torch::Tensor wy = dy ? fy : 1.0 - fy;
      for (int dx = 0; dx <= 1; ++dx) {
        const torch::Tensor xi = x0 + dx;
        const torch::Tensor wx = dx ? fx : 1.0 - fx;
        const torch::Tensor inside = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1) & (zi >= 0) & (zi <= d - 1);
        const torch::Tensor lin = ((zi.clamp(0, d - 1) * h + yi.clamp(0, h - 1)) * w + xi.clamp(0, w - 1))
                                      .to(torch::kLong);
        const torch::Tensor weight = wx * wy * wz * inside.to(input.scalar_type());
        const torch::Tensor values = flat.gather(2, lin.unsqueeze(1).expand({n, c, npts}));
        out = out + values * weight.unsqueeze(1);
      }
    }
  }
  return out.view({n, c, od, oh, ow});
}

Shape3 SamplingGrid::shape() const {
  if (!coords.defined() || coords.dim() != 4) return {};
  return {coords.size(0), coords.size(1), coords.size(2)};
}

SamplingGrid make_grid(const AffineMatrix &m, const Shape3 &shape) {
  const torch::Tensor theta = m.to_tensor(torch::kFloat64).unsqueeze(0);
  return {affine_grid(theta, shape).squeeze(0)};
}

Volume grid_sample(const Volume &v, const SamplingGrid &g) {
  torch::NoGradGuard no_grad;
  const torch::Tensor in = v.data.unsqueeze(0).unsqueeze(0);
  const torch::Tensor out = grid_sample(in, g.coords.unsqueeze(0).to(in.scalar_type()));
  return v.with_data(out.squeeze(0).squeeze(0).contiguous());
}

} // namespace sct
