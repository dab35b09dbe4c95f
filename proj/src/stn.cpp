#include "sct/stn.hpp"

#include "sct/errors.hpp"
#include "sct/warp.hpp"

namespace sct {

namespace nn = torch::nn;

void LocalizationConfig::validate() const {
  for (auto f : conv_filters)
    if (f < 1) throw InvalidArgument("localization filters must be positive");
  for (auto k : conv_kernels)
    if (k < 1 || k % 2 == 0) throw InvalidArgument("localization kernels must be odd and positive");
  if (head_widths[0] < 1) throw InvalidArgument("localization hidden width must be positive");
  if (head_widths[1] != 12) throw InvalidArgument("localization head must emit 12 affine parameters");
}

LocalizationNetImpl::LocalizationNetImpl(LocalizationConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto conv = [](int64_t in, int64_t out, int64_t k) {
    return nn::Conv3d(nn::Conv3dOptions(in, out, k).stride(1).padding(k / 2));
  };
  conv1 = register_module("conv1", conv(2, cfg_.conv_filters[0], cfg_.conv_kernels[0]));
  conv2 = register_module("conv2", conv(cfg_.conv_filters[0], cfg_.conv_filters[1], cfg_.conv_kernels[1]));
  conv3 = register_module("conv3", conv(cfg_.conv_filters[1], cfg_.conv_filters[2], cfg_.conv_kernels[2]));
  fc1 = register_module("fc1", nn::Linear(cfg_.conv_filters[2], cfg_.head_widths[0]));
  fc2 = register_module("fc2", nn::Linear(cfg_.head_widths[0], cfg_.head_widths[1]));
  reset_head_to_identity();
}

void LocalizationNetImpl::reset_head_to_identity() {
  torch::NoGradGuard no_grad;
  fc2->weight.zero_();
  fc2->bias.copy_(torch::tensor({1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0}, fc2->bias.options()));
}

torch::Tensor LocalizationNetImpl::forward(const torch::Tensor &pair) {
  TORCH_CHECK(pair.dim() == 5 && pair.size(1) == 2, "localization input must be (N, 2, D, H, W)");
  torch::Tensor x = torch::relu(conv1->forward(pair));
  if (cfg_.pool_after_first) x = torch::max_pool3d(x, 2);
  x = torch::relu(conv2->forward(x));
  x = torch::relu(conv3->forward(x));
  x = torch::adaptive_avg_pool3d(x, {1, 1, 1}).flatten(1);
  x = torch::relu(fc1->forward(x));
  return fc2->forward(x).view({-1, 3, 4});
}

SpatialTransformerImpl::SpatialTransformerImpl(LocalizationConfig cfg) {
  localizer = register_module("localizer", LocalizationNet(cfg));
}

StnOutput SpatialTransformerImpl::forward(const torch::Tensor &u_ct, const torch::Tensor &v_cbct) {
  if (u_ct.sizes() != v_cbct.sizes())
    throw ShapeMismatch("STN inputs differ in shape");
  if (u_ct.dim() != 5 || u_ct.size(1) != 1) throw ShapeMismatch("STN inputs must be (N, 1, D, H, W)");
  StnOutput out;
  out.theta = localizer->forward(torch::cat({u_ct, v_cbct}, 1));
  const Shape3 shape{u_ct.size(2), u_ct.size(3), u_ct.size(4)};
  out.warped = grid_sample(u_ct, affine_grid(out.theta, shape));
  return out;
}

namespace {

torch::Tensor as_batch(const Volume &v, const torch::nn::Module &m) {
  auto params = m.parameters();
  const auto dtype = params.empty() ? torch::kFloat32 : params.front().scalar_type();
  return v.data.to(dtype).unsqueeze(0).unsqueeze(0);
}

void check_pair(const Volume &u_ct, const Volume &v_cbct) {
  if (u_ct.shape() != v_cbct.shape())
    throw ShapeMismatch("STN inputs differ in shape: " + to_string(u_ct.shape()) + " vs " + to_string(v_cbct.shape()));
}

} // namespace

AffineMatrix localize(SpatialTransformer &stn, const Volume &u_ct, const Volume &v_cbct) {
  check_pair(u_ct, v_cbct);
  torch::NoGradGuard no_grad;
  const torch::Tensor pair = torch::cat({as_batch(u_ct, *stn), as_batch(v_cbct, *stn)}, 1);
  return AffineMatrix::from_tensor(stn->localizer->forward(pair)[0]);
}

std::pair<Volume, AffineMatrix> stn_forward(SpatialTransformer &stn, const Volume &u_ct, const Volume &v_cbct) {
  check_pair(u_ct, v_cbct);
  torch::NoGradGuard no_grad;
  const StnOutput out = stn->forward(as_batch(u_ct, *stn), as_batch(v_cbct, *stn));
  Volume warped = u_ct.with_data(out.warped[0][0].to(torch::kFloat32).contiguous());
  return {std::move(warped), AffineMatrix::from_tensor(out.theta[0])};
}

} // namespace sct
