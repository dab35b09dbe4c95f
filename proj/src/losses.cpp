#include "sct/losses.hpp"

#include <fstream>
#include <iterator>
#include <vector>

#include <ATen/CPUGeneratorImpl.h>

#include "sct/errors.hpp"

namespace sct {

void LossWeights::validate() const {
  if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0 || reg_weight < 0) throw InvalidArgument("loss weights must be >= 0");
}

void SSIMConfig::validate() const {
  if (window < 1 || window % 2 == 0) throw InvalidArgument("SSIM window must be odd");
  if (!(sigma > 0 && k1 > 0 && k2 > 0 && dynamic_range > 0)) throw InvalidArgument("SSIM constants must be positive");
}

namespace {

void require_same_shape(const torch::Tensor &a, const torch::Tensor &b, const char *what) {
  if (a.sizes() != b.sizes()) throw ShapeMismatch(std::string(what) + ": operand shapes differ");
}

torch::Tensor as_ncdhw(const torch::Tensor &t) {
  if (t.dim() == 3) return t.unsqueeze(0).unsqueeze(0);
  if (t.dim() == 5 && t.size(1) == 1) return t;
  throw InvalidArgument("expected (D, H, W) or (N, 1, D, H, W)");
}

} // namespace

torch::Tensor mae(const torch::Tensor &y_hat, const torch::Tensor &y) {
  require_same_shape(y_hat, y, "mae");
  return (y_hat - y).abs().mean();
}

torch::Tensor mse(const torch::Tensor &a, const torch::Tensor &b) {
  require_same_shape(a, b, "mse");
  return (a - b).square().mean();
}

torch::Tensor registration_loss(const torch::Tensor &v_ct, const torch::Tensor &y, double weight) {
  require_same_shape(v_ct, y, "registration_loss");
  return weight * mse(v_ct, y);
}

torch::Tensor ssim(const torch::Tensor &y_hat, const torch::Tensor &y, const SSIMConfig &cfg) {
  cfg.validate();
  require_same_shape(y_hat, y, "ssim");
  const torch::Tensor a = as_ncdhw(y_hat);
  const torch::Tensor b = as_ncdhw(y);
  for (int i = 2; i < 5; ++i)
    if (a.size(i) < cfg.window) throw InvalidArgument("ssim: volume smaller than the SSIM window");

  const int64_t r = cfg.window / 2;
  torch::Tensor g = torch::arange(-r, r + 1, torch::TensorOptions().dtype(torch::kFloat64));
  g = torch::exp(-0.5 * g.square() / (cfg.sigma * cfg.sigma));
  g = (g / g.sum()).to(a.scalar_type());
  const int64_t k = cfg.window;

  // Five local moments in one batched pass: x, y, x^2, y^2, xy.
  const int64_t n = a.size(0);
  torch::Tensor stack = torch::cat({a, b, a * a, b * b, a * b}, 0);
  stack = torch::conv3d(stack, g.view({1, 1, k, 1, 1}));
  stack = torch::conv3d(stack, g.view({1, 1, 1, k, 1}));
  stack = torch::conv3d(stack, g.view({1, 1, 1, 1, k}));
  const auto moments = stack.split(n, 0);
  const torch::Tensor &mu_x = moments[0];
  const torch::Tensor &mu_y = moments[1];
  const torch::Tensor var_x = moments[2] - mu_x * mu_x;
  const torch::Tensor var_y = moments[3] - mu_y * mu_y;
  const torch::Tensor cov = moments[4] - mu_x * mu_y;

  const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
  const torch::Tensor num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
  const torch::Tensor den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
  return (num / den).mean();
}

// ---------------------------------------------------------------------------

VggFeatureExtractor::VggFeatureExtractor(uint64_t seed) {
  namespace nn = torch::nn;
  // torchvision vgg16().features[:23]
  const std::vector<int64_t> plan{64, 64, -1, 128, 128, -1, 256, 256, 256, -1, 512, 512, 512};
  layers_ = nn::Sequential();
  int64_t in = 3;
  for (auto c : plan) {
    if (c < 0) {
      layers_->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)));
      continue;
    }
    layers_->push_back(nn::Conv2d(nn::Conv2dOptions(in, c, 3).padding(1)));
    layers_->push_back(nn::ReLU());
    in = c;
  }
  TORCH_CHECK(layers_->size() == kLayers, "VGG truncation mismatch");

  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard no_grad;
  for (auto &p : layers_->named_parameters()) {
    if (p.key().ends_with(".weight")) {
      const double fan_out = static_cast<double>(p.value().size(0) * p.value().size(2) * p.value().size(3));
      p.value().copy_(torch::randn(p.value().sizes(), gen, p.value().options()) * std::sqrt(2.0 / fan_out));
    } else {
      p.value().zero_();
    }
  }
  for (auto &p : layers_->parameters()) p.set_requires_grad(false);
  layers_->eval();
}

void VggFeatureExtractor::load_pretrained(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read VGG weights " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  c10::IValue value;
  try {
    value = torch::pickle_load(bytes);
  } catch (const c10::Error &e) {
    throw DataError("cannot parse VGG weights " + path.string() + ": " + e.what_without_backtrace());
  }
  if (!value.isGenericDict()) throw DataError("VGG weights must be a state dict");
  const auto dict = value.toGenericDict();
  torch::NoGradGuard no_grad;
  for (auto &p : layers_->named_parameters()) {
    const auto it = dict.find(p.key());
    if (it == dict.end()) throw DataError("VGG weights missing '" + p.key() + "'");
    const torch::Tensor src = it->value().toTensor();
    if (src.sizes() != p.value().sizes()) throw DataError("VGG weight '" + p.key() + "' has the wrong shape");
    p.value().copy_(src.to(p.value().scalar_type()));
  }
  pretrained_ = true;
}

torch::Tensor VggFeatureExtractor::forward(const torch::Tensor &images) { return layers_->forward(images); }

void VggFeatureExtractor::to(torch::Dtype dtype) { layers_->to(dtype); }

std::shared_ptr<FeatureExtractor> make_default_extractor(const std::filesystem::path &weights, uint64_t seed) {
  auto vgg = std::make_shared<VggFeatureExtractor>(seed);
  if (!weights.empty()) vgg->load_pretrained(weights);
  return vgg;
}

namespace {

torch::Tensor to_standardized_slices(const torch::Tensor &v, const FeatureExtractor &ex) {
  const torch::Tensor x = as_ncdhw(v);
  // (N, 1, D, H, W) -> (N*D, 1, H, W): one image per axial slice.
  const torch::Tensor slices = x.permute({0, 2, 1, 3, 4}).reshape({-1, 1, x.size(3), x.size(4)});
  const auto m = ex.mean();
  const auto s = ex.stddev();
  const auto opts = x.options().requires_grad(false);
  const torch::Tensor mean = torch::tensor({m[0], m[1], m[2]}, torch::kFloat64).to(opts.dtype()).view({1, 3, 1, 1});
  const torch::Tensor std = torch::tensor({s[0], s[1], s[2]}, torch::kFloat64).to(opts.dtype()).view({1, 3, 1, 1});
  return (slices.expand({-1, 3, -1, -1}) - mean) / std;
}

} // namespace

torch::Tensor perceptual(const torch::Tensor &y_hat, const torch::Tensor &y, FeatureExtractor &extractor) {
  require_same_shape(y_hat, y, "perceptual");
  const torch::Tensor f_hat = extractor.forward(to_standardized_slices(y_hat, extractor));
  torch::Tensor f_ref;
  if (y.requires_grad()) {
    f_ref = extractor.forward(to_standardized_slices(y, extractor));
  } else {
    torch::NoGradGuard no_grad;
    f_ref = extractor.forward(to_standardized_slices(y, extractor));
  }
  return (f_hat - f_ref).abs().mean();
}

LossTerms composite(const torch::Tensor &y_hat, const torch::Tensor &y, const LossWeights &w,
                    FeatureExtractor &extractor, const SSIMConfig &ssim_cfg) {
  w.validate();
  LossTerms t;
  t.mae = mae(y_hat, y);
  t.one_minus_ssim = 1.0 - ssim(y_hat, y, ssim_cfg);
  t.perceptual = perceptual(y_hat, y, extractor);
  t.total = w.alpha1 * t.mae + w.alpha2 * t.one_minus_ssim + w.alpha3 * t.perceptual;
  return t;
}

double weighted_sum(double mae_value, double one_minus_ssim, double perceptual_value, const LossWeights &w) {
  return w.alpha1 * mae_value + w.alpha2 * one_minus_ssim + w.alpha3 * perceptual_value;
}

} // namespace sct
