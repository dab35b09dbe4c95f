#include "sct/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <ATen/CPUGeneratorImpl.h>

#include "sct/errors.hpp"

namespace sct {

void PhantomSpec::validate() const {
  if (size < 16) throw InvalidArgument("phantom size must be >= 16");
  if (n_organs < 0) throw InvalidArgument("n_organs must be non-negative");
  const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(organ_intensity_range[0]) || !in_unit(organ_intensity_range[1]) ||
      organ_intensity_range[0] > organ_intensity_range[1])
    throw InvalidArgument("organ intensity range must be an ordered interval inside [0,1]");
  if (!in_unit(shell_intensity)) throw InvalidArgument("shell intensity must lie in [0,1]");
}

QualityLevel::QualityLevel(int q) : q_(q) {
  if (std::find(kLadder.begin(), kLadder.end(), q) == kLadder.end())
    throw InvalidArgument("quality level " + std::to_string(q) + " is not in {32, 64, 128, 256}");
}

QualityLevel QualityLevel::ideal() { return QualityLevel(IdealTag{}); }

double QualityLevel::blur_sigma() const { return is_ideal() ? 0.0 : 1.2 * std::sqrt(32.0 / q_); }
double QualityLevel::noise_sigma() const { return is_ideal() ? 0.0 : 0.08 * std::sqrt(32.0 / q_); }
double QualityLevel::streak_amplitude() const { return is_ideal() ? 0.0 : 0.12 * 32.0 / q_; }

namespace {

double uniform(std::mt19937_64 &rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

torch::Tensor axis_coords(int64_t n) { return torch::linspace(-1.0, 1.0, n, torch::kFloat64); }

} // namespace

Volume generate_phantom(const PhantomSpec &spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int64_t n = spec.size;
  const torch::Tensor z = axis_coords(n).view({n, 1, 1});
  const torch::Tensor y = axis_coords(n).view({1, n, 1});
  const torch::Tensor x = axis_coords(n).view({1, 1, n});

  // Body outline.
  const double ax = uniform(rng, 0.75, 0.85);
  const double ay = uniform(rng, 0.60, 0.70);
  const double az = uniform(rng, 0.80, 0.90);
  const double cx = uniform(rng, -0.03, 0.03);
  const double cy = uniform(rng, -0.03, 0.03);
  const torch::Tensor rho =
      ((x - cx) / ax).square() + ((y - cy) / ay).square() + (z / az).square(); // squared radius
  const torch::Tensor body = rho < 1.0;
  constexpr double kShellThickness = 0.15;
  const torch::Tensor shell = body & (rho >= (1.0 - kShellThickness) * (1.0 - kShellThickness));

  // Smooth soft-tissue background.
  torch::Tensor tissue = torch::full({n, n, n}, 0.45, torch::kFloat64);
  for (int k = 0; k < 3; ++k) {
    const double fx = uniform(rng, 0.5, 1.5), fy = uniform(rng, 0.5, 1.5), fz = uniform(rng, 0.5, 1.5);
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    tissue = tissue + 0.01 * torch::sin(std::numbers::pi * (fx * x + fy * y + fz * z) + phase);
  }

  // Organs inside the inner body.
  for (int o = 0; o < spec.n_organs; ++o) {
    const double ox = cx + uniform(rng, -0.45, 0.45) * ax;
    const double oy = cy + uniform(rng, -0.45, 0.45) * ay;
    const double oz = uniform(rng, -0.5, 0.5) * az;
    const double rx = uniform(rng, 0.10, 0.28), ry = uniform(rng, 0.10, 0.28), rz = uniform(rng, 0.10, 0.28);
    const double value = uniform(rng, spec.organ_intensity_range[0], spec.organ_intensity_range[1]);
    const torch::Tensor inside =
        ((x - ox) / rx).square() + ((y - oy) / ry).square() + ((z - oz) / rz).square() < 1.0;
    tissue = torch::where(inside, torch::full_like(tissue, value), tissue);
  }

  torch::Tensor data = torch::where(body, tissue, torch::zeros_like(tissue));
  if (spec.shell) data = torch::where(shell, torch::full_like(data, spec.shell_intensity), data);
  data = data.clamp(0.0, 1.0).to(torch::kFloat32).contiguous();
  return make_volume(data, {}, Modality::CT, IntensityDomain::Normalized);
}

Volume gaussian_blur(const Volume &v, double sigma) {
  if (sigma <= 0.0) return v.with_data(v.data.clone());
  const auto radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  torch::Tensor taps = torch::arange(-radius, radius + 1, torch::kFloat64);
  taps = torch::exp(-0.5 * taps.square() / (sigma * sigma));
  taps = (taps / taps.sum()).to(v.data.scalar_type());
  const int64_t k = 2 * radius + 1;

  torch::Tensor x = v.data.unsqueeze(0).unsqueeze(0);
  x = torch::replication_pad3d(x, {radius, radius, radius, radius, radius, radius});
  x = torch::conv3d(x, taps.view({1, 1, k, 1, 1}));
  x = torch::conv3d(x, taps.view({1, 1, 1, k, 1}));
  x = torch::conv3d(x, taps.view({1, 1, 1, 1, k}));
  return v.with_data(x.squeeze(0).squeeze(0).contiguous());
}

Volume degrade_to_cbct(const Volume &ct, const QualityLevel &q, uint64_t seed) {
  if (ct.domain != IntensityDomain::Normalized) throw DomainMismatch("degrade_to_cbct expects a NORMALIZED CT");
  Volume out = ct.with_data(ct.data.clone());
  out.modality = Modality::CBCT;
  if (q.is_ideal()) return out;

  const Shape3 s = ct.shape();
  out = gaussian_blur(out, q.blur_sigma());

  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);

  const torch::Tensor noise = torch::randn({s.d, s.h, s.w}, gen, torch::kFloat64) * q.noise_sigma();

  // Streaks: k spokes per axial slice, phase drawn per slice, growing with radius.
  const int spokes = 6 + static_cast<int>(rng() % 7);
  const torch::Tensor yy = axis_coords(s.h).view({s.h, 1});
  const torch::Tensor xx = axis_coords(s.w).view({1, s.w});
  const torch::Tensor theta = torch::atan2(yy, xx);
  const torch::Tensor radius = torch::sqrt(xx.square() + yy.square()).clamp_max(1.0);
  std::vector<torch::Tensor> slices;
  slices.reserve(static_cast<size_t>(s.d));
  for (int64_t k = 0; k < s.d; ++k) {
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    slices.push_back(torch::cos(static_cast<double>(spokes) * theta + phase) * radius);
  }
  const torch::Tensor streaks = torch::stack(slices, 0) * q.streak_amplitude();

  out.data = (out.data.to(torch::kFloat64) + noise + streaks).clamp(0.0, 1.0).to(torch::kFloat32).contiguous();
  return out;
}

} // namespace sct
