#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#undef CHECK
#include "doctest.h"

#include "sct/volume.hpp"

namespace sct::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("sct-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline torch::Tensor uniform(std::vector<int64_t> shape, uint64_t seed, torch::Dtype dtype = torch::kFloat32) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::rand(shape, gen, torch::TensorOptions().dtype(dtype));
}

inline Volume random_volume(Shape3 s, uint64_t seed) { return make_volume(uniform({s.d, s.h, s.w}, seed)); }

inline double max_abs_diff(const torch::Tensor &a, const torch::Tensor &b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

inline bool bit_equal(const torch::Tensor &a, const torch::Tensor &b) {
  return a.sizes() == b.sizes() && a.dtype() == b.dtype() && torch::equal(a, b);
}

struct GradCheck {
  double relative_error = 0.0; // ||analytic - numeric|| / ||numeric||
  double numeric_norm = 0.0;
};

/// Central differences of scalar `f` w.r.t. the listed flat entries of `x`
/// (a leaf with requires_grad), compared against autograd.
inline GradCheck check_gradient(const std::function<torch::Tensor()> &f, torch::Tensor x,
                                const std::vector<int64_t> &entries, double h = 1e-6) {
  if (x.grad().defined()) x.mutable_grad().zero_();
  f().backward();
  const torch::Tensor analytic = x.grad().detach().reshape(-1).clone();
  double num_sq = 0.0, diff_sq = 0.0;
  for (int64_t i : entries) {
    double plus, minus;
    {
      torch::NoGradGuard ng;
      auto flat = x.view(-1);
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      plus = f().item<double>();
      flat[i] = orig - h;
      minus = f().item<double>();
      flat[i] = orig;
    }
    const double numeric = (plus - minus) / (2 * h);
    const double a = analytic[i].item<double>();
    num_sq += numeric * numeric;
    diff_sq += (a - numeric) * (a - numeric);
  }
  return {std::sqrt(diff_sq) / std::sqrt(num_sq), std::sqrt(num_sq)};
}

/// `count` distinct flat indices below n, drawn with `seed`.
inline std::vector<int64_t> pick(int64_t n, int64_t count, uint64_t seed) {
  std::vector<int64_t> all(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<size_t>(std::min(n, count)));
  return all;
}

} // namespace sct::testing
