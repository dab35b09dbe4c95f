#include "support.hpp"

#include "sct/affine.hpp"
#include "sct/errors.hpp"
#include "sct/phantom.hpp"
#include "sct/warp.hpp"

using namespace sct;
using sct::testing::uniform;

namespace {

torch::Tensor identity_theta(int64_t n, torch::Dtype dtype) {
  return AffineMatrix::identity().to_tensor(dtype).unsqueeze(0).expand({n, 3, 4}).contiguous();
}

// Random sampling points whose index coordinates avoid integers by at least
// `margin`, inside [lo, hi] in normalized units.
torch::Tensor off_lattice_grid(int64_t n, int64_t pts, const Shape3 &in, double lo, double hi, uint64_t seed) {
  torch::Tensor g = uniform({n, 1, 1, pts, 3}, seed, torch::kFloat64) * (hi - lo) + lo;
  const std::array<int64_t, 3> ext{in.w, in.h, in.d};
  for (int a = 0; a < 3; ++a) {
    const double half = 0.5 * static_cast<double>(ext[a] - 1);
    torch::Tensor idx = (g.select(4, a) + 1.0) * half;
    torch::Tensor frac = idx - idx.floor();
    idx = idx.floor() + frac.clamp(0.1, 0.9);
    g.select(4, a).copy_(idx / half - 1.0);
  }
  return g;
}

} // namespace

TEST_CASE("identity grid reproduces the input bit for bit") {
  for (torch::Dtype dt : {torch::kFloat32, torch::kFloat64}) {
    const torch::Tensor v = uniform({2, 3, 5, 6, 7}, 1, dt);
    const torch::Tensor g = affine_grid(identity_theta(2, dt), {5, 6, 7});
    CHECK(sct::testing::bit_equal(grid_sample(v, g), v));
  }
  const Volume vol = sct::testing::random_volume({9, 10, 11}, 2);
  CHECK(sct::testing::bit_equal(grid_sample(vol, make_grid(AffineMatrix::identity(), vol.shape())).data, vol.data));
}

TEST_CASE("canonical lattice corners") {
  const SamplingGrid g = make_grid(AffineMatrix::identity(), {4, 5, 6});
  CHECK((g.shape() == Shape3{4, 5, 6}));
  const auto c = g.coords.accessor<double, 4>();
  CHECK(c[0][0][0][0] == -1.0);
  CHECK(c[0][0][0][1] == -1.0);
  CHECK(c[0][0][0][2] == -1.0);
  CHECK(c[3][4][5][0] == 1.0);
  CHECK(c[3][4][5][1] == 1.0);
  CHECK(c[3][4][5][2] == 1.0);
  // Coordinate order is (x, y, z) = (W, H, D).
  CHECK(c[0][0][1][0] == doctest::Approx(-1.0 + 2.0 / 5.0));
  CHECK(c[0][1][0][1] == doctest::Approx(-1.0 + 2.0 / 4.0));
  CHECK(c[1][0][0][2] == doctest::Approx(-1.0 + 2.0 / 3.0));
}

TEST_CASE("grid entries equal m applied to each lattice point") {
  const AffineMatrix m = AffineMatrix::from_row_major({0.9, 0.1, -0.2, 0.05, -0.3, 1.1, 0.0, -0.1, 0.2, 0.4, 0.8, 0.3});
  const SamplingGrid g = make_grid(m, {4, 4, 4});
  const auto c = g.coords.accessor<double, 4>();
  double worst = 0.0;
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) {
        const Eigen::Vector3d o(-1.0 + 2.0 * i / 3.0, -1.0 + 2.0 * j / 3.0, -1.0 + 2.0 * k / 3.0);
        const Eigen::Vector3d e = m.apply(o);
        for (int a = 0; a < 3; ++a) worst = std::max(worst, std::abs(c[k][j][i][a] - e[a]));
      }
  CHECK(worst < 1e-12);
}

TEST_CASE("translation offsets the lattice uniformly") {
  const AffineMatrix t = AffineMatrix::from_row_major({1, 0, 0, 0.25, 0, 1, 0, -0.5, 0, 0, 1, 0.125});
  const torch::Tensor diff = make_grid(t, {3, 4, 5}).coords - make_grid(AffineMatrix::identity(), {3, 4, 5}).coords;
  const torch::Tensor expected = torch::tensor({0.25, -0.5, 0.125}, torch::kFloat64);
  CHECK(((diff - expected).abs() < 1e-15).all().item<bool>());
}

TEST_CASE("trilinear sampling is exact on trilinear ramps") {
  const Shape3 s{6, 7, 8};
  const auto z = torch::arange(s.d, torch::kFloat64).view({s.d, 1, 1});
  const auto y = torch::arange(s.h, torch::kFloat64).view({1, s.h, 1});
  const auto x = torch::arange(s.w, torch::kFloat64).view({1, 1, s.w});
  const auto f = [](const torch::Tensor &x, const torch::Tensor &y, const torch::Tensor &z) {
    return 0.3 + 0.05 * x - 0.02 * y + 0.07 * z + 0.01 * x * y - 0.004 * y * z + 0.002 * x * y * z;
  };
  const torch::Tensor vol = f(x, y, z).expand({s.d, s.h, s.w}).contiguous().view({1, 1, s.d, s.h, s.w});
  const torch::Tensor g = uniform({1, 1, 1, 500, 3}, 4, torch::kFloat64) * 1.9 - 0.95;
  const torch::Tensor out = grid_sample(vol, g).view(-1);
  const torch::Tensor ix = (g.select(4, 0).view(-1) + 1.0) * 0.5 * (s.w - 1);
  const torch::Tensor iy = (g.select(4, 1).view(-1) + 1.0) * 0.5 * (s.h - 1);
  const torch::Tensor iz = (g.select(4, 2).view(-1) + 1.0) * 0.5 * (s.d - 1);
  CHECK(sct::testing::max_abs_diff(out, f(ix, iy, iz)) <= 1e-6);

  // Same check in float32 on a linear ramp.
  const torch::Tensor vol32 = (0.1 + 0.03 * x + 0.02 * y + 0.01 * z).expand({s.d, s.h, s.w}).to(torch::kFloat32).contiguous().view({1, 1, s.d, s.h, s.w});
  const torch::Tensor out32 = grid_sample(vol32, g.to(torch::kFloat32)).view(-1);
  CHECK(sct::testing::max_abs_diff(out32, 0.1 + 0.03 * ix + 0.02 * iy + 0.01 * iz) <= 1e-6);
}

TEST_CASE("corners outside the input read as zero") {
  const torch::Tensor one = torch::ones({1, 1, 4, 4, 4}, torch::kFloat64);
  const auto sample = [&](double x) {
    const torch::Tensor g = torch::tensor({x, 0.0, 0.0}, torch::kFloat64).view({1, 1, 1, 1, 3});
    return grid_sample(one, g).item<double>();
  };
  CHECK(sample(0.0) == 1.0);
  CHECK(sample(1.0) == 1.0);
  CHECK(sample(1.0 + 1.0 / 3.0) == doctest::Approx(0.5)); // half a voxel past the last centre
  CHECK(sample(2.0) == 0.0);
  CHECK(sample(-3.0) == 0.0);
}

TEST_CASE("agrees with the torch reference sampler") {
  const torch::Tensor v = uniform({2, 2, 5, 6, 7}, 8, torch::kFloat64);
  const torch::Tensor g = uniform({2, 3, 4, 5, 3}, 9, torch::kFloat64) * 2.6 - 1.3;
  const torch::Tensor ours = grid_sample(v, g);
  const torch::Tensor ref = torch::grid_sampler(v, g, 0, 0, true);
  CHECK(sct::testing::max_abs_diff(ours, ref) < 1e-12);

  const torch::Tensor theta = torch::tensor({{0.9, 0.1, 0.0, 0.05}, {-0.1, 1.0, 0.2, 0.0}, {0.0, 0.1, 1.1, -0.1}},
                                            torch::kFloat64).unsqueeze(0);
  const torch::Tensor ref_grid = torch::affine_grid_generator(theta, {1, 1, 5, 6, 7}, true);
  CHECK(sct::testing::max_abs_diff(affine_grid(theta, {5, 6, 7}), ref_grid) < 1e-12);
}

TEST_CASE("gradients w.r.t. coordinates and intensities match finite differences") {
  const Shape3 s{6, 6, 6};
  torch::Tensor v = uniform({1, 1, 6, 6, 6}, 10, torch::kFloat64).requires_grad_(true);
  torch::Tensor g = off_lattice_grid(1, 40, s, -0.8, 0.8, 11).requires_grad_(true);
  const torch::Tensor w = uniform({1, 1, 1, 1, 40}, 12, torch::kFloat64);
  const auto loss = [&] { return (grid_sample(v, g) * w).sum(); };
  const auto by_coord = sct::testing::check_gradient(loss, g, sct::testing::pick(g.numel(), 120, 1));
  CHECK(by_coord.relative_error < 1e-3);
  CHECK(by_coord.numeric_norm > 0.0);
  const auto by_value = sct::testing::check_gradient(loss, v, sct::testing::pick(v.numel(), 216, 2));
  CHECK(by_value.relative_error < 1e-3);
  CHECK(by_value.numeric_norm > 0.0);
}

TEST_CASE("sampling is linear in intensities") {
  const torch::Tensor a = uniform({1, 1, 6, 7, 8}, 13), b = uniform({1, 1, 6, 7, 8}, 14);
  const torch::Tensor g = uniform({1, 6, 7, 8, 3}, 15) * 2.2 - 1.1;
  const torch::Tensor lhs = grid_sample(2.0 * a - 0.5 * b, g);
  const torch::Tensor rhs = 2.0 * grid_sample(a, g) - 0.5 * grid_sample(b, g);
  CHECK(sct::testing::max_abs_diff(lhs, rhs) < 1e-6);
}

TEST_CASE("warping by m then its inverse restores smooth interiors") {
  PhantomSpec spec;
  spec.size = 32;
  const Volume smooth = gaussian_blur(generate_phantom(spec), 2.0);
  const AffineMatrix m = params_to_matrix(sample_affine(0.25, 21), smooth.shape());
  const Volume back = apply_affine(apply_affine(smooth, m), m.inverse());
  const torch::Tensor core = (back.data - smooth.data).abs().slice(0, 8, 24).slice(1, 8, 24).slice(2, 8, 24);
  CHECK(core.max().item<double>() < 0.05);
}
