#include "support.hpp"

#include <numbers>

#include "sct/affine.hpp"
#include "sct/errors.hpp"
#include "sct/phantom.hpp"

using namespace sct;

namespace {

// Voxel-centre cloud pushed through m explicitly: voxel -> normalized ->
// m -> voxel, then the mean Euclidean distance.
double cloud_displacement(const AffineMatrix &m, const Shape3 &s) {
  const double hx = 0.5 * (s.w - 1), hy = 0.5 * (s.h - 1), hz = 0.5 * (s.d - 1);
  double total = 0.0;
  for (int64_t k = 0; k < s.d; ++k)
    for (int64_t j = 0; j < s.h; ++j)
      for (int64_t i = 0; i < s.w; ++i) {
        const Eigen::Vector3d n((i - hx) / hx, (j - hy) / hy, (k - hz) / hz);
        const Eigen::Vector3d q = m.apply(n);
        const Eigen::Vector3d moved(q.x() * hx + hx, q.y() * hy + hy, q.z() * hz + hz);
        total += (moved - Eigen::Vector3d(double(i), double(j), double(k))).norm();
      }
  return total / static_cast<double>(s.numel());
}

constexpr std::array<double, 5> kAlphaLadder{0.0, 0.125, 0.25, 0.5, 1.0};

} // namespace

TEST_CASE("alpha 0 draws are the exact identity") {
  for (uint64_t seed : {0ull, 1ull, 42ull, 0xdeadbeefull}) {
    const AffineParams p = sample_affine(0.0, seed);
    CHECK((p.scale == std::array<double, 3>{1, 1, 1}));
    CHECK((p.rotation_deg == std::array<double, 3>{0, 0, 0}));
    CHECK((p.translation == std::array<double, 3>{0, 0, 0}));
    CHECK(params_to_matrix(p, {8, 8, 8}) == AffineMatrix::identity());
  }
  CHECK_THROWS_AS(sample_affine(-0.1, 0), InvalidArgument);
}

TEST_CASE("alpha 1 draws stay inside the uniform supports") {
  for (uint64_t seed = 0; seed < 2000; ++seed) {
    const AffineParams p = sample_affine(1.0, seed);
    for (int a = 0; a < 3; ++a) {
      CHECK(p.scale[a] >= 0.5);
      CHECK(p.scale[a] <= 1.5);
      CHECK(std::abs(p.rotation_deg[a]) <= 22.5);
      CHECK(std::abs(p.translation[a]) <= 0.05);
    }
  }
}

TEST_CASE("alpha 0.5 Monte-Carlo moments") {
  constexpr int n = 10000;
  std::array<double, 3> scale{}, rot{}, mag{};
  std::array<int, 3> positive{};
  for (int s = 0; s < n; ++s) {
    const AffineParams p = sample_affine(0.5, static_cast<uint64_t>(s));
    for (int a = 0; a < 3; ++a) {
      scale[a] += p.scale[a] / n;
      rot[a] += p.rotation_deg[a] / n;
      mag[a] += std::abs(p.translation[a]) / n;
      positive[a] += p.translation[a] > 0;
    }
  }
  for (int a = 0; a < 3; ++a) {
    CHECK(scale[a] == doctest::Approx(1.0).epsilon(0.01));
    CHECK(std::abs(rot[a]) < 0.2);
    // |t| ~ U(0, 0.025): mean 0.0125, sd of the mean 0.025/sqrt(12 n)
    CHECK(std::abs(mag[a] - 0.0125) < 5 * 0.025 / std::sqrt(12.0 * n));
    CHECK(std::abs(positive[a] - n / 2) < 5 * std::sqrt(n / 4.0));
  }
}

TEST_CASE("sampling is deterministic per seed") {
  const AffineParams a = sample_affine(0.7, 123), b = sample_affine(0.7, 123), c = sample_affine(0.7, 124);
  CHECK(a.scale == b.scale);
  CHECK(a.rotation_deg == b.rotation_deg);
  CHECK(a.translation == b.translation);
  CHECK(a.scale != c.scale);
}

TEST_CASE("Euler angles apply about x, then y, then z") {
  const std::array<double, 3> deg{90, 90, 0};
  const Eigen::Matrix3d r = euler_rotation(deg);
  // With no z angle the product is Ry * Rx.
  Eigen::Matrix3d rx, ry;
  rx << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  ry << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  CHECK((r - ry * rx).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((euler_rotation({0, 0, 30}) * Eigen::Vector3d::UnitZ() - Eigen::Vector3d::UnitZ()).norm() < 1e-12);
}

TEST_CASE("params_to_matrix against hand-composed matrices") {
  AffineParams p;
  SUBCASE("identity") { CHECK(params_to_matrix(p, {5, 6, 7}) == AffineMatrix::identity()); }
  SUBCASE("pure x translation in voxels") {
    p.translation = {3.0, 0.0, 0.0};
    const AffineMatrix m = params_to_matrix(p, {16, 16, 16}, {TranslationUnit::Voxel, {}});
    auto expected = AffineMatrix::identity().matrix();
    expected(0, 3) = 3.0 / 7.5;
    CHECK((m.matrix() - expected).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("scale (2,1,1)") {
    p.scale = {2.0, 1.0, 1.0};
    const AffineMatrix m = params_to_matrix(p, {9, 5, 7});
    AffineMatrix::Matrix expected;
    expected << 2, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0;
    CHECK((m.matrix() - expected).cwiseAbs().maxCoeff() < 1e-15);
    // Sampling at twice the coordinate shows the content at half its x extent.
    CHECK(m.apply({0.5, 0, 0}).x() == doctest::Approx(1.0));
  }
  SUBCASE("z rotation on an anisotropic grid") {
    p.rotation_deg = {0, 0, 90};
    // W = 5, H = 9: half extents hx = 2, hy = 4. M = H^-1 Rz H.
    const AffineMatrix m = params_to_matrix(p, {3, 9, 5});
    AffineMatrix::Matrix expected;
    expected << 0, -2, 0, 0, 0.5, 0, 0, 0, 0, 0, 1, 0;
    CHECK((m.matrix() - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("translation units") {
    p.translation = {0.05, 0.0, 0.0};
    const Shape3 s{8, 8, 11}; // hx = 5
    const double mm = params_to_matrix(p, s, {TranslationUnit::Millimeter, {1.0, 1.0, 0.5}}).matrix()(0, 3);
    const double vox = params_to_matrix(p, s, {TranslationUnit::Voxel, {1.0, 1.0, 0.5}}).matrix()(0, 3);
    const double frac = params_to_matrix(p, s, {TranslationUnit::FractionOfExtent, {}}).matrix()(0, 3);
    CHECK(mm == doctest::Approx(0.1 / 5.0));
    CHECK(vox == doctest::Approx(0.05 / 5.0));
    CHECK(frac == doctest::Approx(0.05 * 11 / 5.0));
  }
  CHECK_THROWS_AS(params_to_matrix(p, {1, 4, 4}), InvalidArgument);
}

TEST_CASE("mean displacement of simple transforms") {
  const Shape3 s{10, 12, 14};
  CHECK(mean_displacement(AffineMatrix::identity(), s) == 0.0);
  AffineParams p;
  p.translation = {0.0, 0.0, 3.0};
  CHECK(mean_displacement(params_to_matrix(p, s, {TranslationUnit::Voxel, {}}), s) == doctest::Approx(3.0).epsilon(1e-12));
  p.translation = {3.0, 4.0, 0.0};
  CHECK(std::abs(mean_displacement(params_to_matrix(p, s, {TranslationUnit::Voxel, {}}), s) - 5.0) < 1e-9);
}

TEST_CASE("mean displacement matches the coordinate-cloud oracle") {
  const Shape3 s{9, 12, 16};
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const AffineMatrix m = params_to_matrix(sample_affine(0.8, seed), s, {TranslationUnit::Voxel, {}});
    CHECK(std::abs(mean_displacement(m, s) - cloud_displacement(m, s)) < 1e-6);
  }
}

TEST_CASE("mean displacement grows strictly with alpha") {
  const Shape3 s{32, 32, 32};
  double previous = -1.0;
  for (double alpha : kAlphaLadder) {
    double mean = 0.0;
    for (uint64_t seed = 0; seed < 100; ++seed)
      mean += mean_displacement(params_to_matrix(sample_affine(alpha, seed), s), s) / 100.0;
    CHECK(mean > previous);
    previous = mean;
  }
}

TEST_CASE("apply_affine properties") {
  const Volume v = sct::testing::random_volume({12, 12, 12}, 3);
  CHECK(sct::testing::bit_equal(apply_affine(v, AffineMatrix::identity()).data, v.data));

  const AffineMatrix m = params_to_matrix(sample_affine(0.25, 7), v.shape());
  SUBCASE("constant volume stays constant wherever sampling stays inside") {
    const Volume c = make_volume(torch::full({12, 12, 12}, 0.6f));
    const Volume w = apply_affine(c, m);
    int inside = 0;
    for (int k = 0; k < 12; ++k)
      for (int j = 0; j < 12; ++j)
        for (int i = 0; i < 12; ++i) {
          const Eigen::Vector3d q = m.apply({(i - 5.5) / 5.5, (j - 5.5) / 5.5, (k - 5.5) / 5.5});
          if (q.cwiseAbs().maxCoeff() <= 1.0) {
            ++inside;
            CHECK(w.data[k][j][i].item<float>() == doctest::Approx(0.6f).epsilon(1e-6));
          }
        }
    CHECK(inside > 500);
  }
  SUBCASE("linear in intensities") {
    const Volume v2 = sct::testing::random_volume({12, 12, 12}, 4);
    const Volume mix = v.with_data(0.3f * v.data + 0.7f * v2.data);
    const torch::Tensor lhs = apply_affine(mix, m).data;
    const torch::Tensor rhs = 0.3f * apply_affine(v, m).data + 0.7f * apply_affine(v2, m).data;
    CHECK(sct::testing::max_abs_diff(lhs, rhs) < 1e-5);
  }
  SUBCASE("integer translation equals an index shift with a zero band") {
    const Volume r = sct::testing::random_volume({16, 16, 16}, 11);
    AffineParams p;
    p.translation = {0.0, 0.0, 3.0};
    const Volume w = apply_affine(r, params_to_matrix(p, r.shape(), {TranslationUnit::Voxel, {}}));
    torch::Tensor expected = torch::zeros_like(r.data);
    expected.slice(0, 0, 13).copy_(r.data.slice(0, 3, 16));
    CHECK(sct::testing::bit_equal(w.data, expected));
  }
}

TEST_CASE("misaligned pairs") {
  PhantomSpec spec;
  spec.size = 16;
  const Volume ct = generate_phantom(spec);
  const MisalignedPair zero = make_misaligned_pair(ct, 0.0, 5);
  CHECK(zero.truth == AffineMatrix::identity());
  CHECK(sct::testing::bit_equal(zero.u_ct.data, ct.data));

  const MisalignedPair a = make_misaligned_pair(ct, 0.5, 5), b = make_misaligned_pair(ct, 0.5, 5);
  CHECK(a.truth == b.truth);
  CHECK(sct::testing::bit_equal(a.u_ct.data, b.u_ct.data));
  CHECK(sct::testing::bit_equal(apply_affine(ct, a.truth).data, a.u_ct.data));

  double lo = 0.0, hi = 0.0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    lo += mean_displacement(make_misaligned_pair(ct, 0.125, seed).truth, ct.shape());
    hi += mean_displacement(make_misaligned_pair(ct, 1.0, seed).truth, ct.shape());
  }
  CHECK(hi > lo);
}

TEST_CASE("matrix algebra and JSON") {
  const AffineMatrix m = params_to_matrix(sample_affine(0.9, 2), {10, 10, 10}, {TranslationUnit::Voxel, {}});
  const AffineMatrix round = m.compose(m.inverse());
  CHECK((round.matrix() - AffineMatrix::identity().matrix()).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::Vector3d p(0.1, -0.4, 0.7);
  const AffineMatrix n = AffineMatrix::from_row_major({1, 0.1, 0, 0.2, 0, 1, 0, 0, 0, 0, 2, 0.3});
  CHECK((m.compose(n).apply(p) - m.apply(n.apply(p))).norm() < 1e-12);

  sct::testing::TempDir dir("affine");
  save_affine(m, dir / "m.json");
  CHECK(load_affine(dir / "m.json") == m);
  CHECK(affine_from_json(to_json(m)) == m);
  CHECK(AffineMatrix::from_tensor(m.to_tensor(torch::kFloat64)) == m);
  CHECK_THROWS(affine_from_json(nlohmann::json::array({1, 2, 3})));
  for (auto u : {TranslationUnit::Millimeter, TranslationUnit::Voxel, TranslationUnit::FractionOfExtent})
    CHECK(parse_translation_unit(to_string(u)) == u);
}
