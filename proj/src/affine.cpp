#include "sct/affine.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "sct/errors.hpp"
#include "sct/warp.hpp"

namespace sct {

using nlohmann::json;

AffineMatrix AffineMatrix::identity() {
  Matrix m = Matrix::Zero();
  m.leftCols<3>().setIdentity();
  return AffineMatrix(m);
}

AffineMatrix AffineMatrix::from_row_major(const std::array<double, 12> &values) {
  Matrix m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = values[static_cast<size_t>(r * 4 + c)];
  return AffineMatrix(m);
}

AffineMatrix AffineMatrix::from_tensor(const torch::Tensor &theta) {
  const torch::Tensor t = theta.detach().to(torch::kFloat64).contiguous().reshape({12});
  std::array<double, 12> values{};
  for (int i = 0; i < 12; ++i) values[static_cast<size_t>(i)] = t[i].item<double>();
  return from_row_major(values);
}

Eigen::Matrix4d AffineMatrix::homogeneous() const {
  Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
  h.topRows<3>() = m_;
  return h;
}

std::array<double, 12> AffineMatrix::row_major() const {
  std::array<double, 12> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) out[static_cast<size_t>(r * 4 + c)] = m_(r, c);
  return out;
}

torch::Tensor AffineMatrix::to_tensor(torch::Dtype dtype) const {
  const auto values = row_major();
  return torch::tensor(std::vector<double>(values.begin(), values.end()), torch::kFloat64).view({3, 4}).to(dtype);
}

AffineMatrix AffineMatrix::compose(const AffineMatrix &other) const {
  const Eigen::Matrix4d h = homogeneous() * other.homogeneous();
  return AffineMatrix(Matrix(h.topRows<3>()));
}

AffineMatrix AffineMatrix::inverse() const {
  const Eigen::Matrix4d h = homogeneous().inverse();
  return AffineMatrix(Matrix(h.topRows<3>()));
}

json to_json(const AffineMatrix &m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) {
    json row = json::array();
    for (int c = 0; c < 4; ++c) row.push_back(m.matrix()(r, c));
    rows.push_back(row);
  }
  return rows;
}

AffineMatrix affine_from_json(const json &j) {
  if (!j.is_array() || j.size() != 3) throw DataError("affine JSON must be a 3x4 array");
  std::array<double, 12> values{};
  for (size_t r = 0; r < 3; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) throw DataError("affine JSON must be a 3x4 array");
    for (size_t c = 0; c < 4; ++c) values[r * 4 + c] = j[r][c].get<double>();
  }
  AffineMatrix m = AffineMatrix::from_row_major(values);
  if (!m.is_finite()) throw DataError("affine JSON contains non-finite entries");
  return m;
}

void save_affine(const AffineMatrix &m, const std::filesystem::path &path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_json(m).dump() << "\n";
}

AffineMatrix load_affine(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return affine_from_json(json::parse(is));
  } catch (const json::exception &e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

TranslationUnit parse_translation_unit(std::string_view s) {
  if (s == "mm") return TranslationUnit::Millimeter;
  if (s == "voxels") return TranslationUnit::Voxel;
  if (s == "fraction") return TranslationUnit::FractionOfExtent;
  throw ConfigError("unknown translation unit '" + std::string(s) + "' (expected mm|voxels|fraction)");
}

std::string to_string(TranslationUnit u) {
  switch (u) {
  case TranslationUnit::Millimeter: return "mm";
  case TranslationUnit::Voxel: return "voxels";
  case TranslationUnit::FractionOfExtent: return "fraction";
  }
  return "mm";
}

namespace {

// 53-bit uniform in [0, 1); avoids implementation-defined std distributions so
// streams are identical across standard libraries.
double canonical(std::mt19937_64 &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64 &rng, double lo, double hi) { return lo + (hi - lo) * canonical(rng); }

} // namespace

AffineParams sample_affine(double alpha_a, uint64_t seed) {
  if (!(alpha_a >= 0.0) || !std::isfinite(alpha_a)) throw InvalidArgument("alpha_a must be a finite value >= 0");
  std::mt19937_64 rng(seed);
  AffineParams p;
  p.alpha_a = alpha_a;
  for (auto &s : p.scale) s = uniform(rng, 1.0 - 0.5 * alpha_a, 1.0 + 0.5 * alpha_a);
  for (auto &r : p.rotation_deg) r = uniform(rng, -22.5 * alpha_a, 22.5 * alpha_a);
  for (auto &t : p.translation) t = uniform(rng, 0.0, 0.05 * alpha_a);
  for (auto &t : p.translation)
    if (rng() & 1u) t = -t;
  if (alpha_a == 0.0) {
    // Collapse signed zeros so the degenerate draw is the literal identity.
    p.rotation_deg = {0.0, 0.0, 0.0};
    p.translation = {0.0, 0.0, 0.0};
  }
  return p;
}

Eigen::Matrix3d euler_rotation(const std::array<double, 3> &degrees) {
  const double k = std::numbers::pi / 180.0;
  const Eigen::Matrix3d rx = Eigen::AngleAxisd(degrees[0] * k, Eigen::Vector3d::UnitX()).toRotationMatrix();
  const Eigen::Matrix3d ry = Eigen::AngleAxisd(degrees[1] * k, Eigen::Vector3d::UnitY()).toRotationMatrix();
  const Eigen::Matrix3d rz = Eigen::AngleAxisd(degrees[2] * k, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return rz * ry * rx;
}

Eigen::Vector3d half_extent(const Shape3 &shape) {
  return {0.5 * static_cast<double>(shape.w - 1), 0.5 * static_cast<double>(shape.h - 1),
          0.5 * static_cast<double>(shape.d - 1)};
}

AffineMatrix params_to_matrix(const AffineParams &p, const Shape3 &shape, const MatrixOptions &opts) {
  if (shape.d < 2 || shape.h < 2 || shape.w < 2) throw InvalidArgument("params_to_matrix needs >= 2 voxels per axis");
  const Eigen::Vector3d half = half_extent(shape);

  // Translation in voxels along (x, y, z).
  Eigen::Vector3d t(p.translation[0], p.translation[1], p.translation[2]);
  switch (opts.translation_unit) {
  case TranslationUnit::Millimeter:
    t = t.cwiseQuotient(Eigen::Vector3d(opts.spacing.w, opts.spacing.h, opts.spacing.d));
    break;
  case TranslationUnit::Voxel: break;
  case TranslationUnit::FractionOfExtent:
    t = t.cwiseProduct(Eigen::Vector3d(static_cast<double>(shape.w), static_cast<double>(shape.h),
                                       static_cast<double>(shape.d)));
    break;
  }

  const Eigen::Matrix3d rs =
      euler_rotation(p.rotation_deg) * Eigen::Vector3d(p.scale[0], p.scale[1], p.scale[2]).asDiagonal();
  // voxel: x' = c + t + R S (x - c); normalized: x = c + H x_n.
  AffineMatrix::Matrix m;
  m.leftCols<3>() = half.cwiseInverse().asDiagonal() * rs * half.asDiagonal();
  m.col(3) = t.cwiseQuotient(half);
  return AffineMatrix(m);
}

Volume apply_affine(const Volume &v, const AffineMatrix &m) {
  if (!m.is_finite()) throw InvalidArgument("apply_affine: non-finite matrix");
  return grid_sample(v, make_grid(m, v.shape()));
}

double mean_displacement(const AffineMatrix &m, const Shape3 &shape) {
  if (shape.numel() <= 0) throw InvalidArgument("mean_displacement: empty shape");
  const Eigen::Vector3d half = half_extent(shape);
  const Eigen::Vector3d inv_half(shape.w > 1 ? 1.0 / half.x() : 0.0, shape.h > 1 ? 1.0 / half.y() : 0.0,
                                 shape.d > 1 ? 1.0 / half.z() : 0.0);
  // Displacement is affine in the voxel coordinate: disp(p) = H (A - I) H^-1 (p - c) + H b.
  const Eigen::Matrix3d a = half.asDiagonal() * (m.matrix().leftCols<3>() - Eigen::Matrix3d::Identity()) *
                            inv_half.asDiagonal();
  const Eigen::Vector3d b = half.cwiseProduct(m.matrix().col(3));
  double total = 0.0;
  for (int64_t k = 0; k < shape.d; ++k) {
    for (int64_t j = 0; j < shape.h; ++j) {
      const Eigen::Vector3d row = a.col(1) * (static_cast<double>(j) - half.y()) +
                                  a.col(2) * (static_cast<double>(k) - half.z()) + b;
      for (int64_t i = 0; i < shape.w; ++i) total += (row + a.col(0) * (static_cast<double>(i) - half.x())).norm();
    }
  }
  return total / static_cast<double>(shape.numel());
}

MisalignedPair make_misaligned_pair(const Volume &ct, double alpha_a, uint64_t seed, TranslationUnit unit) {
  MisalignedPair out;
  out.params = sample_affine(alpha_a, seed);
  out.truth = params_to_matrix(out.params, ct.shape(), {unit, ct.spacing});
  out.u_ct = apply_affine(ct, out.truth);
  return out;
}

} // namespace sct
