#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include <Eigen/Dense>

#include "json.hpp"
#include "sct/volume.hpp"

namespace sct {

// Coordinate convention shared by misalignment, sampling grids and the STN:
// points are (x, y, z) = (W, H, D) axes, normalized so that -1 and +1 sit on
// the centres of the first and last voxel along each axis.

/// 3x4 affine acting on normalized coordinates. Maps an output-volume point to
/// the input-volume point it is sampled from (backward warping).
class AffineMatrix {
public:
  using Matrix = Eigen::Matrix<double, 3, 4, Eigen::RowMajor>;

  AffineMatrix() : m_(identity().m_) {}
  explicit AffineMatrix(const Matrix &m) : m_(m) {}

  static AffineMatrix identity();
  static AffineMatrix from_row_major(const std::array<double, 12> &values);
  static AffineMatrix from_tensor(const torch::Tensor &theta); // (3,4) or (1,3,4)

  const Matrix &matrix() const { return m_; }
  Eigen::Matrix4d homogeneous() const;
  std::array<double, 12> row_major() const;

  /// (3, 4) tensor in the requested dtype.
  torch::Tensor to_tensor(torch::Dtype dtype = torch::kFloat32) const;

  Eigen::Vector3d apply(const Eigen::Vector3d &p) const { return m_.leftCols<3>() * p + m_.col(3); }

  /// this ∘ other: apply `other` first, then this.
  AffineMatrix compose(const AffineMatrix &other) const;
  AffineMatrix inverse() const;

  bool is_finite() const { return m_.allFinite(); }
  bool operator==(const AffineMatrix &o) const { return m_ == o.m_; }

private:
  Matrix m_;
};

/// JSON form is a 3x4 row-major nested array.
nlohmann::json to_json(const AffineMatrix &m);
AffineMatrix affine_from_json(const nlohmann::json &j);
void save_affine(const AffineMatrix &m, const std::filesystem::path &path);
AffineMatrix load_affine(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Synthetic misalignment

enum class TranslationUnit { Millimeter, Voxel, FractionOfExtent };

TranslationUnit parse_translation_unit(std::string_view s);
std::string to_string(TranslationUnit u);

/// Scale, rotation and translation per (x, y, z) axis.
struct AffineParams {
  std::array<double, 3> scale{1.0, 1.0, 1.0};
  std::array<double, 3> rotation_deg{0.0, 0.0, 0.0};
  std::array<double, 3> translation{0.0, 0.0, 0.0};
  double alpha_a = 0.0;
};

/// Independent per-axis draws:
///   scale       ~ U(1 - 0.5 a, 1 + 0.5 a)
///   rotation    ~ U(-22.5 a, 22.5 a) degrees
///   translation ~ ±U(0, 0.05 a), sign drawn independently per axis
AffineParams sample_affine(double alpha_a, uint64_t seed);

/// Rotation matrix for Euler angles applied about x, then y, then z.
Eigen::Matrix3d euler_rotation(const std::array<double, 3> &degrees);

struct MatrixOptions {
  TranslationUnit translation_unit = TranslationUnit::Millimeter;
  Spacing spacing{};
};

/// translate ∘ rotate ∘ scale about the volume centre, built in voxel space
/// and re-expressed in normalized coordinates for the given grid.
AffineMatrix params_to_matrix(const AffineParams &p, const Shape3 &shape, const MatrixOptions &opts = {});

/// Resample `v` at m·(output coordinate) with trilinear interpolation; samples
/// falling outside the input grid read as 0.
Volume apply_affine(const Volume &v, const AffineMatrix &m);

/// Mean Euclidean distance, in voxels, between each voxel centre and its image under m.
double mean_displacement(const AffineMatrix &m, const Shape3 &shape);

struct MisalignedPair {
  Volume u_ct;
  AffineMatrix truth;
  AffineParams params;
};

/// Translation units are resolved against `ct.spacing`.
MisalignedPair make_misaligned_pair(const Volume &ct, double alpha_a, uint64_t seed,
                                    TranslationUnit unit = TranslationUnit::Millimeter);

/// Normalized-to-voxel half extents (n - 1) / 2 per (x, y, z).
Eigen::Vector3d half_extent(const Shape3 &shape);

} // namespace sct
