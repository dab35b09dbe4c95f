#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "sct/volume.hpp"

namespace sct {

/// Abdominal-like stand-in for a paired CT collection.
struct PhantomSpec {
  int64_t size = 32;
  int n_organs = 4;
  std::array<double, 2> organ_intensity_range{0.25, 0.75};
  double shell_intensity = 0.9;
  bool shell = true;
  uint64_t seed = 0;

  void validate() const;
};

/// Intraoperative quality knob; fewer "projections" means a worse CBCT.
class QualityLevel {
public:
  static constexpr std::array<int, 4> kLadder{32, 64, 128, 256};

  /// Throws InvalidArgument when q is not on the ladder.
  explicit QualityLevel(int q);

  /// Artifact-free sentinel: degrade_to_cbct becomes the identity.
  static QualityLevel ideal();

  int q() const { return q_; }
  bool is_ideal() const { return q_ == std::numeric_limits<int>::max(); }

  double blur_sigma() const;      // voxels
  double noise_sigma() const;     // normalized intensity, ∝ 1/sqrt(q)
  double streak_amplitude() const; // normalized intensity, ∝ 1/q

private:
  struct IdealTag {};
  explicit QualityLevel(IdealTag) : q_(std::numeric_limits<int>::max()) {}
  int q_;
};

/// Body ellipsoid with a bone-like shell, `n_organs` ellipsoidal inclusions
/// and a smooth soft-tissue background. NORMALIZED CT, deterministic per seed.
Volume generate_phantom(const PhantomSpec &spec);

/// Blur, Gaussian noise and per-slice sinusoidal streaks, clamped to [0, 1].
Volume degrade_to_cbct(const Volume &ct, const QualityLevel &q, uint64_t seed);

/// Separable Gaussian smoothing with replicate padding; sigma in voxels.
Volume gaussian_blur(const Volume &v, double sigma);

} // namespace sct
