#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <torch/torch.h>

namespace sct {

enum class Modality { CT, CBCT, SCT };
enum class IntensityDomain { HU, Normalized, Logit };

std::string to_string(Modality m);
std::string to_string(IntensityDomain d);
Modality parse_modality(std::string_view s);
IntensityDomain parse_domain(std::string_view s);

/// Grid extent in voxels, depth-major (D, H, W). W is the fastest axis in memory.
struct Shape3 {
  int64_t d = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t numel() const { return d * h * w; }
  std::array<int64_t, 3> as_array() const { return {d, h, w}; }
  bool operator==(const Shape3 &) const = default;
};

std::string to_string(const Shape3 &s);

/// Physical voxel size in millimetres along (D, H, W).
struct Spacing {
  double d = 1.0;
  double h = 1.0;
  double w = 1.0;
  bool operator==(const Spacing &) const = default;
};

/// A single-channel scalar voxel grid.
///
/// `data` is a contiguous float32 tensor of shape (D, H, W). Channels only
/// appear when volumes are stacked into network inputs.
struct Volume {
  torch::Tensor data;
  Spacing spacing;
  Modality modality = Modality::CT;
  IntensityDomain domain = IntensityDomain::Normalized;

  Shape3 shape() const;

  /// Throws InvalidArgument when any invariant is broken: non-finite voxels,
  /// non-positive spacing, or NORMALIZED values outside [0, 1].
  void validate() const;

  Volume with_data(torch::Tensor new_data) const;
};

Volume make_volume(torch::Tensor data, Spacing spacing = {}, Modality modality = Modality::CT,
                   IntensityDomain domain = IntensityDomain::Normalized);

struct NormalizationSpec {
  double hu_min = -1000.0;
  double hu_max = 1000.0;
  void validate() const;
};

enum class VolumeFormat { Nifti, Raw };

/// `.nii` / `.nii.gz` map to NIfTI, everything else to raw + sidecar.
VolumeFormat format_from_path(const std::filesystem::path &path);

/// Raw volumes keep their metadata in `<stem>.json` next to the payload.
std::filesystem::path sidecar_path(const std::filesystem::path &raw_path);

struct LoadOptions {
  std::optional<Modality> modality;
  std::optional<IntensityDomain> domain;
};

Volume load_volume(const std::filesystem::path &path, VolumeFormat format, const LoadOptions &opts = {});
Volume load_volume(const std::filesystem::path &path, const LoadOptions &opts = {});

void save_volume(const Volume &v, const std::filesystem::path &path, VolumeFormat format);
void save_volume(const Volume &v, const std::filesystem::path &path);

/// Clip HU to [hu_min, hu_max] and map affinely onto [0, 1].
Volume normalize(const Volume &v, const NormalizationSpec &spec = {});

struct Downscaled {
  Volume volume;
  /// Voxels appended at the high end of each axis (D, H, W) before averaging.
  std::array<int64_t, 3> padding{0, 0, 0};
};

/// Block-mean downscaling by an integer factor. Axes that are not divisible
/// are padded at the far end with the volume minimum.
Downscaled downscale(const Volume &v, int64_t factor);

} // namespace sct
