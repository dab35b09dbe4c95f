#include "sct/volume.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "json.hpp"
#include <zlib.h>

#include "sct/errors.hpp"

namespace sct {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Modality m) {
  switch (m) {
  case Modality::CT: return "CT";
  case Modality::CBCT: return "CBCT";
  case Modality::SCT: return "SCT";
  }
  return "CT";
}

std::string to_string(IntensityDomain d) {
  switch (d) {
  case IntensityDomain::HU: return "HU";
  case IntensityDomain::Normalized: return "NORMALIZED";
  case IntensityDomain::Logit: return "LOGIT";
  }
  return "NORMALIZED";
}

Modality parse_modality(std::string_view s) {
  if (s == "CT") return Modality::CT;
  if (s == "CBCT") return Modality::CBCT;
  if (s == "SCT") return Modality::SCT;
  throw MalformedHeader("unknown modality '" + std::string(s) + "'");
}

IntensityDomain parse_domain(std::string_view s) {
  if (s == "HU") return IntensityDomain::HU;
  if (s == "NORMALIZED") return IntensityDomain::Normalized;
  if (s == "LOGIT") return IntensityDomain::Logit;
  throw MalformedHeader("unknown intensity domain '" + std::string(s) + "'");
}

std::string to_string(const Shape3 &s) {
  std::ostringstream os;
  os << s.d << "x" << s.h << "x" << s.w;
  return os.str();
}

Shape3 Volume::shape() const {
  if (!data.defined() || data.dim() != 3) return {};
  return {data.size(0), data.size(1), data.size(2)};
}

void Volume::validate() const {
  if (!data.defined() || data.dim() != 3)
    throw InvalidArgument("volume data must be a 3D tensor");
  if (data.scalar_type() != torch::kFloat32)
    throw InvalidArgument("volume data must be float32");
  if (!(spacing.d > 0 && spacing.h > 0 && spacing.w > 0))
    throw InvalidArgument("volume spacing must be strictly positive");
  if (!torch::isfinite(data).all().item<bool>())
    throw InvalidArgument("volume contains non-finite voxels");
  if (domain == IntensityDomain::Normalized && data.numel() > 0) {
    const float lo = data.min().item<float>();
    const float hi = data.max().item<float>();
    if (lo < 0.0f || hi > 1.0f)
      throw InvalidArgument("NORMALIZED volume has values outside [0,1]");
  }
}

Volume Volume::with_data(torch::Tensor new_data) const {
  Volume out = *this;
  out.data = std::move(new_data);
  return out;
}

Volume make_volume(torch::Tensor data, Spacing spacing, Modality modality, IntensityDomain domain) {
  Volume v;
  v.data = data.to(torch::kFloat32).contiguous();
  v.spacing = spacing;
  v.modality = modality;
  v.domain = domain;
  return v;
}

void NormalizationSpec::validate() const {
  if (!(hu_min < hu_max)) throw InvalidArgument("normalization requires hu_min < hu_max");
}

VolumeFormat format_from_path(const fs::path &path) {
  const std::string name = path.filename().string();
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".nii") || ends_with(".nii.gz")) return VolumeFormat::Nifti;
  return VolumeFormat::Raw;
}

fs::path sidecar_path(const fs::path &raw_path) {
  fs::path p = raw_path;
  p.replace_extension(".json");
  return p;
}

namespace {

// ---------------------------------------------------------------------------
// NIfTI-1 single-file header, accessed by byte offset.

constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiVoxOffset = 352;

enum NiftiType : int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
};

class HeaderView {
public:
  HeaderView(std::vector<unsigned char> &bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T> T get(size_t offset) const {
    T value;
    unsigned char tmp[sizeof(T)];
    std::memcpy(tmp, bytes_.data() + offset, sizeof(T));
    if (swap_) std::reverse(tmp, tmp + sizeof(T));
    std::memcpy(&value, tmp, sizeof(T));
    return value;
  }

  template <typename T> void put(size_t offset, T value) {
    std::memcpy(bytes_.data() + offset, &value, sizeof(T));
  }

private:
  std::vector<unsigned char> &bytes_;
  bool swap_;
};

std::vector<unsigned char> read_gz_or_plain(const fs::path &path) {
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> out;
  std::vector<unsigned char> chunk(1 << 16);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      gzclose(f);
      throw IoError("read failure in " + path.string());
    }
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return out;
}

void write_bytes(const fs::path &path, const void *data, size_t size, bool compress) {
  if (compress) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw IoError("cannot write " + path.string());
    const auto *p = static_cast<const char *>(data);
    size_t left = size;
    while (left > 0) {
      const unsigned n = static_cast<unsigned>(std::min<size_t>(left, 1u << 30));
      if (gzwrite(f, p, n) != static_cast<int>(n)) {
        gzclose(f);
        throw IoError("write failure in " + path.string());
      }
      p += n;
      left -= n;
    }
    if (gzclose(f) != Z_OK) throw IoError("write failure in " + path.string());
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(static_cast<const char *>(data), static_cast<std::streamsize>(size));
  if (!os) throw IoError("write failure in " + path.string());
}

bool is_gz(const fs::path &path) { return path.extension() == ".gz"; }

template <typename T> torch::Tensor decode_payload(const unsigned char *p, int64_t n, bool swap) {
  std::vector<float> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    unsigned char tmp[sizeof(T)];
    std::memcpy(tmp, p + i * sizeof(T), sizeof(T));
    if (swap) std::reverse(tmp, tmp + sizeof(T));
    T value;
    std::memcpy(&value, tmp, sizeof(T));
    out[static_cast<size_t>(i)] = static_cast<float>(value);
  }
  return torch::from_blob(out.data(), {n}, torch::kFloat32).clone();
}

int bytes_per_voxel(int16_t datatype) {
  switch (datatype) {
  case kUInt8:
  case kInt8: return 1;
  case kInt16:
  case kUInt16: return 2;
  case kInt32:
  case kFloat32: return 4;
  case kFloat64: return 8;
  default: return 0;
  }
}

// Metadata we stash in the 80-byte descrip field: "sct:modality=CT;domain=NORMALIZED".
void parse_descrip(const std::string &descrip, Volume &v) {
  if (descrip.rfind("sct:", 0) != 0) return;
  std::istringstream is(descrip.substr(4));
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key == "modality") v.modality = parse_modality(value);
    if (key == "domain") v.domain = parse_domain(value);
  }
}

Volume load_nifti(const fs::path &path) {
  std::vector<unsigned char> bytes = read_gz_or_plain(path);
  if (bytes.size() < static_cast<size_t>(kNiftiHeaderSize))
    throw MalformedHeader(path.string() + ": file shorter than a NIfTI-1 header");

  int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swap = false;
  if (sizeof_hdr != kNiftiHeaderSize) {
    unsigned char tmp[4];
    std::memcpy(tmp, bytes.data(), 4);
    std::reverse(tmp, tmp + 4);
    std::memcpy(&sizeof_hdr, tmp, 4);
    if (sizeof_hdr != kNiftiHeaderSize) throw MalformedHeader(path.string() + ": bad sizeof_hdr");
    swap = true;
  }
  HeaderView hdr(bytes, swap);
  if (std::memcmp(bytes.data() + 344, "n+1", 4) != 0)
    throw MalformedHeader(path.string() + ": missing n+1 magic (only single-file NIfTI-1 is supported)");

  const int16_t ndim = hdr.get<int16_t>(40);
  if (ndim < 3 || ndim > 7) throw MalformedHeader(path.string() + ": unsupported dim[0]");
  int64_t dims[8] = {0, 1, 1, 1, 1, 1, 1, 1};
  for (int i = 1; i <= ndim; ++i) {
    dims[i] = hdr.get<int16_t>(40 + 2 * i);
    if (dims[i] < 1) throw MalformedHeader(path.string() + ": non-positive dimension");
  }
  for (int i = 4; i <= ndim; ++i)
    if (dims[i] != 1) throw MalformedHeader(path.string() + ": only single 3D volumes are supported");

  const int16_t datatype = hdr.get<int16_t>(70);
  const int bpv = bytes_per_voxel(datatype);
  if (bpv == 0) throw UnsupportedDatatype(path.string() + ": NIfTI datatype " + std::to_string(datatype));

  const float vox_offset_f = hdr.get<float>(108);
  const auto vox_offset = static_cast<int64_t>(vox_offset_f);
  if (vox_offset < kNiftiHeaderSize) throw MalformedHeader(path.string() + ": bad vox_offset");

  const int64_t n = dims[1] * dims[2] * dims[3];
  const int64_t payload = static_cast<int64_t>(bytes.size()) - vox_offset;
  if (payload != n * bpv)
    throw DimensionMismatch(path.string() + ": header declares " + std::to_string(n * bpv) +
                            " payload bytes, file holds " + std::to_string(std::max<int64_t>(payload, 0)));

  const unsigned char *p = bytes.data() + vox_offset;
  torch::Tensor flat;
  switch (datatype) {
  case kUInt8: flat = decode_payload<uint8_t>(p, n, swap); break;
  case kInt8: flat = decode_payload<int8_t>(p, n, swap); break;
  case kInt16: flat = decode_payload<int16_t>(p, n, swap); break;
  case kUInt16: flat = decode_payload<uint16_t>(p, n, swap); break;
  case kInt32: flat = decode_payload<int32_t>(p, n, swap); break;
  case kFloat32: flat = decode_payload<float>(p, n, swap); break;
  case kFloat64: flat = decode_payload<double>(p, n, swap); break;
  default: throw UnsupportedDatatype(path.string());
  }

  const float slope = hdr.get<float>(112);
  const float inter = hdr.get<float>(116);
  if (slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f))
    flat = flat * slope + inter;

  Volume v;
  v.data = flat.reshape({dims[3], dims[2], dims[1]}).contiguous();
  v.spacing = {std::abs(hdr.get<float>(76 + 4 * 3)), std::abs(hdr.get<float>(76 + 4 * 2)),
               std::abs(hdr.get<float>(76 + 4 * 1))};
  if (!(v.spacing.d > 0 && v.spacing.h > 0 && v.spacing.w > 0))
    throw MalformedHeader(path.string() + ": non-positive pixdim");

  char descrip[81] = {};
  std::memcpy(descrip, bytes.data() + 148, 80);
  parse_descrip(descrip, v);
  return v;
}

void save_nifti(const Volume &v, const fs::path &path) {
  const Shape3 s = v.shape();
  const torch::Tensor data = v.data.to(torch::kFloat32).contiguous();
  std::vector<unsigned char> bytes(kNiftiVoxOffset + static_cast<size_t>(s.numel()) * 4, 0);
  HeaderView hdr(bytes, false);
  hdr.put<int32_t>(0, kNiftiHeaderSize);
  const int16_t dims[8] = {3, static_cast<int16_t>(s.w), static_cast<int16_t>(s.h), static_cast<int16_t>(s.d), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) hdr.put<int16_t>(40 + 2 * i, dims[i]);
  hdr.put<int16_t>(70, kFloat32);
  hdr.put<int16_t>(72, 32);
  const float pixdim[8] = {1.0f, static_cast<float>(v.spacing.w), static_cast<float>(v.spacing.h),
                           static_cast<float>(v.spacing.d), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) hdr.put<float>(76 + 4 * i, pixdim[i]);
  hdr.put<float>(108, static_cast<float>(kNiftiVoxOffset));
  hdr.put<float>(112, 1.0f);
  hdr.put<float>(116, 0.0f);
  hdr.put<char>(123, 2); // NIFTI_UNITS_MM
  const std::string descrip = "sct:modality=" + to_string(v.modality) + ";domain=" + to_string(v.domain);
  std::memcpy(bytes.data() + 148, descrip.data(), std::min<size_t>(descrip.size(), 79));
  hdr.put<int16_t>(252, 0);
  hdr.put<int16_t>(254, 1); // sform: scanner-anchored diagonal
  hdr.put<float>(280, pixdim[1]);
  hdr.put<float>(296 + 4, pixdim[2]);
  hdr.put<float>(312 + 8, pixdim[3]);
  std::memcpy(bytes.data() + 344, "n+1\0", 4);
  std::memcpy(bytes.data() + kNiftiVoxOffset, data.data_ptr<float>(), static_cast<size_t>(s.numel()) * 4);
  write_bytes(path, bytes.data(), bytes.size(), is_gz(path));
}

// ---------------------------------------------------------------------------
// Raw little-endian float32 payload with a JSON sidecar.

Volume load_raw(const fs::path &path) {
  const fs::path meta_path = sidecar_path(path);
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  if (!fs::exists(meta_path)) throw IoError("missing sidecar " + meta_path.string());

  json meta;
  try {
    std::ifstream ms(meta_path);
    meta = json::parse(ms);
  } catch (const json::exception &e) {
    throw MalformedHeader(meta_path.string() + ": " + e.what());
  }

  Volume v;
  try {
    const auto shape = meta.at("shape").get<std::vector<int64_t>>();
    if (shape.size() != 3) throw MalformedHeader(meta_path.string() + ": shape must have 3 entries");
    for (auto e : shape)
      if (e < 1) throw MalformedHeader(meta_path.string() + ": non-positive shape entry");
    const auto spacing = meta.at("spacing").get<std::vector<double>>();
    if (spacing.size() != 3) throw MalformedHeader(meta_path.string() + ": spacing must have 3 entries");
    const std::string dtype = meta.value("dtype", "float32");
    if (dtype != "float32") throw UnsupportedDatatype(meta_path.string() + ": dtype " + dtype);

    const int64_t n = shape[0] * shape[1] * shape[2];
    const auto size = static_cast<int64_t>(fs::file_size(path));
    if (size != n * 4)
      throw DimensionMismatch(path.string() + ": sidecar declares " + std::to_string(n) + " voxels, payload holds " +
                              std::to_string(size / 4));
    std::vector<float> buf(static_cast<size_t>(n));
    std::ifstream is(path, std::ios::binary);
    is.read(reinterpret_cast<char *>(buf.data()), n * 4);
    if (!is) throw IoError("read failure in " + path.string());
    v.data = torch::from_blob(buf.data(), {shape[0], shape[1], shape[2]}, torch::kFloat32).clone();
    v.spacing = {spacing[0], spacing[1], spacing[2]};
    if (!(v.spacing.d > 0 && v.spacing.h > 0 && v.spacing.w > 0))
      throw MalformedHeader(meta_path.string() + ": non-positive spacing");
    if (meta.contains("modality")) v.modality = parse_modality(meta["modality"].get<std::string>());
    if (meta.contains("intensity_domain")) v.domain = parse_domain(meta["intensity_domain"].get<std::string>());
  } catch (const json::exception &e) {
    throw MalformedHeader(meta_path.string() + ": " + e.what());
  }
  return v;
}

void save_raw(const Volume &v, const fs::path &path) {
  const Shape3 s = v.shape();
  const torch::Tensor data = v.data.to(torch::kFloat32).contiguous();
  write_bytes(path, data.data_ptr<float>(), static_cast<size_t>(s.numel()) * 4, false);
  json meta = {
      {"shape", {s.d, s.h, s.w}},
      {"spacing", {v.spacing.d, v.spacing.h, v.spacing.w}},
      {"dtype", "float32"},
      {"modality", to_string(v.modality)},
      {"intensity_domain", to_string(v.domain)},
  };
  std::ofstream ms(sidecar_path(path));
  if (!ms) throw IoError("cannot write " + sidecar_path(path).string());
  ms << meta.dump(2) << "\n";
}

} // namespace

Volume load_volume(const fs::path &path, VolumeFormat format, const LoadOptions &opts) {
  Volume v = format == VolumeFormat::Nifti ? load_nifti(path) : load_raw(path);
  if (opts.modality) v.modality = *opts.modality;
  if (opts.domain) v.domain = *opts.domain;
  return v;
}

Volume load_volume(const fs::path &path, const LoadOptions &opts) {
  return load_volume(path, format_from_path(path), opts);
}

void save_volume(const Volume &v, const fs::path &path, VolumeFormat format) {
  if (!v.data.defined() || v.data.dim() != 3) throw InvalidArgument("save_volume: not a 3D volume");
  if (path.has_parent_path() && !fs::exists(path.parent_path()))
    throw IoError("parent directory does not exist: " + path.parent_path().string());
  if (format == VolumeFormat::Nifti) {
    const Shape3 s = v.shape();
    if (s.d > 32767 || s.h > 32767 || s.w > 32767) throw InvalidArgument("NIfTI-1 dimensions limited to 32767");
    save_nifti(v, path);
  } else {
    save_raw(v, path);
  }
}

void save_volume(const Volume &v, const fs::path &path) { save_volume(v, path, format_from_path(path)); }

Volume normalize(const Volume &v, const NormalizationSpec &spec) {
  spec.validate();
  if (v.domain != IntensityDomain::HU) throw DomainMismatch("normalize expects a volume in HU");
  const double range = spec.hu_max - spec.hu_min;
  torch::Tensor x = v.data.to(torch::kFloat64).clamp(spec.hu_min, spec.hu_max);
  x = ((x - spec.hu_min) / range).to(torch::kFloat32).clamp(0.0, 1.0);
  Volume out = v.with_data(x.contiguous());
  out.domain = IntensityDomain::Normalized;
  return out;
}

Downscaled downscale(const Volume &v, int64_t factor) {
  if (factor < 1) throw InvalidArgument("downscale factor must be positive");
  const Shape3 s = v.shape();
  Downscaled out;
  out.padding = {(factor - s.d % factor) % factor, (factor - s.h % factor) % factor, (factor - s.w % factor) % factor};
  torch::Tensor x = v.data.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
  if (out.padding[0] || out.padding[1] || out.padding[2]) {
    const double fill = v.data.min().item<double>();
    x = torch::constant_pad_nd(x, {0, out.padding[2], 0, out.padding[1], 0, out.padding[0]}, fill);
  }
  x = torch::avg_pool3d(x, {factor, factor, factor}, {factor, factor, factor});
  out.volume = v.with_data(x.squeeze(0).squeeze(0).contiguous());
  out.volume.spacing = {v.spacing.d * factor, v.spacing.h * factor, v.spacing.w * factor};
  return out;
}

} // namespace sct
