#include "support.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "sct/errors.hpp"
#include "sct/volume.hpp"

using namespace sct;
using sct::testing::TempDir;

namespace {

// NIfTI-1 single-file image packed field by field.
struct NiftiBytes {
  std::vector<unsigned char> bytes;
  bool big_endian = false;

  explicit NiftiBytes(size_t payload_bytes, bool big = false) : bytes(352 + payload_bytes, 0), big_endian(big) {}

  template <typename T> void put(size_t offset, T value) {
    unsigned char tmp[sizeof(T)];
    std::memcpy(tmp, &value, sizeof(T));
    if (big_endian) std::reverse(tmp, tmp + sizeof(T));
    std::memcpy(bytes.data() + offset, tmp, sizeof(T));
  }

  void header(int16_t nx, int16_t ny, int16_t nz, int16_t datatype, int16_t bitpix, float dx, float dy, float dz) {
    put<int32_t>(0, 348);
    put<int16_t>(40, 3);
    put<int16_t>(42, nx);
    put<int16_t>(44, ny);
    put<int16_t>(46, nz);
    for (int i = 4; i <= 7; ++i) put<int16_t>(40 + 2 * i, 1);
    put<int16_t>(70, datatype);
    put<int16_t>(72, bitpix);
    put<float>(76, 1.0f);
    put<float>(80, dx);
    put<float>(84, dy);
    put<float>(88, dz);
    put<float>(108, 352.0f);
    std::memcpy(bytes.data() + 344, "n+1\0", 4);
  }

  void write(const std::filesystem::path &p) const {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
};

} // namespace

TEST_CASE("raw volumes round-trip exactly") {
  TempDir dir("raw");
  Volume v = sct::testing::random_volume({32, 32, 32}, 1);
  v.spacing = {1.0, 1.0, 1.0};
  save_volume(v, dir / "v.raw");
  CHECK(std::filesystem::exists(dir / "v.json"));
  const Volume back = load_volume(dir / "v.raw");
  CHECK((back.shape() == Shape3{32, 32, 32}));
  CHECK(back.spacing == v.spacing);
  CHECK(sct::testing::bit_equal(back.data, v.data));
  CHECK(back.modality == v.modality);
  CHECK(back.domain == v.domain);
}

TEST_CASE("zero 8^3 raw payload is 512 zero floats") {
  TempDir dir("zero");
  save_volume(make_volume(torch::zeros({8, 8, 8})), dir / "z.raw");
  std::ifstream in(dir / "z.raw", std::ios::binary);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(buf.size() == 512 * 4);
  CHECK(std::all_of(buf.begin(), buf.end(), [](char c) { return c == 0; }));
}

TEST_CASE("raw payload smaller than the sidecar is a dimension mismatch") {
  TempDir dir("mismatch");
  save_volume(make_volume(torch::zeros({16, 16, 16})), dir / "v.raw");
  nlohmann::json meta = {{"shape", {32, 32, 32}}, {"spacing", {1, 1, 1}}, {"dtype", "float32"}};
  std::ofstream(dir / "v.json") << meta.dump();
  CHECK_THROWS_AS(load_volume(dir / "v.raw"), DimensionMismatch);
}

TEST_CASE("raw sidecar errors are typed") {
  TempDir dir("sidecar");
  save_volume(make_volume(torch::zeros({2, 2, 2})), dir / "v.raw");
  std::ofstream(dir / "v.json") << "{not json";
  CHECK_THROWS_AS(load_volume(dir / "v.raw"), MalformedHeader);
  std::ofstream(dir / "v.json") << R"({"shape":[2,2,2],"spacing":[1,1,1],"dtype":"int16"})";
  CHECK_THROWS_AS(load_volume(dir / "v.raw"), UnsupportedDatatype);
  CHECK_THROWS_AS(load_volume(dir / "missing.raw"), IoError);
}

TEST_CASE("hand-packed NIfTI float32 with anisotropic spacing") {
  TempDir dir("nifti");
  // x = W = 4, y = H = 3, z = D = 2; values count up in file order.
  NiftiBytes n(24 * 4);
  n.header(4, 3, 2, 16, 32, 0.8f, 0.8f, 2.0f);
  for (int i = 0; i < 24; ++i) n.put<float>(352 + 4 * i, static_cast<float>(i) / 24.0f);
  n.write(dir / "ref.nii");

  const Volume v = load_volume(dir / "ref.nii");
  CHECK((v.shape() == Shape3{2, 3, 4}));
  CHECK(v.spacing.d == doctest::Approx(2.0));
  CHECK(v.spacing.h == doctest::Approx(0.8));
  CHECK(v.spacing.w == doctest::Approx(0.8));
  // W is the fastest axis.
  CHECK(v.data[0][0][1].item<float>() == 1.0f / 24.0f);
  CHECK(v.data[0][1][0].item<float>() == 4.0f / 24.0f);
  CHECK(v.data[1][0][0].item<float>() == 12.0f / 24.0f);
}

TEST_CASE("NIfTI int16 with scaling and big-endian byte order") {
  TempDir dir("nifti16");
  NiftiBytes n(8 * 2, true);
  n.header(2, 2, 2, 4, 16, 1.0f, 1.5f, 2.5f);
  n.put<float>(112, 2.0f);
  n.put<float>(116, -1000.0f);
  for (int i = 0; i < 8; ++i) n.put<int16_t>(352 + 2 * i, static_cast<int16_t>(100 * i));
  n.write(dir / "be.nii");

  const Volume v = load_volume(dir / "be.nii", LoadOptions{Modality::CT, IntensityDomain::HU});
  CHECK(v.spacing.h == doctest::Approx(1.5));
  CHECK(v.spacing.d == doctest::Approx(2.5));
  const auto flat = v.data.reshape(-1);
  for (int i = 0; i < 8; ++i) CHECK(flat[i].item<float>() == doctest::Approx(200.0 * i - 1000.0));
  CHECK(v.domain == IntensityDomain::HU);
}

TEST_CASE("NIfTI failures are distinct") {
  TempDir dir("niftibad");
  NiftiBytes bad_size(8 * 4);
  bad_size.header(2, 2, 2, 16, 32, 1, 1, 1);
  bad_size.put<int32_t>(0, 123);
  bad_size.write(dir / "a.nii");
  CHECK_THROWS_AS(load_volume(dir / "a.nii"), MalformedHeader);

  NiftiBytes complex(8 * 8);
  complex.header(2, 2, 2, 32, 64, 1, 1, 1);
  complex.write(dir / "b.nii");
  CHECK_THROWS_AS(load_volume(dir / "b.nii"), UnsupportedDatatype);

  NiftiBytes short_payload(4 * 4);
  short_payload.header(2, 2, 2, 16, 32, 1, 1, 1);
  short_payload.write(dir / "c.nii");
  CHECK_THROWS_AS(load_volume(dir / "c.nii"), DimensionMismatch);

  std::ofstream(dir / "d.nii") << "tiny";
  CHECK_THROWS_AS(load_volume(dir / "d.nii"), MalformedHeader);
}

TEST_CASE("NIfTI round trip, plain and gzip") {
  TempDir dir("niftirt");
  Volume v = sct::testing::random_volume({16, 16, 16}, 9);
  v.spacing = {2.0, 0.8, 0.8};
  v.modality = Modality::CBCT;
  for (const char *name : {"v.nii", "v.nii.gz"}) {
    save_volume(v, dir / name);
    const Volume back = load_volume(dir / name);
    CHECK(sct::testing::max_abs_diff(back.data, v.data) == 0.0);
    CHECK(back.spacing.d == doctest::Approx(2.0));
    CHECK(back.spacing.w == doctest::Approx(0.8));
    CHECK(back.modality == Modality::CBCT);
  }
  CHECK_THROWS_AS(save_volume(v, dir / "no" / "such" / "dir.nii"), IoError);
}

TEST_CASE("normalize clips and maps HU onto [0,1]") {
  const NormalizationSpec spec;
  Volume hu = make_volume(torch::tensor({-1000.0f, 1000.0f, 0.0f, -3000.0f, 2500.0f, 500.0f}).reshape({1, 2, 3}),
                          {}, Modality::CT, IntensityDomain::HU);
  const Volume n = normalize(hu, spec);
  const auto f = n.data.reshape(-1);
  CHECK(f[0].item<float>() == 0.0f);
  CHECK(f[1].item<float>() == 1.0f);
  CHECK(f[2].item<float>() == 0.5f);
  CHECK(f[3].item<float>() == 0.0f);
  CHECK(f[4].item<float>() == 1.0f);
  CHECK(f[5].item<float>() == 0.75f);
  CHECK(n.domain == IntensityDomain::Normalized);
  CHECK_THROWS_AS(normalize(n, spec), DomainMismatch);
  CHECK_THROWS_AS((NormalizationSpec{10, 10}.validate()), InvalidArgument);
}

TEST_CASE("normalize is monotone and idempotent on clipped input") {
  const torch::Tensor ramp = torch::linspace(-2000, 2000, 4001).reshape({1, 1, 4001});
  const Volume n = normalize(make_volume(ramp, {}, Modality::CT, IntensityDomain::HU));
  CHECK((n.data.diff(1, -1) >= 0).all().item<bool>());

  const torch::Tensor clipped = torch::linspace(-1000, 1000, 2001).reshape({1, 1, 2001});
  const Volume once = normalize(make_volume(clipped, {}, Modality::CT, IntensityDomain::HU));
  // Mapping back to HU and normalizing again reproduces the first result.
  const Volume again = normalize(make_volume(once.data * 2000.0 - 1000.0, {}, Modality::CT, IntensityDomain::HU));
  CHECK(sct::testing::max_abs_diff(once.data, again.data) < 1e-6);
}

TEST_CASE("downscale shapes and spacing") {
  Volume v = make_volume(torch::zeros({64, 64, 64}), {1.0, 0.5, 0.5});
  const Downscaled d = downscale(v, 2);
  CHECK((d.volume.shape() == Shape3{32, 32, 32}));
  CHECK((d.volume.spacing == Spacing{2.0, 1.0, 1.0}));
  CHECK((d.padding == std::array<int64_t, 3>{0, 0, 0}));
  CHECK_THROWS_AS(downscale(v, 0), InvalidArgument);
  CHECK_THROWS_AS(downscale(v, -2), InvalidArgument);
}

TEST_CASE("downscale of a constant is the constant") {
  const Downscaled d = downscale(make_volume(torch::full({12, 12, 12}, 0.37f)), 3);
  CHECK((d.volume.shape() == Shape3{4, 4, 4}));
  CHECK(sct::testing::max_abs_diff(d.volume.data, torch::full({4, 4, 4}, 0.37f)) < 1e-6);
}

TEST_CASE("downscale equals brute-force block means") {
  const Volume v = sct::testing::random_volume({8, 8, 8}, 5);
  const Downscaled d = downscale(v, 2);
  const auto a = v.data.accessor<float, 3>();
  double worst = 0.0;
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        double s = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) s += a[2 * z + dz][2 * y + dy][2 * x + dx];
        worst = std::max(worst, std::abs(s / 8.0 - d.volume.data[z][y][x].item<double>()));
      }
  CHECK(worst < 1e-6);
  CHECK(d.volume.data.to(torch::kFloat64).mean().item<double>() ==
        doctest::Approx(v.data.to(torch::kFloat64).mean().item<double>()).epsilon(1e-6));
}

TEST_CASE("downscale pads indivisible axes with the minimum") {
  torch::Tensor t = torch::full({5, 4, 4}, 0.8f);
  t[0][0][0] = 0.2f;
  const Downscaled d = downscale(make_volume(t), 2);
  CHECK((d.volume.shape() == Shape3{3, 2, 2}));
  CHECK((d.padding == std::array<int64_t, 3>{1, 0, 0}));
  // Last depth block holds one real slab (0.8) and one padded slab (0.2).
  CHECK(d.volume.data[2][1][1].item<float>() == doctest::Approx(0.5));
}

TEST_CASE("volume invariants") {
  Volume v = make_volume(torch::zeros({2, 2, 2}));
  CHECK_NOTHROW(v.validate());
  v.data[0][0][0] = std::nanf("");
  CHECK_THROWS_AS(v.validate(), InvalidArgument);
  v.data[0][0][0] = 1.5f;
  CHECK_THROWS_AS(v.validate(), InvalidArgument);
  v.domain = IntensityDomain::Logit;
  CHECK_NOTHROW(v.validate());
  v.spacing.h = 0.0;
  CHECK_THROWS_AS(v.validate(), InvalidArgument);
}

TEST_CASE("enum names round-trip") {
  for (Modality m : {Modality::CT, Modality::CBCT, Modality::SCT}) CHECK(parse_modality(to_string(m)) == m);
  for (IntensityDomain d : {IntensityDomain::HU, IntensityDomain::Normalized, IntensityDomain::Logit})
    CHECK(parse_domain(to_string(d)) == d);
  CHECK(format_from_path("a/b.nii.gz") == VolumeFormat::Nifti);
  CHECK(format_from_path("a/b.raw") == VolumeFormat::Raw);
  CHECK(sidecar_path("a/b.raw") == std::filesystem::path("a/b.json"));
}
