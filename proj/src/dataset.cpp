#include "sct/dataset.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sct/config.hpp"
#include "sct/errors.hpp"
#include "sct/seed.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sct {

namespace {

constexpr uint64_t kCbctStream = 0x63626374;

fs::path temp_sibling(const fs::path &path) {
  return path.parent_path() / (".tmp-" + path.filename().string());
}

std::string hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string alpha_tag(double alpha) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", alpha);
  return buf;
}

json file_json(const FileEntry &f) { return {{"path", f.path}, {"hash", f.hash}}; }

FileEntry file_from_json(const json &j) {
  return {j.at("path").get<std::string>(), j.at("hash").get<std::string>()};
}

FileEntry write_volume_entry(const fs::path &root, const std::string &rel, const Volume &v) {
  const fs::path path = root / rel;
  fs::create_directories(path.parent_path());
  atomic_save_volume(v, path);
  return {rel, hash_file(path)};
}

int case_index_of(const Manifest &m, const std::string &id) {
  for (size_t i = 0; i < m.cases.size(); ++i)
    if (m.cases[i].id == id) return static_cast<int>(i);
  throw DataError("case not in manifest: " + id);
}

} // namespace

std::vector<std::string> Manifest::case_ids() const {
  std::vector<std::string> ids;
  for (const auto &c : cases) ids.push_back(c.id);
  return ids;
}

const CaseEntry &Manifest::find(const std::string &id) const { return cases.at(case_index_of(*this, id)); }

json to_json(const Manifest &m) {
  json cases = json::array();
  for (const auto &c : m.cases) {
    json cbct = json::object();
    for (const auto &[q, f] : c.cbct) cbct[std::to_string(q)] = file_json(f);
    cases.push_back({{"id", c.id}, {"ct", file_json(c.ct)}, {"cbct", cbct}});
  }
  return {{"phantom", to_json(m.phantom)}, {"qualities", m.qualities}, {"cases", cases}};
}

Manifest manifest_from_json(const json &j) {
  try {
    Manifest m;
    m.phantom = phantom_spec_from_json(j.at("phantom"));
    m.qualities = j.at("qualities").get<std::vector<int>>();
    for (const auto &c : j.at("cases")) {
      CaseEntry e;
      e.id = c.at("id").get<std::string>();
      e.ct = file_from_json(c.at("ct"));
      for (const auto &[q, f] : c.at("cbct").items()) e.cbct[std::stoi(q)] = file_from_json(f);
      m.cases.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception &e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

std::string case_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03d", index);
  return buf;
}

std::string hash_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex(fnv1a(ss.str()));
}

Volume generate_case_ct(const PhantomSpec &spec, int index) {
  PhantomSpec s = spec;
  s.seed = derive_seed(spec.seed, {static_cast<uint64_t>(index)});
  return generate_phantom(s);
}

Volume generate_case_cbct(const Volume &ct, const PhantomSpec &spec, int index, int quality) {
  return degrade_to_cbct(ct, QualityLevel(quality),
                         derive_seed(spec.seed, {static_cast<uint64_t>(index), static_cast<uint64_t>(quality), kCbctStream}));
}

Manifest generate_dataset(const fs::path &root, const PhantomSpec &spec, int n_cases, const std::vector<int> &qualities) {
  spec.validate();
  if (n_cases < 1) throw ConfigError("n_cases must be positive");
  if (qualities.empty()) throw ConfigError("at least one quality level is required");
  for (int q : qualities) QualityLevel{q};
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());

  Manifest m;
  m.phantom = spec;
  m.qualities = qualities;
  for (int i = 0; i < n_cases; ++i) {
    CaseEntry e;
    e.id = case_id(i);
    const Volume ct = generate_case_ct(spec, i);
    e.ct = write_volume_entry(root, e.id + "/ct.nii.gz", ct);
    for (int q : qualities)
      e.cbct[q] = write_volume_entry(root, e.id + "/cbct_q" + std::to_string(q) + ".nii.gz",
                                     generate_case_cbct(ct, spec, i, q));
    m.cases.push_back(std::move(e));
  }
  atomic_write_text(root / "manifest.json", to_json(m).dump(2) + "\n");
  return m;
}

Manifest load_manifest(const fs::path &root) {
  const fs::path path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw DataError("no dataset manifest at " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception &e) {
    throw DataError("unreadable manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

uint64_t case_misalign_seed(uint64_t misalign_seed, int case_index) {
  return derive_seed(misalign_seed, {static_cast<uint64_t>(case_index)});
}

fs::path misaligned_dir(const fs::path &root, double alpha_a, uint64_t misalign_seed) {
  return root / "misaligned" / ("a" + alpha_tag(alpha_a) + "_s" + std::to_string(misalign_seed));
}

void misalign_dataset(const fs::path &root, double alpha_a, uint64_t misalign_seed, TranslationUnit unit) {
  const Manifest m = load_manifest(root);
  const fs::path dir = misaligned_dir(root, alpha_a, misalign_seed);
  json index = json::array();
  for (size_t i = 0; i < m.cases.size(); ++i) {
    const auto &c = m.cases[i];
    const Volume ct = load_volume(root / c.ct.path);
    const MisalignedPair p = make_misaligned_pair(ct, alpha_a, case_misalign_seed(misalign_seed, static_cast<int>(i)), unit);
    const fs::path case_dir = dir / c.id;
    fs::create_directories(case_dir);
    atomic_save_volume(p.u_ct, case_dir / "u_ct.nii.gz");
    json truth = {{"matrix", to_json(p.truth)},
                  {"scale", p.params.scale},
                  {"rotation_deg", p.params.rotation_deg},
                  {"translation", p.params.translation},
                  {"translation_unit", to_string(unit)},
                  {"alpha_a", alpha_a}};
    atomic_write_text(case_dir / "truth.json", truth.dump(2) + "\n");
    index.push_back({{"id", c.id}, {"u_ct", hash_file(case_dir / "u_ct.nii.gz")}});
  }
  atomic_write_text(dir / "index.json",
                    json{{"alpha_a", alpha_a}, {"seed", misalign_seed}, {"translation_unit", to_string(unit)}, {"cases", index}}
                            .dump(2) +
                        "\n");
}

std::vector<PairedSample> load_samples(const fs::path &root, const Manifest &manifest, const std::vector<std::string> &ids,
                                       int quality, double alpha_a, uint64_t misalign_seed, TranslationUnit unit) {
  const fs::path cached = misaligned_dir(root, alpha_a, misalign_seed);
  bool use_cache = false;
  if (fs::exists(cached / "index.json")) {
    std::ifstream in(cached / "index.json");
    json j = json::parse(in, nullptr, false);
    use_cache = !j.is_discarded() && j.value("translation_unit", "") == to_string(unit);
  }
  std::vector<PairedSample> out;
  for (const auto &id : ids) {
    const int index = case_index_of(manifest, id);
    const CaseEntry &c = manifest.cases[index];
    const auto q = c.cbct.find(quality);
    if (q == c.cbct.end()) throw DataError("case " + id + " has no CBCT at quality " + std::to_string(quality));
    PairedSample s;
    s.case_id = id;
    s.y = load_volume(root / c.ct.path);
    s.cbct = load_volume(root / q->second.path);
    if (use_cache) {
      s.u_ct = load_volume(cached / id / "u_ct.nii.gz");
      std::ifstream in(cached / id / "truth.json");
      if (!in) throw DataError("missing truth matrix for " + id);
      s.truth = affine_from_json(json::parse(in).at("matrix"));
    } else {
      MisalignedPair p = make_misaligned_pair(s.y, alpha_a, case_misalign_seed(misalign_seed, index), unit);
      s.u_ct = std::move(p.u_ct);
      s.truth = p.truth;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PairedSample> make_phantom_samples(const PhantomSpec &spec, int n_cases, std::optional<int> quality,
                                               double alpha_a, uint64_t misalign_seed, TranslationUnit unit) {
  spec.validate();
  std::vector<PairedSample> out;
  for (int i = 0; i < n_cases; ++i) {
    PairedSample s;
    s.case_id = case_id(i);
    s.y = generate_case_ct(spec, i);
    s.cbct = quality ? generate_case_cbct(s.y, spec, i, *quality) : degrade_to_cbct(s.y, QualityLevel::ideal(), 0);
    MisalignedPair p = make_misaligned_pair(s.y, alpha_a, case_misalign_seed(misalign_seed, i), unit);
    s.u_ct = std::move(p.u_ct);
    s.truth = p.truth;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PairedSample> select(const std::vector<PairedSample> &samples, const std::vector<std::string> &ids) {
  std::vector<PairedSample> out;
  for (const auto &id : ids) {
    auto it = std::find_if(samples.begin(), samples.end(), [&](const PairedSample &s) { return s.case_id == id; });
    if (it == samples.end()) throw DataError("no sample for case " + id);
    out.push_back(*it);
  }
  return out;
}

void atomic_write_text(const fs::path &path, const std::string &text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw IoError("write failure in " + tmp.string());
  }
  fs::rename(tmp, path);
}

void atomic_save_volume(const Volume &v, const fs::path &path) {
  const fs::path tmp = temp_sibling(path);
  save_volume(v, tmp, format_from_path(path));
  fs::rename(tmp, path);
}

} // namespace sct
