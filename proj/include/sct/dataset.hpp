#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sct/affine.hpp"
#include "sct/phantom.hpp"
#include "sct/pipeline.hpp"

namespace sct {

// On-disk layout:
//   <root>/manifest.json
//   <root>/case_000/ct.nii.gz
//   <root>/case_000/cbct_q32.nii.gz ...
//   <root>/misaligned/a0.25_s7/case_000/{u_ct.nii.gz, truth.json}

struct FileEntry {
  std::string path; // relative to the dataset root
  std::string hash; // FNV-1a of the file bytes, hex
};

struct CaseEntry {
  std::string id;
  FileEntry ct;
  std::map<int, FileEntry> cbct; // keyed by quality level
};

struct Manifest {
  PhantomSpec phantom;
  std::vector<int> qualities;
  std::vector<CaseEntry> cases;

  std::vector<std::string> case_ids() const;
  const CaseEntry &find(const std::string &id) const;
};

nlohmann::json to_json(const Manifest &m);
Manifest manifest_from_json(const nlohmann::json &j);

std::string case_id(int index);
std::string hash_file(const std::filesystem::path &path);

/// Phantom for case `index`, seeded from `spec.seed` and the index.
Volume generate_case_ct(const PhantomSpec &spec, int index);
Volume generate_case_cbct(const Volume &ct, const PhantomSpec &spec, int index, int quality);

/// Writes n_cases CT phantoms and one CBCT per quality, then the manifest.
/// Output bytes depend only on the arguments.
Manifest generate_dataset(const std::filesystem::path &root, const PhantomSpec &spec, int n_cases,
                          const std::vector<int> &qualities);

/// Throws DataError when the manifest is missing or unreadable.
Manifest load_manifest(const std::filesystem::path &root);

/// Per-case misalignment seed. It does not depend on alpha_a, so one case
/// keeps the same draw across the severity ladder.
uint64_t case_misalign_seed(uint64_t misalign_seed, int case_index);

std::filesystem::path misaligned_dir(const std::filesystem::path &root, double alpha_a, uint64_t misalign_seed);

/// Writes U_CT and the ground-truth matrix for every case.
void misalign_dataset(const std::filesystem::path &root, double alpha_a, uint64_t misalign_seed,
                      TranslationUnit unit = TranslationUnit::Millimeter);

/// Paired samples for the given cases. Uses a stored misalignment when one
/// exists for (alpha_a, misalign_seed), otherwise computes it in memory.
std::vector<PairedSample> load_samples(const std::filesystem::path &root, const Manifest &manifest,
                                       const std::vector<std::string> &ids, int quality, double alpha_a,
                                       uint64_t misalign_seed, TranslationUnit unit = TranslationUnit::Millimeter);

/// The same samples as a generated-then-loaded dataset, built in memory.
/// `quality` nullopt gives artifact-free CBCTs.
std::vector<PairedSample> make_phantom_samples(const PhantomSpec &spec, int n_cases, std::optional<int> quality,
                                               double alpha_a, uint64_t misalign_seed,
                                               TranslationUnit unit = TranslationUnit::Millimeter);

/// Subset of `samples` in the order of `ids`.
std::vector<PairedSample> select(const std::vector<PairedSample> &samples, const std::vector<std::string> &ids);

/// Writes to a sibling temporary file, then renames it over `path`.
void atomic_write_text(const std::filesystem::path &path, const std::string &text);
void atomic_save_volume(const Volume &v, const std::filesystem::path &path);

} // namespace sct
