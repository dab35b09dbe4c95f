#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sct/config.hpp"
#include "sct/evaluator.hpp"
#include "sct/report.hpp"
#include "sct/trainer.hpp"

namespace sct {

/// One (variant, alpha_a, quality) combination. The unimodal baseline has no
/// alpha_a since it never sees the CT.
struct GridCell {
  ModelKind kind = ModelKind::MM;
  std::optional<double> alpha_a;
  int quality = 32;

  std::string key() const; // e.g. "mm_stn_a0.25_q32", "unimodal_q64"
  bool operator==(const GridCell &) const = default;
};

nlohmann::json to_json(const GridCell &c);
GridCell grid_cell_from_json(const nlohmann::json &j);

/// Quality-major: per quality the unimodal cell, then MM and MM+STN per alpha_a.
std::vector<GridCell> enumerate_cells(const ExperimentGrid &grid);

/// Every seed a run needs. Splits and misalignments depend only on the split
/// index, so all variants see the same data.
struct RunSeeds {
  uint64_t split = 0;
  uint64_t misalign = 0;
  uint64_t model = 0;
  uint64_t train = 0;
};

RunSeeds run_seeds(const ExperimentConfig &cfg, int split_index);

/// All cases of one (quality, alpha_a, misalignment seed) combination.
using SampleSource = std::function<std::vector<PairedSample>(int quality, double alpha_a, uint64_t misalign_seed)>;

/// Reads the dataset under `root` (see dataset.hpp).
SampleSource disk_source(const std::filesystem::path &root, TranslationUnit unit = TranslationUnit::Millimeter);
/// Generates phantoms in memory.
SampleSource phantom_source(const PhantomSpec &spec, int n_cases, TranslationUnit unit = TranslationUnit::Millimeter);

nlohmann::json to_json(const CaseMetrics &m);
CaseMetrics case_metrics_from_json(const nlohmann::json &j);
nlohmann::json to_json(const MetricsRecord &r);
MetricsRecord metrics_record_from_json(const nlohmann::json &j);

struct RunRecord {
  GridCell cell;
  int split = 0;
  std::string config_hash;
  std::vector<std::string> train_ids, val_ids, test_ids;
  std::vector<EpochLog> history;
  int best_epoch = 0;
  std::vector<CaseMetrics> cases;
};

nlohmann::json to_json(const RunRecord &r);
RunRecord run_record_from_json(const nlohmann::json &j);

/// Fingerprint of everything that influences one run's result.
std::string run_config_hash(const ExperimentConfig &cfg, const GridCell &cell, int split_index);

/// <root>/<cell key>/{split_<i>.json, split_<i>.pt, split_<i>.jsonl, record.json}.
/// Each file is written to a temporary name and renamed, and each cell has a
/// single writer, so independent cells may run in separate processes.
class ResultsStore {
public:
  explicit ResultsStore(std::filesystem::path root);

  const std::filesystem::path &root() const { return root_; }
  std::filesystem::path cell_dir(const GridCell &cell) const;
  std::filesystem::path run_path(const GridCell &cell, int split) const;
  std::filesystem::path checkpoint_path(const GridCell &cell, int split) const;
  std::filesystem::path log_path(const GridCell &cell, int split) const;
  std::filesystem::path record_path(const GridCell &cell) const;

  std::optional<RunRecord> load_run(const GridCell &cell, int split) const;
  void save_run(const RunRecord &run) const;
  std::optional<MetricsRecord> load_record(const GridCell &cell) const;
  void save_record(const GridCell &cell, const MetricsRecord &record) const;

  /// Every record.json under the root, sorted by cell key.
  std::vector<MetricsRecord> load_records() const;

private:
  std::filesystem::path root_;
};

struct RunOptions {
  bool force = false; // retrain even when a matching run exists
  std::function<void(const std::string &)> log;
  std::function<void(const EpochLog &)> on_epoch;
};

/// Split, train with best-val selection, evaluate on the held-out cases and
/// persist. Returns the stored run unchanged when its config hash matches.
RunRecord run_cell(const ExperimentConfig &cfg, const GridCell &cell, int split_index, const SampleSource &source,
                   const LossContext &ctx, const ResultsStore &store, const RunOptions &opts = {});

/// Runs every split of every cell and writes one aggregated record per cell.
/// `cells` restricts the run to a subset of enumerate_cells(cfg.grid).
std::vector<MetricsRecord> run_grid(const ExperimentConfig &cfg, const SampleSource &source, const LossContext &ctx,
                                    const ResultsStore &store, const RunOptions &opts = {},
                                    const std::optional<std::vector<GridCell>> &cells = std::nullopt);

/// Rebuilds the test split recorded in a grid checkpoint and evaluates it.
std::vector<CaseMetrics> evaluate_checkpoint(const ExperimentConfig &cfg, const std::filesystem::path &checkpoint,
                                             const SampleSource &source, const LossContext &ctx);

/// Mid-axial sCT panels, one row per quality level and one column per
/// variant, from the split-0 checkpoints of the cells at `alpha_a`. The shown
/// case is drawn from that split's test set with the training seed.
Montage build_montage(const ExperimentConfig &cfg, const ResultsStore &store, const SampleSource &source, double alpha_a);

} // namespace sct
