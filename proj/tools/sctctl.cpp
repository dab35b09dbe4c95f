// sctctl: dataset generation, misalignment, training, evaluation and reports.

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sct/config.hpp"
#include "sct/dataset.hpp"
#include "sct/errors.hpp"
#include "sct/grid.hpp"
#include "sct/report.hpp"

extern char **environ;

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sct;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

bool quiet() {
  const char *v = std::getenv("SCT_QUIET");
  return v && std::string(v) != "0";
}

void progress(const std::string &msg) {
  if (!quiet()) std::cerr << msg << "\n";
}

int workers() {
  const char *v = std::getenv("SCT_WORKERS");
  if (!v) return 1;
  try {
    return std::max(1, std::stoi(v));
  } catch (const std::exception &) {
    throw ConfigError("SCT_WORKERS must be an integer");
  }
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> data_root, output_dir;
  std::optional<int> epochs, n_cases, n_splits;
  std::optional<uint64_t> seed;
  std::optional<std::string> extractor;
};

/// Assigns `value` (JSON, or a bare string) at a dotted path.
void apply_set(json &j, const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json *node = &j;
  size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const Common &c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw ConfigError("cannot read config " + c.config_path);
    try {
      j = json::parse(in);
    } catch (const json::exception &e) {
      throw ConfigError(c.config_path + ": " + e.what());
    }
  }
  if (c.data_root) j["data_root"] = *c.data_root;
  if (c.output_dir) j["output_dir"] = *c.output_dir;
  if (c.epochs) j["train"]["epochs"] = *c.epochs;
  if (c.n_splits) j["train"]["n_splits"] = *c.n_splits;
  if (c.seed) j["train"]["seed"] = *c.seed;
  if (c.n_cases) j["dataset"]["n_cases"] = *c.n_cases;
  if (c.extractor) j["loss"]["extractor"] = *c.extractor;
  for (const auto &s : c.sets) apply_set(j, s);
  ExperimentConfig cfg = experiment_config_from_json(j);
  cfg.validate();
  return cfg;
}

void add_common(CLI::App *cmd, Common &c) {
  cmd->add_option("--config", c.config_path, "JSON experiment config");
  cmd->add_option("--set", c.sets, "Override a config value, e.g. train.learning_rate=3e-4");
  cmd->add_option("--data-root", c.data_root, "Dataset directory");
  cmd->add_option("--output-dir", c.output_dir, "Results directory");
  cmd->add_option("--epochs", c.epochs, "Training epochs");
  cmd->add_option("--n-splits", c.n_splits, "Number of train/val/test splits");
  cmd->add_option("--seed", c.seed, "Training seed");
  cmd->add_option("--n-cases", c.n_cases, "Phantom cases to generate");
  cmd->add_option("--extractor", c.extractor, "Perceptual feature extractor (vgg16|identity)");
}

/// CSV always; Markdown needs every MM+STN row's MM and Base counterparts.
void write_tables(const ExperimentConfig &cfg, const std::vector<MetricsRecord> &records, bool require_markdown) {
  fs::create_directories(cfg.output_dir);
  atomic_write_text(cfg.output_dir / "table.csv", emit_table(records, TableFormat::Csv));
  std::string md;
  try {
    md = emit_table(records, TableFormat::Markdown);
  } catch (const IncompleteGrid &e) {
    if (require_markdown) throw;
    progress(std::string("table.md skipped: ") + e.what());
    return;
  }
  atomic_write_text(cfg.output_dir / "table.md", md);
  std::cout << md;
}

std::optional<GridCell> find_cell(const ExperimentConfig &cfg, const std::string &key) {
  for (const auto &c : enumerate_cells(cfg.grid))
    if (c.key() == key) return c;
  return std::nullopt;
}

/// Runs each cell in its own `sctctl grid --cell` child, at most n at a time.
void fan_out(const std::vector<std::string> &base_args, const std::vector<GridCell> &cells, int n) {
  std::vector<pid_t> running;
  int failures = 0;
  const auto reap = [&] {
    int status = 0;
    const pid_t pid = wait(&status);
    std::erase(running, pid);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
  };
  for (const auto &cell : cells) {
    if (static_cast<int>(running.size()) >= n) reap();
    std::vector<std::string> args = base_args;
    args.push_back("--cell");
    args.push_back(cell.key());
    std::vector<char *> argv;
    for (auto &a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    pid_t pid = 0;
    if (posix_spawn(&pid, "/proc/self/exe", nullptr, nullptr, argv.data(), environ) != 0)
      throw Error("cannot spawn worker for " + cell.key());
    running.push_back(pid);
  }
  while (!running.empty()) reap();
  if (failures) throw Error(std::to_string(failures) + " grid worker(s) failed");
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Registration-aware multimodal synthetic CT toolkit"};
  app.require_subcommand(1);

  Common common;
  auto *generate = app.add_subcommand("generate", "Write phantom CT/CBCT cases and a manifest");
  add_common(generate, common);

  double alpha = 0.0;
  std::optional<uint64_t> misalign_seed;
  auto *misalign = app.add_subcommand("misalign", "Store misaligned CTs and their ground-truth matrices");
  add_common(misalign, common);
  misalign->add_option("--alpha", alpha, "Misalignment severity alpha_a")->required();
  misalign->add_option("--misalign-seed", misalign_seed, "Misalignment seed (defaults to dataset.misalign_seed)");

  std::string variant = "mm_stn";
  int quality = 32, split = 0;
  auto *train_cmd = app.add_subcommand("train", "Train one grid run and write its checkpoint");
  add_common(train_cmd, common);
  train_cmd->add_option("--variant", variant, "unimodal | mm | mm_stn");
  train_cmd->add_option("--alpha", alpha, "Misalignment severity alpha_a");
  train_cmd->add_option("--quality", quality, "CBCT quality level");
  train_cmd->add_option("--split", split, "Split index");

  std::string checkpoint, format = "markdown";
  auto *eval = app.add_subcommand("eval", "Evaluate a checkpoint on its held-out split");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint written by train or grid")->required();
  eval->add_option("--format", format, "markdown | csv | json");

  std::optional<double> montage_alpha;
  bool no_montage = false;
  auto *report = app.add_subcommand("report", "Emit tables and the qualitative montage from the results store");
  add_common(report, common);
  report->add_option("--montage-alpha", montage_alpha, "alpha_a of the montage cells");
  report->add_flag("--no-montage", no_montage, "Skip the PNG montage");

  std::vector<std::string> only_cells;
  auto *grid = app.add_subcommand("grid", "Train and evaluate every grid cell over all splits");
  add_common(grid, common);
  grid->add_option("--cell", only_cells, "Restrict to cell keys such as mm_stn_a0.25_q32");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    const ExperimentConfig cfg = load_config(common);
    const RunOptions run_opts{false, progress, {}};

    if (*generate) {
      const Manifest m = generate_dataset(cfg.data_root, cfg.phantom, cfg.dataset.n_cases, cfg.grid.quality_levels);
      std::cout << "wrote " << m.cases.size() << " cases to " << cfg.data_root.string() << "\n";
    } else if (*misalign) {
      const uint64_t seed = misalign_seed.value_or(cfg.dataset.misalign_seed);
      misalign_dataset(cfg.data_root, alpha, seed, cfg.dataset.translation_unit);
      std::cout << misaligned_dir(cfg.data_root, alpha, seed).string() << "\n";
    } else if (*train_cmd) {
      GridCell cell{parse_model_kind(variant), std::nullopt, quality};
      if (cell.kind != ModelKind::Unimodal) cell.alpha_a = alpha;
      try {
        QualityLevel{quality};
      } catch (const InvalidArgument &e) {
        throw ConfigError(e.what());
      }
      const ResultsStore store(cfg.output_dir);
      RunOptions opts = run_opts;
      opts.force = true;
      const RunRecord run = run_cell(cfg, cell, split, disk_source(cfg.data_root, cfg.dataset.translation_unit),
                                     make_loss_context(cfg.loss), store, opts);
      std::cout << store.checkpoint_path(cell, split).string() << " (best epoch " << run.best_epoch << ")\n";
    } else if (*eval) {
      const LossContext ctx = make_loss_context(cfg.loss);
      const LoadedCheckpoint ck = load_checkpoint(checkpoint);
      const GridCell cell = grid_cell_from_json(ck.meta.extra.at("cell"));
      const auto cases =
          evaluate_checkpoint(cfg, checkpoint, disk_source(cfg.data_root, cfg.dataset.translation_unit), ctx);
      const MetricsRecord record = make_record(cell.kind, cell.alpha_a, cell.quality, {cases});
      if (format == "json") {
        json j = to_json(record);
        j["cases"] = json::array();
        for (const auto &c : cases) j["cases"].push_back(to_json(c));
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << emit_table({record}, parse_table_format(format));
      }
    } else if (*report) {
      const ResultsStore store(cfg.output_dir);
      std::vector<MetricsRecord> records;
      for (const auto &cell : enumerate_cells(cfg.grid)) {
        auto r = store.load_record(cell);
        if (!r) throw IncompleteGrid("no record for cell " + cell.key() + " under " + cfg.output_dir.string());
        records.push_back(*r);
      }
      write_tables(cfg, records, true);
      if (!no_montage) {
        const double a = montage_alpha.value_or(cfg.grid.alpha_a_levels.front());
        const Montage m = build_montage(cfg, store, disk_source(cfg.data_root, cfg.dataset.translation_unit), a);
        emit_qualitative(m, cfg.output_dir / "montage.png");
        progress("montage: " + (cfg.output_dir / "montage.png").string());
      }
    } else if (*grid) {
      std::vector<GridCell> cells;
      for (const auto &key : only_cells) {
        auto c = find_cell(cfg, key);
        if (!c) throw ConfigError("unknown grid cell " + key);
        cells.push_back(*c);
      }
      const int n = workers();
      if (cells.empty() && n > 1) {
        std::vector<std::string> args(argv, argv + argc);
        fan_out(args, enumerate_cells(cfg.grid), n);
        cells = enumerate_cells(cfg.grid);
      }
      const ResultsStore store(cfg.output_dir);
      const auto records =
          run_grid(cfg, disk_source(cfg.data_root, cfg.dataset.translation_unit), make_loss_context(cfg.loss), store,
                   run_opts, cells.empty() ? std::nullopt : std::optional(cells));
      if (only_cells.empty()) write_tables(cfg, records, false);
    }
    return 0;
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
    case ErrorKind::Config: return kExitConfig;
    case ErrorKind::Data: return kExitData;
    default: return kExitRuntime;
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
