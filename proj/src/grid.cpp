#include "sct/grid.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "sct/dataset.hpp"
#include "sct/errors.hpp"
#include "sct/seed.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sct {

namespace {

constexpr uint64_t kSplitStream = 0x73706c6974;
constexpr uint64_t kModelStream = 0x6d6f64656c;
constexpr uint64_t kTrainStream = 0x747261696e;

std::string alpha_tag(double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", a);
  return buf;
}

json summary_json(const MetricSummary &s) {
  const auto ms = [](const MeanStd &m) { return json{{"mean", m.mean}, {"std", m.std}}; };
  return {{"mae", ms(s.mae)}, {"one_minus_ssim", ms(s.one_minus_ssim)}, {"perceptual", ms(s.perceptual)}};
}

MetricSummary summary_from_json(const json &j) {
  const auto ms = [](const json &m) { return MeanStd{m.at("mean").get<double>(), m.at("std").get<double>()}; };
  return {ms(j.at("mae")), ms(j.at("one_minus_ssim")), ms(j.at("perceptual"))};
}

json triple_json(const MetricTriple &t) {
  return {{"mae", t.mae}, {"one_minus_ssim", t.one_minus_ssim}, {"perceptual", t.perceptual}};
}

MetricTriple triple_from_json(const json &j) {
  return {j.at("mae").get<double>(), j.at("one_minus_ssim").get<double>(), j.at("perceptual").get<double>()};
}

std::optional<json> read_json(const fs::path &path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

std::string read_text(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_if_changed(const fs::path &path, const std::string &text) {
  if (fs::exists(path) && read_text(path) == text) return;
  atomic_write_text(path, text);
}

void say(const RunOptions &opts, const std::string &msg) {
  if (opts.log) opts.log(msg);
}

} // namespace

std::string GridCell::key() const {
  std::string k = to_string(kind);
  if (alpha_a) k += "_a" + alpha_tag(*alpha_a);
  return k + "_q" + std::to_string(quality);
}

json to_json(const GridCell &c) {
  return {{"kind", to_string(c.kind)}, {"alpha_a", c.alpha_a ? json(*c.alpha_a) : json(nullptr)}, {"quality", c.quality}};
}

GridCell grid_cell_from_json(const json &j) {
  GridCell c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  if (!j.at("alpha_a").is_null()) c.alpha_a = j.at("alpha_a").get<double>();
  c.quality = j.at("quality").get<int>();
  return c;
}

std::vector<GridCell> enumerate_cells(const ExperimentGrid &grid) {
  grid.validate();
  const auto has = [&](ModelKind k) { return std::find(grid.variants.begin(), grid.variants.end(), k) != grid.variants.end(); };
  std::vector<GridCell> cells;
  for (int q : grid.quality_levels) {
    if (has(ModelKind::Unimodal)) cells.push_back({ModelKind::Unimodal, std::nullopt, q});
    for (ModelKind k : {ModelKind::MM, ModelKind::MMSTN})
      if (has(k))
        for (double a : grid.alpha_a_levels) cells.push_back({k, a, q});
  }
  return cells;
}

RunSeeds run_seeds(const ExperimentConfig &cfg, int split_index) {
  const auto s = static_cast<uint64_t>(split_index);
  return {derive_seed(cfg.train.seed, {kSplitStream, s}), derive_seed(cfg.dataset.misalign_seed, {s}),
          derive_seed(cfg.train.seed, {kModelStream, s}), derive_seed(cfg.train.seed, {kTrainStream, s})};
}

SampleSource disk_source(const fs::path &root, TranslationUnit unit) {
  return [root, unit](int quality, double alpha_a, uint64_t misalign_seed) {
    const Manifest m = load_manifest(root);
    if (std::find(m.qualities.begin(), m.qualities.end(), quality) == m.qualities.end())
      throw DataError("dataset at " + root.string() + " has no quality " + std::to_string(quality));
    return load_samples(root, m, m.case_ids(), quality, alpha_a, misalign_seed, unit);
  };
}

SampleSource phantom_source(const PhantomSpec &spec, int n_cases, TranslationUnit unit) {
  return [spec, n_cases, unit](int quality, double alpha_a, uint64_t misalign_seed) {
    return make_phantom_samples(spec, n_cases, quality, alpha_a, misalign_seed, unit);
  };
}

json to_json(const CaseMetrics &m) {
  json j = {{"case_id", m.case_id}, {"model", triple_json(m.model)}, {"ct_only", triple_json(m.ct_only)}};
  if (m.ct_warped) j["ct_warped"] = triple_json(*m.ct_warped);
  if (m.displacement_before) j["displacement_before"] = *m.displacement_before;
  if (m.displacement_after) j["displacement_after"] = *m.displacement_after;
  return j;
}

CaseMetrics case_metrics_from_json(const json &j) {
  CaseMetrics m;
  m.case_id = j.at("case_id").get<std::string>();
  m.model = triple_from_json(j.at("model"));
  m.ct_only = triple_from_json(j.at("ct_only"));
  if (j.contains("ct_warped")) m.ct_warped = triple_from_json(j.at("ct_warped"));
  if (j.contains("displacement_before")) m.displacement_before = j.at("displacement_before").get<double>();
  if (j.contains("displacement_after")) m.displacement_after = j.at("displacement_after").get<double>();
  return m;
}

json to_json(const MetricsRecord &r) {
  json j = {{"kind", to_string(r.kind)},
            {"alpha_a", r.alpha_a ? json(*r.alpha_a) : json(nullptr)},
            {"quality", r.quality ? json(*r.quality) : json(nullptr)},
            {"model", summary_json(r.model)},
            {"n_runs", r.n_runs},
            {"n_cases", r.n_cases}};
  if (r.ct_only) j["ct_only"] = summary_json(*r.ct_only);
  if (r.ct_warped) j["ct_warped"] = summary_json(*r.ct_warped);
  return j;
}

MetricsRecord metrics_record_from_json(const json &j) {
  try {
    MetricsRecord r;
    r.kind = parse_model_kind(j.at("kind").get<std::string>());
    if (!j.at("alpha_a").is_null()) r.alpha_a = j.at("alpha_a").get<double>();
    if (!j.at("quality").is_null()) r.quality = j.at("quality").get<int>();
    r.model = summary_from_json(j.at("model"));
    if (j.contains("ct_only")) r.ct_only = summary_from_json(j.at("ct_only"));
    if (j.contains("ct_warped")) r.ct_warped = summary_from_json(j.at("ct_warped"));
    r.n_runs = j.at("n_runs").get<int>();
    r.n_cases = j.at("n_cases").get<int>();
    r.validate();
    return r;
  } catch (const json::exception &e) {
    throw DataError(std::string("malformed metrics record: ") + e.what());
  }
}

json to_json(const RunRecord &r) {
  json history = json::array();
  for (const auto &h : r.history)
    history.push_back({{"epoch", h.epoch},
                       {"train_loss", h.train_loss},
                       {"val_loss", h.val_loss},
                       {"optimizer_steps", h.optimizer_steps}});
  json cases = json::array();
  for (const auto &c : r.cases) cases.push_back(to_json(c));
  return {{"cell", to_json(r.cell)},   {"split", r.split},       {"config_hash", r.config_hash},
          {"train_ids", r.train_ids},  {"val_ids", r.val_ids},   {"test_ids", r.test_ids},
          {"history", history},        {"best_epoch", r.best_epoch}, {"cases", cases}};
}

RunRecord run_record_from_json(const json &j) {
  try {
    RunRecord r;
    r.cell = grid_cell_from_json(j.at("cell"));
    r.split = j.at("split").get<int>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    r.val_ids = j.at("val_ids").get<std::vector<std::string>>();
    r.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    for (const auto &h : j.at("history")) {
      EpochLog e;
      e.epoch = h.at("epoch").get<int>();
      e.train_loss = h.at("train_loss").get<double>();
      e.val_loss = h.at("val_loss").get<double>();
      e.optimizer_steps = h.at("optimizer_steps").get<int64_t>();
      r.history.push_back(e);
    }
    r.best_epoch = j.at("best_epoch").get<int>();
    for (const auto &c : j.at("cases")) r.cases.push_back(case_metrics_from_json(c));
    return r;
  } catch (const json::exception &e) {
    throw DataError(std::string("malformed run record: ") + e.what());
  }
}

std::string run_config_hash(const ExperimentConfig &cfg, const GridCell &cell, int split_index) {
  json j = to_json(cfg);
  j.erase("output_dir");
  j.erase("grid");
  j["cell"] = to_json(cell);
  j["split"] = split_index;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

ResultsStore::ResultsStore(fs::path root) : root_(std::move(root)) {}

fs::path ResultsStore::cell_dir(const GridCell &cell) const { return root_ / cell.key(); }
fs::path ResultsStore::run_path(const GridCell &cell, int split) const {
  return cell_dir(cell) / ("split_" + std::to_string(split) + ".json");
}
fs::path ResultsStore::checkpoint_path(const GridCell &cell, int split) const {
  return cell_dir(cell) / ("split_" + std::to_string(split) + ".pt");
}
fs::path ResultsStore::log_path(const GridCell &cell, int split) const {
  return cell_dir(cell) / ("split_" + std::to_string(split) + ".jsonl");
}
fs::path ResultsStore::record_path(const GridCell &cell) const { return cell_dir(cell) / "record.json"; }

std::optional<RunRecord> ResultsStore::load_run(const GridCell &cell, int split) const {
  const auto j = read_json(run_path(cell, split));
  if (!j) return std::nullopt;
  return run_record_from_json(*j);
}

void ResultsStore::save_run(const RunRecord &run) const {
  write_if_changed(run_path(run.cell, run.split), to_json(run).dump(2) + "\n");
}

std::optional<MetricsRecord> ResultsStore::load_record(const GridCell &cell) const {
  const auto j = read_json(record_path(cell));
  if (!j) return std::nullopt;
  return metrics_record_from_json(*j);
}

void ResultsStore::save_record(const GridCell &cell, const MetricsRecord &record) const {
  json j = to_json(record);
  j["cell"] = to_json(cell);
  write_if_changed(record_path(cell), j.dump(2) + "\n");
}

std::vector<MetricsRecord> ResultsStore::load_records() const {
  std::vector<std::pair<std::string, MetricsRecord>> found;
  if (!fs::exists(root_)) return {};
  for (const auto &entry : fs::directory_iterator(root_)) {
    if (!entry.is_directory()) continue;
    const auto j = read_json(entry.path() / "record.json");
    if (j) found.emplace_back(entry.path().filename().string(), metrics_record_from_json(*j));
  }
  std::sort(found.begin(), found.end(), [](const auto &a, const auto &b) { return a.first < b.first; });
  std::vector<MetricsRecord> out;
  for (auto &f : found) out.push_back(std::move(f.second));
  return out;
}

RunRecord run_cell(const ExperimentConfig &cfg, const GridCell &cell, int split_index, const SampleSource &source,
                   const LossContext &ctx, const ResultsStore &store, const RunOptions &opts) {
  if (split_index < 0 || split_index >= cfg.train.n_splits)
    throw ConfigError("split index " + std::to_string(split_index) + " outside [0, n_splits)");
  if (cell.kind != ModelKind::Unimodal && !cell.alpha_a) throw ConfigError("multimodal cells need an alpha_a");
  const std::string hash = run_config_hash(cfg, cell, split_index);
  if (!opts.force) {
    if (auto existing = store.load_run(cell, split_index); existing && existing->config_hash == hash) {
      say(opts, cell.key() + " split " + std::to_string(split_index) + ": up to date");
      return *existing;
    }
  }

  const RunSeeds seeds = run_seeds(cfg, split_index);
  const std::vector<PairedSample> all = source(cell.quality, cell.alpha_a.value_or(0.0), seeds.misalign);
  std::vector<std::string> ids;
  for (const auto &s : all) ids.push_back(s.case_id);
  const Split split = split_dataset(ids, cfg.train.split_ratios, seeds.split);

  ModelConfig mc{cell.kind, cfg.unet, cfg.localization};
  SynthesisModel model = make_model(mc, seeds.model);
  TrainConfig tc = cfg.train;
  tc.seed = seeds.train;

  fs::create_directories(store.cell_dir(cell));
  TrainOptions to;
  to.checkpoint_path = store.checkpoint_path(cell, split_index);
  to.log_path = store.log_path(cell, split_index);
  to.checkpoint_extra = {{"cell", to_json(cell)}, {"split", split_index}, {"run_hash", hash}};
  to.on_epoch = [&](const EpochLog &e) {
    if (opts.on_epoch) opts.on_epoch(e);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s split %d epoch %d: train %.5f val %.5f (%.1fs)", cell.key().c_str(), split_index,
                  e.epoch, e.train_loss, e.val_loss, e.wall_seconds);
    say(opts, buf);
  };

  const std::vector<PairedSample> test_set = select(all, split.test);
  const TrainResult tr = train(model, select(all, split.train), select(all, split.val), tc, ctx, to);
  const std::set<std::string> test_ids(split.test.begin(), split.test.end());
  for (const auto &id : tr.gradient_cases)
    if (test_ids.count(id)) throw Error("test case " + id + " contributed to a gradient step");

  RunRecord run;
  run.cell = cell;
  run.split = split_index;
  run.config_hash = hash;
  run.train_ids = split.train;
  run.val_ids = split.val;
  run.test_ids = split.test;
  run.history = tr.history;
  run.best_epoch = tr.best_epoch;
  run.cases = evaluate(model, test_set, ctx);
  store.save_run(run);
  return run;
}

std::vector<MetricsRecord> run_grid(const ExperimentConfig &cfg, const SampleSource &source, const LossContext &ctx,
                                    const ResultsStore &store, const RunOptions &opts,
                                    const std::optional<std::vector<GridCell>> &cells) {
  cfg.validate();
  const std::vector<GridCell> all = enumerate_cells(cfg.grid);
  std::vector<GridCell> todo = cells.value_or(all);
  for (const auto &c : todo)
    if (std::find(all.begin(), all.end(), c) == all.end()) throw ConfigError("cell " + c.key() + " is not in the grid");

  std::vector<MetricsRecord> out;
  for (const auto &cell : todo) {
    std::vector<std::vector<CaseMetrics>> runs;
    for (int s = 0; s < cfg.train.n_splits; ++s) runs.push_back(run_cell(cfg, cell, s, source, ctx, store, opts).cases);
    MetricsRecord r = make_record(cell.kind, cell.alpha_a, cell.quality, runs);
    store.save_record(cell, r);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CaseMetrics> evaluate_checkpoint(const ExperimentConfig &cfg, const fs::path &checkpoint,
                                             const SampleSource &source, const LossContext &ctx) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const json &extra = ck.meta.extra;
  if (!extra.contains("cell") || !extra.contains("split"))
    throw DataError("checkpoint " + checkpoint.string() + " does not record its grid cell");
  const GridCell cell = grid_cell_from_json(extra.at("cell"));
  const int split_index = extra.at("split").get<int>();
  const RunSeeds seeds = run_seeds(cfg, split_index);
  const std::vector<PairedSample> all = source(cell.quality, cell.alpha_a.value_or(0.0), seeds.misalign);
  std::vector<std::string> ids;
  for (const auto &s : all) ids.push_back(s.case_id);
  const Split split = split_dataset(ids, cfg.train.split_ratios, seeds.split);
  return evaluate(ck.model, select(all, split.test), ctx);
}

Montage build_montage(const ExperimentConfig &cfg, const ResultsStore &store, const SampleSource &source, double alpha_a) {
  const RunSeeds seeds = run_seeds(cfg, 0);
  Montage m;
  for (ModelKind k : cfg.grid.variants) m.column_labels.push_back(display_name(k));
  for (int q : cfg.grid.quality_levels) {
    const std::vector<PairedSample> all = source(q, alpha_a, seeds.misalign);
    std::vector<std::string> ids;
    for (const auto &s : all) ids.push_back(s.case_id);
    const Split split = split_dataset(ids, cfg.train.split_ratios, seeds.split);
    if (split.test.empty()) throw DataError("split 0 has no test cases");
    const std::string shown = split.test[derive_seed(cfg.train.seed, {0x6d6f6e74616765, static_cast<uint64_t>(q)}) %
                                         split.test.size()];
    const PairedSample sample = select(all, {shown}).front();
    m.row_labels.push_back("q" + std::to_string(q) + " " + shown);
    std::vector<Volume> row;
    for (ModelKind k : cfg.grid.variants) {
      const GridCell cell{k, k == ModelKind::Unimodal ? std::nullopt : std::optional<double>(alpha_a), q};
      const fs::path ck = store.checkpoint_path(cell, 0);
      if (!fs::exists(ck)) throw DataError("missing checkpoint " + ck.string());
      LoadedCheckpoint loaded = load_checkpoint(ck);
      loaded.model->eval();
      row.push_back(forward(loaded.model, sample).y_hat);
    }
    m.panels.push_back(std::move(row));
  }
  return m;
}

} // namespace sct
