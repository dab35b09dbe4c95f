#include "sct/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "sct/config.hpp"
#include "sct/errors.hpp"
#include "sct/seed.hpp"

namespace sct {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw InvalidArgument("learning_rate must be positive");
  if (weight_decay < 0) throw InvalidArgument("weight_decay must be >= 0");
  if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (accumulation_steps < 1) throw InvalidArgument("accumulation_steps must be >= 1");
  if (per_step_batch < 1) throw InvalidArgument("per_step_batch must be >= 1");
  if (n_splits < 1) throw InvalidArgument("n_splits must be >= 1");
  for (auto r : split_ratios)
    if (r < 0) throw InvalidArgument("split ratios must be non-negative");
  const double sum = split_ratios[0] + split_ratios[1] + split_ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("split ratios must sum to 1");
}

void ExperimentGrid::validate() const {
  if (variants.empty() || alpha_a_levels.empty() || quality_levels.empty())
    throw InvalidArgument("experiment grid axes must be non-empty");
  for (auto a : alpha_a_levels)
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("alpha_a levels must lie in [0, 1]");
  for (auto q : quality_levels)
    if (q != 32 && q != 64 && q != 128 && q != 256) throw InvalidArgument("quality levels must be in {32,64,128,256}");
}

namespace {

// Fisher-Yates over a portable 64-bit stream.
template <typename T> void shuffle_in_place(std::vector<T> &v, uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

} // namespace

Split split_dataset(const std::vector<std::string> &case_ids, const std::array<double, 3> &ratios, uint64_t split_seed) {
  if (case_ids.size() < 10) throw DataError("split_dataset needs at least 10 cases, got " + std::to_string(case_ids.size()));
  if (std::set<std::string>(case_ids.begin(), case_ids.end()).size() != case_ids.size())
    throw DataError("split_dataset: duplicate case ids");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("split ratios must sum to 1");

  std::vector<std::string> ids = case_ids;
  shuffle_in_place(ids, split_seed);
  const auto n = static_cast<double>(ids.size());
  // Small epsilon keeps exact products (e.g. 10 * 0.7) from flooring one low.
  const auto n_val = static_cast<size_t>(std::floor(n * ratios[1] + 1e-9));
  const auto n_test = static_cast<size_t>(std::floor(n * ratios[2] + 1e-9));
  const size_t n_train = ids.size() - n_val - n_test;

  Split s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return s;
}

int64_t optimizer_steps_per_epoch(int64_t n_train, const TrainConfig &cfg) {
  const int64_t window = static_cast<int64_t>(cfg.accumulation_steps) * cfg.per_step_batch;
  return (n_train + window - 1) / window;
}

namespace {

torch::Dtype model_dtype(SynthesisModel &model) {
  auto params = model->parameters();
  return params.empty() ? torch::kFloat32 : params.front().scalar_type();
}

std::vector<torch::Tensor> snapshot(torch::nn::Module &m) {
  std::vector<torch::Tensor> out;
  for (const auto &p : m.parameters()) out.push_back(p.detach().clone());
  for (const auto &b : m.buffers()) out.push_back(b.detach().clone());
  return out;
}

void restore(torch::nn::Module &m, const std::vector<torch::Tensor> &state) {
  torch::NoGradGuard no_grad;
  size_t i = 0;
  for (auto &p : m.parameters()) p.copy_(state[i++]);
  for (auto &b : m.buffers()) b.copy_(state[i++]);
}

double sample_loss(SynthesisModel &model, const PairedSample &s, const LossContext &ctx, torch::Dtype dtype) {
  const Batch batch = stack_samples(std::span<const PairedSample>(&s, 1), dtype);
  const ForwardOutput out = model->forward(batch);
  return loss_for(model->kind(), out, batch.y, ctx).total.item<double>();
}

// Loss over a set with batch statistics, as the network sees data during an
// epoch. Normalization running averages are left untouched.
double train_mode_loss(SynthesisModel &model, const std::vector<PairedSample> &samples, const LossContext &ctx) {
  torch::NoGradGuard no_grad;
  const auto state = snapshot(*model);
  const bool was_training = model->is_training();
  model->train();
  const torch::Dtype dtype = model_dtype(model);
  double total = 0.0;
  for (const auto &s : samples) total += sample_loss(model, s, ctx, dtype);
  restore(*model, state);
  model->train(was_training);
  return total / static_cast<double>(samples.size());
}

void append_log(const std::filesystem::path &path, const EpochLog &e) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw IoError("cannot append to " + path.string());
  json j = {{"epoch", e.epoch},
            {"train_loss", e.train_loss},
            {"val_loss", e.val_loss},
            {"optimizer_steps", e.optimizer_steps},
            {"wall_seconds", e.wall_seconds}};
  os << j.dump() << "\n";
}

} // namespace

double mean_loss(SynthesisModel &model, const std::vector<PairedSample> &samples, const LossContext &ctx) {
  if (samples.empty()) throw InvalidArgument("mean_loss over an empty set");
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  const torch::Dtype dtype = model_dtype(model);
  double total = 0.0;
  for (const auto &s : samples) total += sample_loss(model, s, ctx, dtype);
  model->train(was_training);
  return total / static_cast<double>(samples.size());
}

TrainResult train(SynthesisModel &model, const std::vector<PairedSample> &train_set,
                  const std::vector<PairedSample> &val_set, const TrainConfig &cfg, const LossContext &ctx,
                  const TrainOptions &opts) {
  cfg.validate();
  if (train_set.empty()) throw InvalidArgument("training set is empty");
  const std::vector<PairedSample> &selection_set = val_set.empty() ? train_set : val_set;
  const torch::Dtype dtype = model_dtype(model);

  torch::optim::Adam optimizer(model->parameters(),
                               torch::optim::AdamOptions(cfg.learning_rate).weight_decay(cfg.weight_decay));
  if (opts.log_path) std::ofstream(*opts.log_path, std::ios::trunc);

  TrainResult result;
  std::set<std::string> gradient_cases;
  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  EpochLog initial;
  initial.epoch = 0;
  initial.train_loss = train_mode_loss(model, train_set, ctx);
  initial.val_loss = mean_loss(model, selection_set, ctx);
  initial.wall_seconds = elapsed();
  result.history.push_back(initial);
  if (opts.log_path) append_log(*opts.log_path, initial);
  if (opts.on_epoch) opts.on_epoch(initial);

  result.best_epoch = 0;
  result.best_val_loss = initial.val_loss;
  std::vector<torch::Tensor> best_state = snapshot(*model);

  const auto save_best = [&](int epoch, double val) {
    if (!opts.checkpoint_path) return;
    CheckpointMeta meta{model->config(), cfg, epoch, val, opts.checkpoint_extra};
    save_checkpoint(*opts.checkpoint_path, model, meta, &optimizer);
  };
  save_best(0, initial.val_loss);

  const auto n = static_cast<int64_t>(train_set.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    model->train();
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    shuffle_in_place(order, derive_seed(cfg.seed, {0x65706f6368ULL, static_cast<uint64_t>(epoch)}));

    optimizer.zero_grad();
    int window = 0;
    double running = 0.0;
    for (int64_t start = 0; start < n; start += cfg.per_step_batch) {
      const int64_t stop = std::min<int64_t>(n, start + cfg.per_step_batch);
      std::vector<PairedSample> micro;
      for (int64_t i = start; i < stop; ++i) micro.push_back(train_set[static_cast<size_t>(order[static_cast<size_t>(i)])]);
      const Batch batch = stack_samples(micro, dtype);
      const ForwardOutput out = model->forward(batch);
      const LossTerms terms = loss_for(model->kind(), out, batch.y, ctx);
      const double value = terms.total.item<double>();
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << " on case " << micro.front().case_id << " (seed " << cfg.seed
           << ")";
        throw TrainingDiverged(os.str());
      }
      (terms.total / static_cast<double>(cfg.accumulation_steps)).backward();
      for (const auto &s : micro) gradient_cases.insert(s.case_id);
      running += value * static_cast<double>(micro.size());
      if (++window == cfg.accumulation_steps || stop == n) {
        optimizer.step();
        optimizer.zero_grad();
        ++result.optimizer_steps;
        window = 0;
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = running / static_cast<double>(n);
    log.val_loss = mean_loss(model, selection_set, ctx);
    log.optimizer_steps = result.optimizer_steps;
    log.wall_seconds = elapsed();
    result.history.push_back(log);
    if (opts.log_path) append_log(*opts.log_path, log);
    if (opts.on_epoch) opts.on_epoch(log);

    if (log.val_loss < result.best_val_loss) {
      result.best_val_loss = log.val_loss;
      result.best_epoch = epoch;
      best_state = snapshot(*model);
      save_best(epoch, log.val_loss);
    }
  }

  if (opts.restore_best) restore(*model, best_state);
  model->eval();
  result.gradient_cases.assign(gradient_cases.begin(), gradient_cases.end());
  return result;
}

// ---------------------------------------------------------------------------

std::string CheckpointMeta::config_hash() const {
  const json fingerprint = {{"model", to_json(model)}, {"train", to_json(train)}};
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(fingerprint.dump());
  return os.str();
}

void save_checkpoint(const std::filesystem::path &path, SynthesisModel &model, const CheckpointMeta &meta,
                     torch::optim::Optimizer *optimizer) {
  const json j = {{"model", to_json(meta.model)},
                  {"train", to_json(meta.train)},
                  {"epoch", meta.epoch},
                  {"val_loss", meta.val_loss},
                  {"config_hash", meta.config_hash()},
                  {"extra", meta.extra}};
  torch::serialize::OutputArchive archive;
  archive.write("meta", c10::IValue(j.dump()));
  torch::serialize::OutputArchive model_archive;
  model->save(model_archive);
  archive.write("model", model_archive);
  if (optimizer) {
    torch::serialize::OutputArchive opt_archive;
    optimizer->save(opt_archive);
    archive.write("optimizer", opt_archive);
  }
  // Write-then-rename so a concurrent reader never sees a torn file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  try {
    archive.save_to(tmp.string());
  } catch (const c10::Error &e) {
    throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path &path) {
  if (!std::filesystem::exists(path)) throw IoError("no such checkpoint: " + path.string());
  torch::serialize::InputArchive archive;
  c10::IValue meta_value;
  try {
    archive.load_from(path.string());
    archive.read("meta", meta_value);
  } catch (const c10::Error &e) {
    throw DataError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  const json j = json::parse(meta_value.toStringRef());
  LoadedCheckpoint out;
  out.meta.model = model_config_from_json(j.at("model"));
  out.meta.train = train_config_from_json(j.at("train"));
  out.meta.epoch = j.at("epoch").get<int>();
  out.meta.val_loss = j.at("val_loss").get<double>();
  out.meta.extra = j.value("extra", json::object());
  if (j.value("config_hash", std::string()) != out.meta.config_hash())
    throw DataError("checkpoint " + path.string() + " has a mismatched config hash");
  out.model = SynthesisModel(out.meta.model);
  torch::serialize::InputArchive model_archive;
  archive.read("model", model_archive);
  out.model->load(model_archive);
  out.model->eval();
  return out;
}

} // namespace sct
