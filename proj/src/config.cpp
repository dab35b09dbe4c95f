#include "sct/config.hpp"

#include <fstream>
#include <set>

#include "sct/errors.hpp"

namespace sct {

using nlohmann::json;

namespace {

// Reads fields from one JSON object, remembering which keys were consumed so
// leftovers can be reported as unknown.
class ObjectReader {
public:
  ObjectReader(const json &j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T> void read(const char *key, T &out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception &) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  const json *child(const char *key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto &[k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
  }

private:
  const json &j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename F> auto guarded(F &&f) {
  try {
    return f();
  } catch (const ConfigError &) {
    throw;
  } catch (const Error &e) {
    throw ConfigError(e.what());
  }
}

} // namespace

json to_json(const UNetConfig &c) {
  return {{"features", {c.encoder_features[0], c.encoder_features[1], c.encoder_features[2], c.bottleneck_features}},
          {"in_channels", c.in_channels},
          {"out_channels", c.out_channels}};
}

UNetConfig unet_config_from_json(const json &j) {
  UNetConfig c;
  ObjectReader r(j, "unet");
  std::vector<int64_t> f{c.encoder_features[0], c.encoder_features[1], c.encoder_features[2], c.bottleneck_features};
  r.read("features", f);
  if (f.size() != 4) throw ConfigError("unet.features must list four levels");
  c.encoder_features = {f[0], f[1], f[2]};
  c.bottleneck_features = f[3];
  r.read("in_channels", c.in_channels);
  r.read("out_channels", c.out_channels);
  r.finish();
  guarded([&] { c.validate(); return 0; });
  return c;
}

json to_json(const LocalizationConfig &c) {
  return {{"conv_filters", c.conv_filters},
          {"conv_kernels", c.conv_kernels},
          {"pool_after_first", c.pool_after_first},
          {"head_widths", c.head_widths}};
}

LocalizationConfig localization_config_from_json(const json &j) {
  LocalizationConfig c;
  ObjectReader r(j, "localization");
  r.read("conv_filters", c.conv_filters);
  r.read("conv_kernels", c.conv_kernels);
  r.read("pool_after_first", c.pool_after_first);
  r.read("head_widths", c.head_widths);
  r.finish();
  guarded([&] { c.validate(); return 0; });
  return c;
}

json to_json(const ModelConfig &c) {
  return {{"kind", to_string(c.kind)}, {"unet", to_json(c.unet)}, {"localization", to_json(c.localization)}};
}

ModelConfig model_config_from_json(const json &j) {
  ModelConfig c;
  ObjectReader r(j, "model");
  std::string kind = to_string(c.kind);
  r.read("kind", kind);
  c.kind = parse_model_kind(kind);
  if (const json *u = r.child("unet")) c.unet = unet_config_from_json(*u);
  if (const json *l = r.child("localization")) c.localization = localization_config_from_json(*l);
  r.finish();
  return c;
}

json to_json(const TrainConfig &c) {
  return {{"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"accumulation_steps", c.accumulation_steps},
          {"per_step_batch", c.per_step_batch},
          {"split_ratios", c.split_ratios},
          {"n_splits", c.n_splits},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json &j) {
  TrainConfig c;
  ObjectReader r(j, "train");
  r.read("learning_rate", c.learning_rate);
  r.read("weight_decay", c.weight_decay);
  r.read("epochs", c.epochs);
  r.read("accumulation_steps", c.accumulation_steps);
  r.read("per_step_batch", c.per_step_batch);
  r.read("split_ratios", c.split_ratios);
  r.read("n_splits", c.n_splits);
  r.read("seed", c.seed);
  r.finish();
  guarded([&] { c.validate(); return 0; });
  return c;
}

json to_json(const LossWeights &c) {
  return {{"alpha1", c.alpha1}, {"alpha2", c.alpha2}, {"alpha3", c.alpha3}, {"reg_weight", c.reg_weight}};
}

LossWeights loss_weights_from_json(const json &j) {
  LossWeights c;
  ObjectReader r(j, "loss.weights");
  r.read("alpha1", c.alpha1);
  r.read("alpha2", c.alpha2);
  r.read("alpha3", c.alpha3);
  r.read("reg_weight", c.reg_weight);
  r.finish();
  guarded([&] { c.validate(); return 0; });
  return c;
}

json to_json(const SSIMConfig &c) {
  return {{"window", c.window}, {"sigma", c.sigma}, {"k1", c.k1}, {"k2", c.k2}, {"dynamic_range", c.dynamic_range}};
}

SSIMConfig ssim_config_from_json(const json &j) {
  SSIMConfig c;
  ObjectReader r(j, "loss.ssim");
  r.read("window", c.window);
  r.read("sigma", c.sigma);
  r.read("k1", c.k1);
  r.read("k2", c.k2);
  r.read("dynamic_range", c.dynamic_range);
  r.finish();
  guarded([&] { c.validate(); return 0; });
  return c;
}

json to_json(const PhantomSpec &c) {
  return {{"size", c.size},
          {"n_organs", c.n_organs},
          {"organ_intensity_range", c.organ_intensity_range},
          {"shell_intensity", c.shell_intensity},
          {"shell", c.shell},
          {"seed", c.seed}};
}

PhantomSpec phantom_spec_from_json(const json &j) {
  PhantomSpec c;
  ObjectReader r(j, "phantom");
  r.read("size", c.size);
  r.read("n_organs", c.n_organs);
  r.read("organ_intensity_range", c.organ_intensity_range);
  r.read("shell_intensity", c.shell_intensity);
  r.read("shell", c.shell);
  r.read("seed", c.seed);
  r.finish();
  guarded([&] { c.validate(); return 0; });
  return c;
}

json to_json(const NormalizationSpec &c) { return {{"hu_min", c.hu_min}, {"hu_max", c.hu_max}}; }

NormalizationSpec normalization_from_json(const json &j) {
  NormalizationSpec c;
  ObjectReader r(j, "normalization");
  r.read("hu_min", c.hu_min);
  r.read("hu_max", c.hu_max);
  r.finish();
  guarded([&] { c.validate(); return 0; });
  return c;
}

json to_json(const ExperimentGrid &c) {
  json variants = json::array();
  for (auto k : c.variants) variants.push_back(to_string(k));
  return {{"variants", variants}, {"alpha_a_levels", c.alpha_a_levels}, {"quality_levels", c.quality_levels}};
}

ExperimentGrid grid_from_json(const json &j) {
  ExperimentGrid c;
  ObjectReader r(j, "grid");
  std::vector<std::string> variants;
  for (auto k : c.variants) variants.push_back(to_string(k));
  r.read("variants", variants);
  c.variants.clear();
  for (const auto &v : variants) c.variants.push_back(parse_model_kind(v));
  r.read("alpha_a_levels", c.alpha_a_levels);
  r.read("quality_levels", c.quality_levels);
  r.finish();
  guarded([&] { c.validate(); return 0; });
  return c;
}

void ExperimentConfig::validate() const {
  grid.validate();
  train.validate();
  normalization.validate();
  phantom.validate();
  unet.validate();
  localization.validate();
  loss.weights.validate();
  loss.ssim.validate();
  if (dataset.n_cases < 1) throw ConfigError("dataset.n_cases must be positive");
  if (loss.extractor != "vgg16" && loss.extractor != "identity")
    throw ConfigError("loss.extractor must be 'vgg16' or 'identity'");
}

json to_json(const ExperimentConfig &c) {
  return {{"data_root", c.data_root.string()},
          {"output_dir", c.output_dir.string()},
          {"grid", to_json(c.grid)},
          {"train", to_json(c.train)},
          {"normalization", to_json(c.normalization)},
          {"phantom", to_json(c.phantom)},
          {"dataset",
           {{"n_cases", c.dataset.n_cases},
            {"translation_unit", to_string(c.dataset.translation_unit)},
            {"misalign_seed", c.dataset.misalign_seed}}},
          {"unet", to_json(c.unet)},
          {"localization", to_json(c.localization)},
          {"loss",
           {{"weights", to_json(c.loss.weights)},
            {"ssim", to_json(c.loss.ssim)},
            {"extractor", c.loss.extractor},
            {"vgg_weights", c.loss.vgg_weights.string()},
            {"extractor_seed", c.loss.extractor_seed}}}};
}

ExperimentConfig experiment_config_from_json(const json &j) {
  ExperimentConfig c;
  ObjectReader r(j, "config");
  std::string data_root = c.data_root.string();
  std::string output_dir = c.output_dir.string();
  r.read("data_root", data_root);
  r.read("output_dir", output_dir);
  c.data_root = data_root;
  c.output_dir = output_dir;
  if (const json *g = r.child("grid")) c.grid = grid_from_json(*g);
  if (const json *t = r.child("train")) c.train = train_config_from_json(*t);
  if (const json *n = r.child("normalization")) c.normalization = normalization_from_json(*n);
  if (const json *p = r.child("phantom")) c.phantom = phantom_spec_from_json(*p);
  if (const json *d = r.child("dataset")) {
    ObjectReader dr(*d, "dataset");
    dr.read("n_cases", c.dataset.n_cases);
    std::string unit = to_string(c.dataset.translation_unit);
    dr.read("translation_unit", unit);
    c.dataset.translation_unit = parse_translation_unit(unit);
    dr.read("misalign_seed", c.dataset.misalign_seed);
    dr.finish();
  }
  if (const json *u = r.child("unet")) c.unet = unet_config_from_json(*u);
  if (const json *l = r.child("localization")) c.localization = localization_config_from_json(*l);
  if (const json *l = r.child("loss")) {
    ObjectReader lr(*l, "loss");
    if (const json *w = lr.child("weights")) c.loss.weights = loss_weights_from_json(*w);
    if (const json *s = lr.child("ssim")) c.loss.ssim = ssim_config_from_json(*s);
    lr.read("extractor", c.loss.extractor);
    std::string weights = c.loss.vgg_weights.string();
    lr.read("vgg_weights", weights);
    c.loss.vgg_weights = weights;
    lr.read("extractor_seed", c.loss.extractor_seed);
    lr.finish();
  }
  r.finish();
  guarded([&] { c.validate(); return 0; });
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

LossContext make_loss_context(const LossOptions &opts) {
  LossContext ctx;
  ctx.weights = opts.weights;
  ctx.ssim = opts.ssim;
  if (opts.extractor == "identity")
    ctx.extractor = std::make_shared<IdentityExtractor>();
  else
    ctx.extractor = make_default_extractor(opts.vgg_weights, opts.extractor_seed);
  return ctx;
}

} // namespace sct
