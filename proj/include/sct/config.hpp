#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "sct/affine.hpp"
#include "sct/losses.hpp"
#include "sct/phantom.hpp"
#include "sct/pipeline.hpp"
#include "sct/trainer.hpp"
#include "sct/volume.hpp"

namespace sct {

/// JSON forms of the configuration structs. Readers reject unknown keys and
/// wrong types with ConfigError; absent keys keep their defaults.
nlohmann::json to_json(const UNetConfig &c);
nlohmann::json to_json(const LocalizationConfig &c);
nlohmann::json to_json(const ModelConfig &c);
nlohmann::json to_json(const TrainConfig &c);
nlohmann::json to_json(const LossWeights &c);
nlohmann::json to_json(const SSIMConfig &c);
nlohmann::json to_json(const PhantomSpec &c);
nlohmann::json to_json(const NormalizationSpec &c);
nlohmann::json to_json(const ExperimentGrid &c);

UNetConfig unet_config_from_json(const nlohmann::json &j);
LocalizationConfig localization_config_from_json(const nlohmann::json &j);
ModelConfig model_config_from_json(const nlohmann::json &j);
TrainConfig train_config_from_json(const nlohmann::json &j);
LossWeights loss_weights_from_json(const nlohmann::json &j);
SSIMConfig ssim_config_from_json(const nlohmann::json &j);
PhantomSpec phantom_spec_from_json(const nlohmann::json &j);
NormalizationSpec normalization_from_json(const nlohmann::json &j);
ExperimentGrid grid_from_json(const nlohmann::json &j);

struct DatasetOptions {
  int n_cases = 20;
  TranslationUnit translation_unit = TranslationUnit::Millimeter;
  uint64_t misalign_seed = 0;
};

struct LossOptions {
  LossWeights weights{};
  SSIMConfig ssim{};
  std::string extractor = "vgg16"; // vgg16 | identity
  std::filesystem::path vgg_weights;
  uint64_t extractor_seed = 0;
};

/// Everything a CLI workflow needs, loaded from one JSON document.
struct ExperimentConfig {
  std::filesystem::path data_root = "data";
  std::filesystem::path output_dir = "runs";
  ExperimentGrid grid{};
  TrainConfig train{};
  NormalizationSpec normalization{};
  PhantomSpec phantom{};
  DatasetOptions dataset{};
  UNetConfig unet{};
  LocalizationConfig localization{};
  LossOptions loss{};

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig &c);
ExperimentConfig experiment_config_from_json(const nlohmann::json &j);
ExperimentConfig load_experiment_config(const std::filesystem::path &path);

LossContext make_loss_context(const LossOptions &opts);

} // namespace sct
