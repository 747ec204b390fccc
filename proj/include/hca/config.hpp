#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hca/data.hpp"
#include "hca/evaluation.hpp"
#include "hca/model.hpp"
#include "hca/training.hpp"

namespace hca {

// Dataset source: a manifest on disk, or generator parameters.
struct DataSourceConfig {
  std::optional<std::string> manifest;
  std::uint64_t seed = 0;
  int n = 0;
  double noise_sd = 0.0;
  ImageGeometry geometry;
};

// One experiment configuration file. Schema-validated strictly: unknown keys
// are rejected with their JSON pointer path.
struct RunConfig {
  std::string label;
  ModelSpec model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  std::optional<DataSourceConfig> proxy;
  std::optional<DataSourceConfig> target;
  std::optional<std::string> pretrain_checkpoint;
  int k = 5;
  std::vector<std::uint64_t> seeds = {1};
  int jobs = 1;
  std::string out_dir;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j, const std::string& where);

// Short backbone identity used to group report rows into blocks.
std::string backbone_label(const BackboneSpec& spec);

// Aggregate JSON emitted by crossval runs ({metric: {mean, std, per_fold}}
// plus run identity).
nlohmann::json aggregate_to_json(const std::string& label, const std::string& backbone,
                                 AttentionKind attention, bool pretrained, std::uint64_t seed,
                                 int k, const AggregateReport& report);

// Markdown table over aggregate JSONs: one block per backbone, four arm rows,
// mean +/- std cells, best cell per block in bold (min MAE/MSE, max R2/rho).
std::string render_report_table(const std::vector<nlohmann::json>& aggregates);

}  // namespace hca
