#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hca/data.hpp"
#include "hca/model.hpp"
#include "hca/training.hpp"

namespace hca {

// ---- Metrics ----------------------------------------------------------------

double mae(std::span<const double> y, std::span<const double> yhat);
double mse(std::span<const double> y, std::span<const double> yhat);

// 1 - sum((y - yhat)^2) / sum((y - mean(y))^2); rejects constant y.
double r_squared(std::span<const double> y, std::span<const double> yhat);

// Sample Pearson correlation; rejects constant inputs.
double pearson(std::span<const double> y, std::span<const double> yhat);

// Mann-Whitney AUC with midrank tie handling:
// P(score+ > score-) + P(tie)/2. Needs both classes present.
double auc(std::span<const double> scores, std::span<const int> binary_labels);

// ---- Patient-grouped cross-validation ---------------------------------------

struct FoldAssignment {
  int k = 0;
  std::unordered_map<std::string, int> fold_of_sample;
};

// Patients are shuffled by seed, then assigned round-robin in order of
// descending sample count so fold sizes stay balanced. All samples of one
// patient land in one fold.
FoldAssignment kfold_split(
    const std::vector<std::pair<std::string, std::string>>& sample_patient_pairs, int k,
    std::uint64_t seed);

struct MetricReport {
  int fold = 0;
  std::uint64_t seed = 0;
  double mae = 0.0;
  double mse = 0.0;
  double r2_geographic_extend = 0.0;
  double rho_geographic_extend = 0.0;
  double r2_opacity = 0.0;
  double rho_opacity = 0.0;
};

struct AggregateStat {
  double mean = 0.0;
  double std = 0.0;  // sample (n-1) standard deviation
  std::vector<double> per_fold;
};

using AggregateReport = std::map<std::string, AggregateStat>;

AggregateReport aggregate(const std::vector<MetricReport>& folds);

struct PredictionRow {
  int fold = 0;
  std::string sample_id;
  std::string attribute;  // geographic_extend | opacity
  double actual = 0.0;
  double predicted = 0.0;
};

struct CrossvalResult {
  std::vector<MetricReport> folds;
  AggregateReport aggregated;
  std::vector<PredictionRow> predictions;
  std::vector<LossTrace> fold_traces;
};

// Per fold: fresh init (optionally adopting non-head weights from the
// pretrained donor), fine-tune on the other folds, evaluate on the held-out
// fold. Folds may run on up to `jobs` threads; results are merged by fold
// index and do not depend on the thread count.
CrossvalResult crossval(const ModelSpec& spec, const Dataset& dataset,
                        const Checkpoint* pretrained, const FinetuneConfig& cfg, int k,
                        std::uint64_t seed, int jobs = 1);

// fold,sample_id,attribute,actual,predicted
void write_predictions_csv(const std::vector<PredictionRow>& rows,
                           const std::filesystem::path& path);

// fold,mae,mse,r2_geographic_extend,rho_geographic_extend,r2_opacity,rho_opacity
void write_fold_metrics_csv(const std::vector<MetricReport>& folds,
                            const std::filesystem::path& path);

}  // namespace hca
