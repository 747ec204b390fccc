#include "hca/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

namespace hca {

namespace {

void check_lengths(std::span<const double> y, std::span<const double> yhat) {
  check_param(!y.empty(), "metric: empty input");
  check_param(y.size() == yhat.size(), "metric: length mismatch");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double mae(std::span<const double> y, std::span<const double> yhat) {
  check_lengths(y, yhat);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += std::abs(y[i] - yhat[i]);
  return total / static_cast<double>(y.size());
}

double mse(std::span<const double> y, std::span<const double> yhat) {
  check_lengths(y, yhat);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return total / static_cast<double>(y.size());
}

double r_squared(std::span<const double> y, std::span<const double> yhat) {
  check_lengths(y, yhat);
  check_param(y.size() >= 2, "r_squared: need at least two points");
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  check_data(ss_tot > 0.0, "r_squared: constant actuals are degenerate");
  return 1.0 - ss_res / ss_tot;
}

double pearson(std::span<const double> y, std::span<const double> yhat) {
  check_lengths(y, yhat);
  check_param(y.size() >= 2, "pearson: need at least two points");
  const double n = static_cast<double>(y.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  const double mp = std::accumulate(yhat.begin(), yhat.end(), 0.0) / n;
  double cov = 0.0, vy = 0.0, vp = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    cov += (y[i] - my) * (yhat[i] - mp);
    vy += (y[i] - my) * (y[i] - my);
    vp += (yhat[i] - mp) * (yhat[i] - mp);
  }
  check_data(vy > 0.0 && vp > 0.0, "pearson: constant input is degenerate");
  return cov / std::sqrt(vy * vp);
}

double auc(std::span<const double> scores, std::span<const int> binary_labels) {
  check_param(scores.size() == binary_labels.size(), "auc: length mismatch");
  check_param(!scores.empty(), "auc: empty input");
  std::size_t n_pos = 0;
  for (int l : binary_labels) {
    check_data(l == 0 || l == 1, "auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = scores.size() - n_pos;
  check_data(n_pos > 0 && n_neg > 0, "auc: needs both classes present");

  // Midranks over the pooled scores.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = midrank;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (std::size_t s = 0; s < scores.size(); ++s)
    if (binary_labels[s] == 1) rank_sum_pos += rank[s];
  const double u = rank_sum_pos - static_cast<double>(n_pos) *
                                      (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

FoldAssignment kfold_split(
    const std::vector<std::pair<std::string, std::string>>& sample_patient_pairs, int k,
    std::uint64_t seed) {
  check_param(k >= 2, "kfold_split: k must be >= 2");
  check_param(!sample_patient_pairs.empty(), "kfold_split: no samples");

  // Patients in first-appearance order with their sample counts.
  std::vector<std::string> patients;
  std::unordered_map<std::string, std::size_t> patient_index;
  std::vector<std::size_t> counts;
  for (const auto& [sample_id, patient_id] : sample_patient_pairs) {
    auto [it, inserted] = patient_index.emplace(patient_id, patients.size());
    if (inserted) {
      patients.push_back(patient_id);
      counts.push_back(0);
    }
    ++counts[it->second];
  }
  check_data(static_cast<int>(patients.size()) >= k,
             "kfold_split: fewer distinct patients (" + std::to_string(patients.size()) +
                 ") than folds (" + std::to_string(k) + ")");

  std::vector<std::size_t> order(patients.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  // Stable by-count sort keeps the shuffled order within equal counts.
  std::stable_sort(order.begin(), order.end(), [&counts](std::size_t a, std::size_t b) {
    return counts[a] > counts[b];
  });

  std::unordered_map<std::string, int> fold_of_patient;
  for (std::size_t i = 0; i < order.size(); ++i)
    fold_of_patient[patients[order[i]]] = static_cast<int>(i % static_cast<std::size_t>(k));

  FoldAssignment out;
  out.k = k;
  for (const auto& [sample_id, patient_id] : sample_patient_pairs)
    out.fold_of_sample[sample_id] = fold_of_patient.at(patient_id);
  return out;
}

AggregateReport aggregate(const std::vector<MetricReport>& folds) {
  check_param(!folds.empty(), "aggregate: no fold reports");
  AggregateReport report;
  const std::vector<std::pair<std::string, double MetricReport::*>> fields = {
      {"mae", &MetricReport::mae},
      {"mse", &MetricReport::mse},
      {"r2_geographic_extend", &MetricReport::r2_geographic_extend},
      {"rho_geographic_extend", &MetricReport::rho_geographic_extend},
      {"r2_opacity", &MetricReport::r2_opacity},
      {"rho_opacity", &MetricReport::rho_opacity},
  };
  for (const auto& [name, member] : fields) {
    AggregateStat stat;
    for (const MetricReport& r : folds) stat.per_fold.push_back(r.*member);
    const double n = static_cast<double>(stat.per_fold.size());
    stat.mean = std::accumulate(stat.per_fold.begin(), stat.per_fold.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : stat.per_fold) ss += (v - stat.mean) * (v - stat.mean);
    stat.std = stat.per_fold.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    report.emplace(name, std::move(stat));
  }
  return report;
}

namespace {

// Deterministic per-fold seed stream (splitmix64 over seed and fold).
std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(fold) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct FoldJob {
  MetricReport report;
  std::vector<PredictionRow> predictions;
  LossTrace trace;
};

FoldJob run_fold(const ModelSpec& spec, const Dataset& dataset, const FoldAssignment& folds,
                 const Checkpoint* pretrained, const FinetuneConfig& cfg, int fold,
                 std::uint64_t seed) {
  Dataset train, held_out;
  train.kind = held_out.kind = dataset.kind;
  train.score_ranges = held_out.score_ranges = dataset.score_ranges;
  for (const Sample& s : dataset.samples) {
    if (folds.fold_of_sample.at(s.sample_id) == fold)
      held_out.samples.push_back(s);
    else
      train.samples.push_back(s);
  }
  check_data(!train.samples.empty() && !held_out.samples.empty(),
             "crossval: empty fold split");

  const std::uint64_t fs = fold_seed(seed, fold);
  Checkpoint start = init(spec, fs);
  if (pretrained) start = adopt_pretrained(std::move(start), *pretrained);

  FinetuneConfig fold_cfg = cfg;
  fold_cfg.seed = fs;
  auto [trained, trace] = finetune(start, train, &held_out, fold_cfg);

  const std::vector<std::vector<double>> preds = predict(trained, held_out);
  std::vector<double> actual_all, pred_all;
  std::vector<double> actual_ge, pred_ge, actual_op, pred_op;
  FoldJob job;
  for (std::size_t i = 0; i < held_out.samples.size(); ++i) {
    const Sample& s = held_out.samples[i];
    actual_ge.push_back(s.labels[0]);
    pred_ge.push_back(preds[i][0]);
    actual_op.push_back(s.labels[1]);
    pred_op.push_back(preds[i][1]);
    for (int a = 0; a < 2; ++a) {
      actual_all.push_back(s.labels[static_cast<std::size_t>(a)]);
      pred_all.push_back(preds[i][static_cast<std::size_t>(a)]);
      job.predictions.push_back(PredictionRow{
          fold, s.sample_id, a == 0 ? "geographic_extend" : "opacity",
          s.labels[static_cast<std::size_t>(a)], preds[i][static_cast<std::size_t>(a)]});
    }
  }

  job.report.fold = fold;
  job.report.seed = seed;
  job.report.mae = mae(actual_all, pred_all);
  job.report.mse = mse(actual_all, pred_all);
  job.report.r2_geographic_extend = r_squared(actual_ge, pred_ge);
  job.report.rho_geographic_extend = pearson(actual_ge, pred_ge);
  job.report.r2_opacity = r_squared(actual_op, pred_op);
  job.report.rho_opacity = pearson(actual_op, pred_op);
  job.trace = std::move(trace);
  return job;
}

}  // namespace

CrossvalResult crossval(const ModelSpec& spec, const Dataset& dataset,
                        const Checkpoint* pretrained, const FinetuneConfig& cfg, int k,
                        std::uint64_t seed, int jobs) {
  check_data(dataset.kind == DatasetKind::Target, "crossval: dataset is not a target set");
  check_param(jobs >= 1, "crossval: jobs must be >= 1");
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(dataset.samples.size());
  for (const Sample& s : dataset.samples) pairs.emplace_back(s.sample_id, s.patient_id);
  const FoldAssignment folds = kfold_split(pairs, k, seed);

  std::vector<FoldJob> results(static_cast<std::size_t>(k));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(k));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int fold = next.fetch_add(1);
      if (fold >= k) return;
      try {
        results[static_cast<std::size_t>(fold)] =
            run_fold(spec, dataset, folds, pretrained, cfg, fold, seed);
      } catch (...) {
        errors[static_cast<std::size_t>(fold)] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(jobs, k); ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);

  CrossvalResult out;
  for (int f = 0; f < k; ++f) {
    FoldJob& job = results[static_cast<std::size_t>(f)];
    out.folds.push_back(job.report);
    out.fold_traces.push_back(std::move(job.trace));
    out.predictions.insert(out.predictions.end(), job.predictions.begin(),
                           job.predictions.end());
  }
  out.aggregated = aggregate(out.folds);
  return out;
}

void write_predictions_csv(const std::vector<PredictionRow>& rows,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  check_data(static_cast<bool>(out), "cannot write '" + path.string() + "'");
  out << "fold,sample_id,attribute,actual,predicted\n";
  for (const PredictionRow& r : rows)
    out << r.fold << "," << r.sample_id << "," << r.attribute << ","
        << format_double(r.actual) << "," << format_double(r.predicted) << "\n";
}

void write_fold_metrics_csv(const std::vector<MetricReport>& folds,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  check_data(static_cast<bool>(out), "cannot write '" + path.string() + "'");
  out << "fold,mae,mse,r2_geographic_extend,rho_geographic_extend,r2_opacity,rho_opacity\n";
  for (const MetricReport& r : folds)
    out << r.fold << "," << format_double(r.mae) << "," << format_double(r.mse) << ","
        << format_double(r.r2_geographic_extend) << ","
        << format_double(r.rho_geographic_extend) << "," << format_double(r.r2_opacity)
        << "," << format_double(r.rho_opacity) << "\n";
}

}  // namespace hca
