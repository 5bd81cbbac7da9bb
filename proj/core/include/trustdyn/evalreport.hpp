#pragma once

#include <string>
#include <vector>

#include "trustdyn/baselines.hpp"
#include "trustdyn/estimation.hpp"
#include "trustdyn/panel.hpp"

namespace trustdyn {

/// Fraction of exact label matches. Throws Error(data) on length mismatch or
/// empty input.
double accuracy(const std::vector<int>& predicted, const std::vector<int>& actual);

/// Root mean squared error.
double rmse(const std::vector<double>& predicted, const std::vector<double>& actual);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  bool precision_defined = true; // false when nothing was predicted positive
  bool recall_defined = true;    // false when nothing is actually positive
};

PrecisionRecall precision_recall(const std::vector<int>& predicted,
                                 const std::vector<int>& actual, int positive_class);

struct ProportionRow {
  int step = 0;
  double actual = 0.0;    // (over - under) / n, in [-1, 1]
  double predicted = 0.0;
};

/// Signed per-step proportion of over- minus under-trust labels. Every
/// participant must be covered at every listed step.
std::vector<ProportionRow> per_step_proportions(
    const std::vector<int>& steps, const std::vector<std::vector<int>>& actual_by_participant,
    const std::vector<std::vector<int>>& predicted_by_participant);

struct AnovaResult {
  double F = 0.0;
  double p = 1.0;
  double df_between = 0.0;
  double df_within = 0.0;
  bool infinite_f = false; // zero within-group variance with distinct means
};

/// Classical one-way ANOVA (between/within mean-square ratio, p from the F
/// distribution). Needs >= 2 groups of >= 2 samples each.
AnovaResult anova_one_way(const std::vector<std::vector<double>>& groups);

struct PairwiseComparison {
  int group_a = 0, group_b = 0;
  double t = 0.0;
  double raw_p = 1.0;
  double adjusted_p = 1.0;
};

/// All-pairs pooled-variance t tests with Holm step-down adjustment.
std::vector<PairwiseComparison> pairwise_comparisons(const std::vector<std::vector<double>>& groups);

/// Holm step-down adjustment of a raw p-value vector (same order returned).
std::vector<double> holm_adjust(const std::vector<double>& raw);

struct MetricsSummary {
  std::string model;
  std::vector<double> per_participant_accuracy;
  std::vector<double> per_participant_rmse;
  double acc_mean = 0.0, acc_sd = 0.0;
  double rmse_mean = 0.0, rmse_sd = 0.0;
  PrecisionRecall over_trust_pr; // pooled, positive class = over-trust
  bool failed = false;
  std::string error;
};

struct ComparisonConfig {
  double threshold = 0.5;  // label threshold for forecasts
  int positive_class = 1;  // over-trust
  bool binary_over_mode = false; // score labels as over-trust vs rest
};

struct ComparisonReport {
  std::vector<MetricsSummary> models; // PM first, then baselines
  AnovaResult anova;
  std::vector<PairwiseComparison> pairwise;
  std::vector<ProportionRow> curves;  // PM predictions vs actual
  int first_eval_step = 0;
  std::string adjust_method = "holm";
};

/// Runs in-sample one-step-ahead prediction for the fitted path model and
/// each baseline over every participant and evaluation step (steps >= the
/// fitted max lag), assembles per-model metrics, one-way ANOVA with Holm
/// pairwise comparisons over per-participant accuracies, and the PM
/// proportion curves. Failed arms are marked, not fatal.
ComparisonReport compare_models(const PanelDataset& panel, const FitResult& pm_fit,
                                const std::vector<BaselineSpec>& baseline_specs,
                                const ComparisonConfig& config = {});

/// `model,acc_mean,acc_sd,rmse_mean,rmse_sd,precision,recall`
std::string summary_csv(const ComparisonReport& report);
/// `step,actual_prop,predicted_prop`
std::string curves_csv(const ComparisonReport& report);
/// `pair,raw_p,adjusted_p`
std::string stats_csv(const ComparisonReport& report);
/// `participant,model,acc,rmse`
std::string per_participant_csv(const ComparisonReport& report, const PanelDataset& panel);
std::string text_summary(const ComparisonReport& report);

} // namespace trustdyn
