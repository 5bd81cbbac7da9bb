#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trustdyn/panel.hpp"
#include "trustdyn/pathmodel.hpp"
#include "trustdyn/statespace.hpp"

namespace trustdyn {

struct FitConfig {
  double tolerance = 1e-6;     // relative log-likelihood change
  int max_iterations = 500;
  double variance_floor = 1e-8;
  double threshold = 0.5;      // over/under classification threshold
  bool mask_latent = true;     // ignore latent columns even when present
};

/// Result of a maximum-likelihood (EM) fit. aic == -2*loglik + 2*n_params and
/// n_params counts exactly the free edges plus the free residual variances;
/// intercepts are absorbed by per-variable centering (the centers are part of
/// the fit and applied again at prediction time).
struct FitResult {
  PathDiagram diagram;                       // coefficients filled in
  std::vector<std::string> endo_vars;
  std::vector<double> residual_variances;    // per endogenous variable
  std::vector<std::string> center_vars;
  std::vector<double> centers;               // per diagram variable
  double loglik = 0.0;
  double aic = 0.0;
  int n_params = 0;
  int n_iterations = 0;
  bool converged = false;
  double threshold = 0.5;
  std::vector<double> loglik_trace;          // per-iteration marginal loglik

  double center_of(const std::string& var) const;
  double variance_of(const std::string& var) const;
};

/// Fits all unset edge coefficients and residual variances by EM with Kalman
/// smoothing. Per-iteration log-likelihood is non-decreasing; on reaching
/// max_iterations the best parameters so far are returned with
/// converged=false. Throws Error(data) for degenerate inputs (zero-variance
/// regressors, incomplete observed columns, too little data).
FitResult em_fit(const PathDiagram& diagram, const PanelDataset& panel,
                 const FitConfig& config = {});

struct PredictionRecord {
  std::string participant;
  int step = 0;
  std::vector<std::string> variables;   // endogenous, diagram order
  std::vector<double> predicted;        // raw scale
  int predicted_label = 0;
  std::optional<int> actual_label;

  double predicted_value(const std::string& var) const;
};

/// One-step-ahead conditional mean given a participant's history (steps
/// 0..t-1) and the exogenous values observed at step t. The target's
/// predicted label is classify_over_under(predicted value, threshold).
/// history must span at least max_lag steps.
PredictionRecord predict_one_step(const FitResult& fit,
                                  const ParticipantSeries& history,
                                  const std::vector<std::pair<std::string, double>>& exogenous_next);

/// One-step-ahead predictions for every step t in [from_step, n_steps) of a
/// fully observed series, sharing a single filter pass. Each record predicts
/// step t from data before t plus the exogenous values at t, and carries the
/// actual label.
std::vector<PredictionRecord> predict_series(const FitResult& fit,
                                             const ParticipantSeries& series,
                                             const std::vector<std::string>& panel_columns,
                                             int from_step);

/// Ternary trust-state classification: 1 above +threshold, -1 below
/// -threshold, 0 between. threshold must lie in (0, 1]; value must be finite.
int classify_over_under(double value, double threshold = 0.5);

double aic(double loglik, int n_params);
double aic(const FitResult& fit);

/// Fit file format: the diagram text with coefficients, then a key=value
/// trailer (loglik, aic, n_params, iterations, converged, threshold, and the
/// per-variable variance.* / center.* entries).
std::string serialize_fit(const FitResult& fit);
FitResult parse_fit(const std::string& text);

} // namespace trustdyn
