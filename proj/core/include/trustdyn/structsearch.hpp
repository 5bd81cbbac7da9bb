#pragma once

#include <set>
#include <string>
#include <vector>

#include "trustdyn/estimation.hpp"
#include "trustdyn/panel.hpp"
#include "trustdyn/pathmodel.hpp"

namespace trustdyn {

enum class SearchCriterion { aic, cv_accuracy, cv_rmse };

std::string criterion_name(SearchCriterion c);

struct SearchConfig {
  double tau = 0.9;            // static-diagram acceptance gate
  int eta = 2;                 // maximum searched lag
  SearchCriterion criterion = SearchCriterion::aic;
  int min_train_origin = 0;    // 0 = eta + 1
  int horizon = 1;             // fixed
  long enumeration_cap = 1L << 20;
  FitConfig fit;

  int effective_min_train() const { return min_train_origin > 0 ? min_train_origin : eta + 1; }
};

struct OriginRecord {
  int origin = 0;        // number of training steps; step `origin` is predicted
  double accuracy = 0.0;
  double rmse = 0.0;
  int n_predictions = 0;
};

struct RollingCvResult {
  double mean_accuracy = 0.0;
  double mean_rmse = 0.0;
  std::vector<OriginRecord> origins;
};

/// Expanding-window rolling-origin cross-validation: for each origin o from
/// min_train to T-1 (counting training steps), fit on the first o steps of
/// every participant and predict step o, scoring label accuracy and RMSE of
/// the continuous target; origins are aggregated by unweighted mean.
RollingCvResult rolling_origin_cv(const PathDiagram& diagram, const PanelDataset& panel,
                                  const SearchConfig& config);

/// All nonempty subsets of {1..eta}, ordered by size then lexicographically.
/// Throws Error(usage) when 2^eta - 1 exceeds the enumeration cap.
std::vector<std::set<int>> enumerate_lag_subsets(int eta, long cap = 1L << 20);

struct StaticSelection {
  PathDiagram diagram;
  double accuracy = 0.0;
  bool below_threshold = false;
  int index = -1; // position in the candidate list
};

/// Step-1 gate: returns the first candidate whose rolling-CV accuracy
/// reaches tau, or the best-scoring one flagged below_threshold.
StaticSelection select_static_diagram(const std::vector<PathDiagram>& candidates,
                                      const PanelDataset& panel, const SearchConfig& config);

struct CandidateScore {
  std::set<int> lag_subset;
  double score = 0.0; // criterion value (AIC, CV accuracy, or CV RMSE)
  FitResult fit;      // full-panel fit
  double cv_accuracy = 0.0;
  double cv_rmse = 0.0;
  bool failed = false;
  std::string error;
};

struct SearchResult {
  CandidateScore best;
  std::vector<CandidateScore> all; // deterministic candidate order
};

/// Step-2 constrained brute force: rebuilds the base diagram with every
/// nonempty lag subset of {1..eta} on its latent autoregression, scores each
/// candidate by the configured criterion, and picks the winner (ties broken
/// by fewer lags, then lexicographically smaller subset). Per-candidate
/// failures are recorded, not fatal. Candidates are evaluated concurrently;
/// the reduction is order-independent.
SearchResult optimize_structure(const PathDiagram& base, const PanelDataset& panel,
                                const SearchConfig& config);

/// Replaces the latent variable's autoregressive self-edges with the given
/// lag subset (used by the search and exposed for oracles/tests).
PathDiagram with_trust_lags(const PathDiagram& base, const std::set<int>& lags);

/// `lag_subset,criterion,score,aic,loglik,converged` rows in candidate order.
std::string search_report_csv(const SearchResult& result, SearchCriterion criterion);

std::string format_lag_subset(const std::set<int>& lags);

} // namespace trustdyn
