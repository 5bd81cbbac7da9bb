#include "trustdyn/structsearch.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <sstream>
#include <thread>

namespace trustdyn {

std::string criterion_name(SearchCriterion c) {
  switch (c) {
  case SearchCriterion::aic: return "aic";
  case SearchCriterion::cv_accuracy: return "cv_acc";
  case SearchCriterion::cv_rmse: return "cv_rmse";
  }
  return "?";
}

std::string format_lag_subset(const std::set<int>& lags) {
  std::string out;
  for (int lag : lags) {
    if (!out.empty()) out += '+';
    out += std::to_string(lag);
  }
  return out;
}

std::vector<std::set<int>> enumerate_lag_subsets(int eta, long cap) {
  if (eta < 1) throw usage_error("enumerate_lag_subsets: eta must be >= 1");
  if (eta >= 62 || ((1L << eta) - 1) > cap)
    throw usage_error("enumerate_lag_subsets: 2^" + std::to_string(eta) +
                      "-1 candidates exceed the enumeration cap; lower eta");

  std::vector<std::set<int>> subsets;
  subsets.reserve((size_t(1) << eta) - 1);
  for (int size = 1; size <= eta; ++size) {
    // lexicographic combinations of {1..eta} of the given size
    std::vector<int> comb(size);
    for (int i = 0; i < size; ++i) comb[i] = i + 1;
    while (true) {
      subsets.emplace_back(comb.begin(), comb.end());
      int i = size - 1;
      while (i >= 0 && comb[i] == eta - (size - 1 - i)) --i;
      if (i < 0) break;
      ++comb[i];
      for (int j = i + 1; j < size; ++j) comb[j] = comb[j - 1] + 1;
    }
  }
  return subsets;
}

namespace {

struct OriginScore {
  double accuracy;
  double rmse;
  int n;
};

OriginScore score_origin(const PathDiagram& diagram, const PanelDataset& panel, int origin,
                         const FitConfig& fit_config) {
  PanelDataset train;
  train.variable_names = panel.variable_names;
  for (const auto& p : panel.participants) {
    ParticipantSeries s{p.id, {}};
    for (const auto& col : p.columns)
      s.columns.emplace_back(col.begin(), col.begin() + std::min<size_t>(origin, col.size()));
    train.participants.push_back(std::move(s));
  }
  const FitResult fit = em_fit(diagram, train, fit_config);

  const int target_col = panel.column_index(diagram.target);
  std::vector<int> pred_labels, actual_labels;
  std::vector<double> pred_values, actual_values;
  for (const auto& p : panel.participants) {
    ParticipantSeries upto{p.id, {}};
    for (const auto& col : p.columns)
      upto.columns.emplace_back(col.begin(), col.begin() + origin + 1);
    const auto recs = predict_series(fit, upto, panel.variable_names, origin);
    for (const auto& rec : recs) {
      pred_labels.push_back(rec.predicted_label);
      pred_values.push_back(rec.predicted_value(diagram.target));
      actual_labels.push_back(rec.actual_label.value_or(0));
      actual_values.push_back(p.columns[target_col][origin]);
    }
  }
  OriginScore score{};
  score.n = static_cast<int>(pred_labels.size());
  int hits = 0;
  double se = 0.0;
  for (int i = 0; i < score.n; ++i) {
    if (pred_labels[i] == actual_labels[i]) ++hits;
    const double d = pred_values[i] - actual_values[i];
    se += d * d;
  }
  score.accuracy = score.n ? static_cast<double>(hits) / score.n : 0.0;
  score.rmse = score.n ? std::sqrt(se / score.n) : 0.0;
  return score;
}

} // namespace

RollingCvResult rolling_origin_cv(const PathDiagram& diagram, const PanelDataset& panel,
                                  const SearchConfig& config) {
  const int T = panel.min_steps();
  const int min_train = config.effective_min_train();
  if (min_train < config.eta + 1)
    throw usage_error("rolling_origin_cv: min_train_origin must be at least eta + 1");
  if (T <= min_train)
    throw data_error("rolling_origin_cv: series of length " + std::to_string(T) +
                     " are too short for min_train_origin " + std::to_string(min_train));

  RollingCvResult result;
  double acc_sum = 0.0, rmse_sum = 0.0;
  for (int origin = min_train; origin <= T - 1; ++origin) {
    const OriginScore s = score_origin(diagram, panel, origin, config.fit);
    result.origins.push_back({origin, s.accuracy, s.rmse, s.n});
    acc_sum += s.accuracy;
    rmse_sum += s.rmse;
  }
  const double n = static_cast<double>(result.origins.size());
  result.mean_accuracy = acc_sum / n;
  result.mean_rmse = rmse_sum / n;
  return result;
}

StaticSelection select_static_diagram(const std::vector<PathDiagram>& candidates,
                                      const PanelDataset& panel, const SearchConfig& config) {
  if (candidates.empty())
    throw usage_error("select_static_diagram: candidate list is empty");

  StaticSelection best;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const RollingCvResult cv = rolling_origin_cv(candidates[i], panel, config);
    if (cv.mean_accuracy >= config.tau)
      return {candidates[i], cv.mean_accuracy, false, static_cast<int>(i)};
    if (best.index < 0 || cv.mean_accuracy > best.accuracy)
      best = {candidates[i], cv.mean_accuracy, true, static_cast<int>(i)};
  }
  return best;
}

PathDiagram with_trust_lags(const PathDiagram& base, const std::set<int>& lags) {
  if (lags.empty()) throw usage_error("with_trust_lags: lag subset is empty");

  // the searched variable is the diagram's latent node
  std::string latent;
  for (const auto& v : base.variables)
    if (v.role == VarRole::latent) {
      if (!latent.empty())
        throw usage_error("with_trust_lags: diagram has more than one latent variable");
      latent = v.name;
    }
  if (latent.empty())
    throw usage_error("with_trust_lags: diagram has no latent variable to search over");

  PathDiagram d = base;
  d.edges.erase(std::remove_if(d.edges.begin(), d.edges.end(),
                               [&](const LaggedEdge& e) {
                                 return e.source == latent && e.target == latent && e.lag >= 1;
                               }),
                d.edges.end());
  for (int lag : lags) d.edges.push_back({latent, latent, lag, {}});
  int max_lag = *lags.rbegin();
  for (const auto& e : d.edges) max_lag = std::max(max_lag, e.lag);
  d.max_lag = max_lag;
  return validate_diagram(d);
}

namespace {

bool better_candidate(const CandidateScore& a, const CandidateScore& b, SearchCriterion crit) {
  if (a.failed != b.failed) return !a.failed;
  if (a.failed) return false;
  if (a.score != b.score) {
    if (crit == SearchCriterion::cv_accuracy) return a.score > b.score;
    return a.score < b.score; // aic and cv_rmse: smaller is better
  }
  if (a.lag_subset.size() != b.lag_subset.size())
    return a.lag_subset.size() < b.lag_subset.size();
  return std::lexicographical_compare(a.lag_subset.begin(), a.lag_subset.end(),
                                      b.lag_subset.begin(), b.lag_subset.end());
}

} // namespace

SearchResult optimize_structure(const PathDiagram& base, const PanelDataset& panel,
                                const SearchConfig& config) {
  const auto subsets = enumerate_lag_subsets(config.eta, config.enumeration_cap);

  std::vector<CandidateScore> scores(subsets.size());
  auto evaluate = [&](size_t i) {
    CandidateScore& cs = scores[i];
    cs.lag_subset = subsets[i];
    try {
      const PathDiagram candidate = with_trust_lags(base, subsets[i]);
      cs.fit = em_fit(candidate, panel, config.fit);
      if (config.criterion != SearchCriterion::aic) {
        const RollingCvResult cv = rolling_origin_cv(candidate, panel, config);
        cs.cv_accuracy = cv.mean_accuracy;
        cs.cv_rmse = cv.mean_rmse;
      }
      switch (config.criterion) {
      case SearchCriterion::aic: cs.score = cs.fit.aic; break;
      case SearchCriterion::cv_accuracy: cs.score = cs.cv_accuracy; break;
      case SearchCriterion::cv_rmse: cs.score = cs.cv_rmse; break;
      }
    } catch (const std::exception& e) {
      cs.failed = true;
      cs.error = e.what();
      cs.score = std::nan("");
    }
  };

  const unsigned workers =
      std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                      static_cast<unsigned>(subsets.size())));
  if (workers <= 1 || subsets.size() <= 1) {
    for (size_t i = 0; i < subsets.size(); ++i) evaluate(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < subsets.size(); i = next.fetch_add(1))
          evaluate(i);
      });
    for (auto& t : pool) t.join();
  }

  SearchResult result;
  result.all = scores;
  int best = -1;
  for (size_t i = 0; i < scores.size(); ++i)
    if (best < 0 || better_candidate(scores[i], scores[best], config.criterion))
      best = static_cast<int>(i);
  if (best < 0 || scores[best].failed)
    throw data_error("optimize_structure: every candidate failed" +
                     (scores.empty() ? std::string() : "; first error: " + scores[0].error));
  result.best = scores[best];
  return result;
}

std::string search_report_csv(const SearchResult& result, SearchCriterion criterion) {
  std::ostringstream out;
  out << "lag_subset,criterion,score,aic,loglik,converged\n";
  for (const auto& cs : result.all) {
    out << format_lag_subset(cs.lag_subset) << ',' << criterion_name(criterion) << ',';
    if (cs.failed) {
      out << "nan,nan,nan,0\n";
      continue;
    }
    out << format_double(cs.score) << ',' << format_double(cs.fit.aic) << ','
        << format_double(cs.fit.loglik) << ',' << (cs.fit.converged ? 1 : 0) << '\n';
  }
  return out.str();
}

} // namespace trustdyn
