#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trustdyn/panel.hpp"
#include "trustdyn/rng.hpp"

namespace trustdyn {

/// A block of steps with a fixed AI performance level.
struct Phase {
  int length = 1;
  double aip = 0.5;
};

enum class CuePolicy { none, on_detected_overtrust };

/// Rational-agent parameters: exponential trust learning from task outcomes,
/// a stronger correction rate when a calibration cue is shown, a small
/// probability of flipping the reliance decision, and the labelling margin.
struct AgentParams {
  double learning_rate = 0.3;  // lambda
  double cue_rate = 0.7;       // lambda_cue
  double decision_noise = 0.05;// epsilon
  double label_margin = 0.1;   // delta

  void validate() const;
};

struct CohortConfig {
  int n_participants = 0;
  std::vector<Phase> phases;
  double hp_lo = 0.5, hp_hi = 0.7;         // per-participant human performance
  double trust0_lo = 0.3, trust0_hi = 0.7; // initial trust draw
  CuePolicy cue_policy = CuePolicy::none;
  double fraction_with_cues = 0.0;
  std::uint64_t seed = 1;

  int total_steps() const;
  void validate() const;
};

struct AgentState {
  double trust = 0.5; // estimated AI success probability, clamped to [0,1]
};

struct AgentStepResult {
  AgentState state; // post-update
  int reliance = 0;
  int outcome = 0;  // observed task/suggestion success
};

/// One interaction step. Reliance thresholds the incoming trust against the
/// human's own performance (flipped with probability epsilon); the outcome is
/// a Bernoulli(aip) draw; trust then moves toward the outcome by lambda and,
/// if a cue was shown, additionally toward the true aip by lambda_cue.
AgentStepResult agent_step(const AgentState& state, double aip, double hp, int cue,
                           const AgentParams& params, Rng& rng);

/// Trust-state label: 1 (over-trust) when trust > aip + margin, -1
/// (under-trust) when trust < aip - margin, else 0.
int label_over_under(double trust, double aip, double margin);

CohortConfig default_drone_config(std::uint64_t seed);
CohortConfig default_driving_config(std::uint64_t seed);

/// Generates a panel for any phase schedule. Per-participant streams are
/// seeded with subseed(seed, index), so generation order does not matter and
/// identical configs give bit-identical panels. Records carry
/// AIP, HP, E_AIP (the agent's trust, for verification), reliance, cue and
/// over_under, with over_under = label_over_under(E_AIP, AIP, margin).
PanelDataset gen_cohort(const CohortConfig& config, const AgentParams& params);

/// Two-phase object-recognition cohort (default: 194 participants, 30 steps,
/// cues for half of them).
PanelDataset gen_drone_cohort(const CohortConfig& config, const AgentParams& params);

/// Three-phase driving cohort (default: 49 participants, 22 scenes of 4
/// steps, no cues). reliance encodes non-intervention.
PanelDataset gen_driving_cohort(const CohortConfig& config, const AgentParams& params);

/// Expands a panel to factor x its participant count: the originals pass
/// through verbatim (labels recomputed), and each extra series resamples a
/// participant with N(0, 0.02^2) noise on the continuous columns, clamped to
/// range, labels recomputed.
PanelDataset augment_panel(const PanelDataset& panel, int factor, Rng& rng,
                           double margin = 0.1);

} // namespace trustdyn
