#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "trustdyn/pathmodel.hpp"

namespace trustdyn {

/// One participant's time series. Cells are indexed [column][step]; missing
/// values are stored as NaN (only latent columns may be missing).
struct ParticipantSeries {
  std::string id;
  std::vector<std::vector<double>> columns; // [n_columns][n_steps]

  int n_steps() const { return columns.empty() ? 0 : static_cast<int>(columns[0].size()); }
};

/// Panel data: the same variable set across all participants, steps
/// consecutive from 0 within each series.
struct PanelDataset {
  std::vector<std::string> variable_names;
  std::vector<ParticipantSeries> participants;

  int column_index(const std::string& name) const;
  bool has_column(const std::string& name) const { return column_index(name) >= 0; }
  int n_participants() const { return static_cast<int>(participants.size()); }
  /// Length of the shortest series (0 for an empty panel).
  int min_steps() const;

  static bool is_missing(double v) { return std::isnan(v); }
};

/// Reads the panel CSV format: header `participant,t,<var>,...`, UTF-8, LF
/// line endings, empty cells = missing. Step indices must be consecutive
/// from 0 per participant. Throws Error(data) with a line number.
PanelDataset load_panel_csv(const std::string& path);
PanelDataset parse_panel_csv(const std::string& text);

/// Writes the same format; doubles are rendered shortest-round-trip so a
/// write/read cycle is lossless and byte-stable.
void save_panel_csv(const PanelDataset& panel, const std::string& path);
std::string panel_to_csv(const PanelDataset& panel);

/// Checks panel/diagram consistency: every diagram variable has a column,
/// observed columns are complete and within declared ranges, and only latent
/// columns contain missing cells. Throws Error(data).
void validate_panel(const PanelDataset& panel, const PathDiagram& diagram);

/// Renders a double with shortest round-trip precision (shared formatting
/// helper for all CSV/manifest writers).
std::string format_double(double v);

} // namespace trustdyn
