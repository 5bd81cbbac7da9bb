#include "trustdyn/panel.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace trustdyn {

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

int PanelDataset::column_index(const std::string& name) const {
  for (size_t i = 0; i < variable_names.size(); ++i)
    if (variable_names[i] == name) return static_cast<int>(i);
  return -1;
}

int PanelDataset::min_steps() const {
  int m = 0;
  bool first = true;
  for (const auto& p : participants) {
    if (first || p.n_steps() < m) m = p.n_steps();
    first = false;
  }
  return m;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_cell(const std::string& s, int line_no) {
  if (s.empty()) return std::nan("");
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw data_error("panel line " + std::to_string(line_no) + ": bad value '" + s + "'");
  return v;
}

} // namespace

PanelDataset parse_panel_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw data_error("panel: empty file");
  auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "participant" || header[1] != "t")
    throw data_error("panel: header must start with participant,t");

  PanelDataset panel;
  panel.variable_names.assign(header.begin() + 2, header.end());
  const size_t n_vars = panel.variable_names.size();

  int line_no = 1;
  ParticipantSeries* current = nullptr;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != n_vars + 2)
      throw data_error("panel line " + std::to_string(line_no) + ": expected " +
                       std::to_string(n_vars + 2) + " cells, got " + std::to_string(cells.size()));
    const std::string& id = cells[0];
    if (!current || current->id != id) {
      for (const auto& p : panel.participants)
        if (p.id == id)
          throw data_error("panel line " + std::to_string(line_no) +
                           ": participant '" + id + "' is not contiguous");
      panel.participants.push_back({id, std::vector<std::vector<double>>(n_vars)});
      current = &panel.participants.back();
    }
    const int t = static_cast<int>(parse_cell(cells[1], line_no));
    if (t != current->n_steps())
      throw data_error("panel line " + std::to_string(line_no) + ": step " + std::to_string(t) +
                       " of participant '" + id + "' is not consecutive from 0");
    for (size_t j = 0; j < n_vars; ++j)
      current->columns[j].push_back(parse_cell(cells[j + 2], line_no));
  }
  return panel;
}

PanelDataset load_panel_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("panel: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_panel_csv(buf.str());
}

std::string panel_to_csv(const PanelDataset& panel) {
  std::ostringstream out;
  out << "participant,t";
  for (const auto& name : panel.variable_names) out << ',' << name;
  out << '\n';
  for (const auto& p : panel.participants) {
    const int T = p.n_steps();
    for (int t = 0; t < T; ++t) {
      out << p.id << ',' << t;
      for (const auto& col : p.columns) {
        out << ',';
        if (!PanelDataset::is_missing(col[t])) out << format_double(col[t]);
      }
      out << '\n';
    }
  }
  return out.str();
}

void save_panel_csv(const PanelDataset& panel, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("panel: cannot write '" + path + "'");
  out << panel_to_csv(panel);
}

void validate_panel(const PanelDataset& panel, const PathDiagram& diagram) {
  for (const auto& v : diagram.variables) {
    const int col = panel.column_index(v.name);
    if (col < 0) {
      if (v.role == VarRole::observed)
        throw data_error("panel: missing column '" + v.name + "'");
      continue; // latent columns are optional
    }
    for (const auto& p : panel.participants) {
      const auto& values = p.columns[col];
      for (size_t t = 0; t < values.size(); ++t) {
        const double x = values[t];
        if (PanelDataset::is_missing(x)) {
          if (v.role == VarRole::observed)
            throw data_error("panel: observed variable '" + v.name + "' missing at participant " +
                             p.id + " step " + std::to_string(t));
          continue;
        }
        if (!v.in_range(x))
          throw data_error("panel: value " + format_double(x) + " of '" + v.name +
                           "' out of range at participant " + p.id + " step " + std::to_string(t));
      }
    }
  }
}

} // namespace trustdyn
