#include "poisonbench/mrap.hpp"

#include <algorithm>
#include <cmath>

#include "poisonbench/error.hpp"

namespace poisonbench::mrap {

namespace {

bool in_percent_range(double v) { return v >= 0.0 && v <= 100.0; }

double parse_number(const std::string& field, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + field + "'", line);
  }
}

}  // namespace

void validate(const AccuracySeries& series) {
  const auto label = "series (" + series.model_id + ", " + series.dataset_id + ")";
  if (series.points.size() < 2) throw ValidationError(label + " needs at least 2 points");
  for (std::size_t i = 0; i < series.points.size(); ++i) {
    const auto& p = series.points[i];
    if (!in_percent_range(p.poison_percent) || !in_percent_range(p.val_accuracy) ||
        !in_percent_range(p.train_accuracy))
      throw ValidationError(label + " has a value outside [0,100]");
    if (i > 0 && !(series.points[i - 1].poison_percent < p.poison_percent))
      throw ValidationError(label + " poison levels are not strictly increasing");
  }
}

double clamp_denominator(double denominator) {
  if (std::abs(denominator) >= kDenominatorFloor) return denominator;
  return denominator < 0.0 ? -kDenominatorFloor : kDenominatorFloor;
}

double rate_segment(double p_prev, double p_cur, double a_prev, double a_cur) {
  if (!(p_prev < p_cur))
    throw ValidationError("rate_segment: poison levels must increase (" + std::to_string(p_prev) +
                          " -> " + std::to_string(p_cur) + ")");
  if (!in_percent_range(p_prev) || !in_percent_range(p_cur))
    throw ValidationError("rate_segment: poison level outside [0,100]");
  if (!in_percent_range(a_prev) || !in_percent_range(a_cur))
    throw ValidationError("rate_segment: accuracy outside [0,100]");
  if (p_prev < 50.0) return (p_prev - p_cur) / clamp_denominator(a_prev - a_cur);
  return (a_cur - a_prev) / clamp_denominator(p_prev - p_cur);
}

RateMode parse_rate_mode(const std::string& name) {
  if (name == "literal") return RateMode::kLiteral;
  if (name == "magnitude") return RateMode::kMagnitude;
  throw ValidationError("unknown rate mode '" + name + "' (expected literal or magnitude)");
}

std::string to_string(RateMode mode) { return mode == RateMode::kLiteral ? "literal" : "magnitude"; }

double mrap_dataset(const AccuracySeries& series, RateMode mode) {
  validate(series);
  const auto& pts = series.points;
  double sum = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double r = rate_segment(pts[i - 1].poison_percent, pts[i].poison_percent,
                                  pts[i - 1].val_accuracy, pts[i].val_accuracy);
    sum += mode == RateMode::kMagnitude ? std::abs(r) : r;
  }
  return sum / static_cast<double>(pts.size() - 1);
}

double mrap_model(const std::map<std::string, double>& per_dataset) {
  if (per_dataset.empty()) throw ValidationError("mrap_model: no datasets");
  double sum = 0.0;
  for (const auto& [_, v] : per_dataset) sum += v;
  return sum / static_cast<double>(per_dataset.size());
}

std::map<std::string, double> min_max_normalize(const std::map<std::string, double>& values) {
  if (values.size() < 2) throw ValidationError("degenerate group: need at least 2 members");
  const auto [lo_it, hi_it] = std::minmax_element(
      values.begin(), values.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  const double lo = lo_it->second;
  const double hi = hi_it->second;
  if (!(hi > lo)) throw ValidationError("degenerate group: max equals min");
  std::map<std::string, double> out;
  for (const auto& [k, v] : values) out[k] = (v - lo) / (hi - lo);
  return out;
}

std::map<std::string, double> nmrap(const std::map<std::string, double>& group) {
  return min_max_normalize(group);
}

MrapResult compute(const std::vector<AccuracySeries>& series, RateMode mode) {
  MrapResult result;
  for (const auto& s : series) {
    auto& slot = result.per_dataset[s.model_id];
    if (slot.contains(s.dataset_id))
      throw ValidationError("duplicate series for (" + s.model_id + ", " + s.dataset_id + ")");
    slot[s.dataset_id] = mrap_dataset(s, mode);
  }
  for (const auto& [model, per_dataset] : result.per_dataset)
    result.model_mrap[model] = mrap_model(per_dataset);
  try {
    result.nmrap = nmrap(result.model_mrap);
  } catch (const ValidationError&) {
    result.nmrap.reset();
  }
  return result;
}

csv::Table series_to_table(const std::vector<AccuracySeries>& series) {
  csv::Table table{{"model", "dataset", "poison_percent", "train_accuracy", "val_accuracy"}, {}};
  for (const auto& s : series)
    for (const auto& p : s.points)
      table.rows.push_back({s.model_id, s.dataset_id, csv::fixed(p.poison_percent),
                            csv::fixed(p.train_accuracy), csv::fixed(p.val_accuracy)});
  return table;
}

std::vector<AccuracySeries> series_from_table(const csv::Table& table) {
  const std::vector<std::string> expected{"model", "dataset", "poison_percent", "train_accuracy",
                                          "val_accuracy"};
  if (table.header != expected)
    throw ParseError("series CSV header must be model,dataset,poison_percent,train_accuracy,val_accuracy", 1);
  std::vector<AccuracySeries> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::size_t line = 1;
  for (const auto& row : table.rows) {
    ++line;
    const auto key = std::make_pair(row[0], row[1]);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back({row[0], row[1], {}});
    }
    out[it->second].points.push_back(
        {parse_number(row[2], line), parse_number(row[4], line), parse_number(row[3], line)});
  }
  for (auto& s : out)
    std::sort(s.points.begin(), s.points.end(),
              [](const SeriesPoint& a, const SeriesPoint& b) { return a.poison_percent < b.poison_percent; });
  return out;
}

csv::Table dataset_mrap_table(const MrapResult& result) {
  csv::Table table{{"model", "dataset", "mrap"}, {}};
  for (const auto& [model, per_dataset] : result.per_dataset)
    for (const auto& [dataset, value] : per_dataset) table.rows.push_back({model, dataset, csv::fixed(value)});
  return table;
}

csv::Table model_mrap_table(const MrapResult& result) {
  csv::Table table{{"model", "mrap", "nmrap"}, {}};
  for (const auto& [model, value] : result.model_mrap)
    table.rows.push_back({model, csv::fixed(value), result.nmrap ? csv::fixed(result.nmrap->at(model)) : ""});
  return table;
}

}  // namespace poisonbench::mrap
