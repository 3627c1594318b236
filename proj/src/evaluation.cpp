#include "cardood/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cardood/error.hpp"

namespace cardood {

double q_error(double c, double est) {
  c = std::max(c, 1.0);
  est = std::max(est, 1.0);
  return std::max(c / est, est / c);
}

double nearest_rank_quantile(std::span<const double> values, int pct) {
  if (values.empty()) throw UsageError("quantile of an empty sample");
  if (pct <= 0 || pct > 100) throw UsageError("percentile must lie in (0, 100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  // Integer ceil avoids pct * n / 100 landing a hair above an integer.
  const std::size_t n = sorted.size();
  const std::size_t rank = (static_cast<std::size_t>(pct) * n + 99) / 100;
  return sorted[std::max<std::size_t>(rank, 1) - 1];
}

double GroupSummary::quantile(int pct) const {
  for (std::size_t k = 0; k < kReportPercentiles.size(); ++k) {
    if (kReportPercentiles[k] == pct) return quantiles[k];
  }
  throw UsageError("percentile " + std::to_string(pct) + " is not reported");
}

const GroupSummary& QErrorReport::group(std::string_view name) const {
  for (const GroupSummary& g : groups) {
    if (g.name == name) return g;
  }
  throw UsageError("report has no group '" + std::string(name) + "'");
}

std::vector<EvalGroup> evaluation_groups(const Workload& test, const SimpleDef& def) {
  std::vector<EvalGroup> out{{"overall", {}}, {"simple", {}}, {"complex", {}}};
  std::map<std::string, std::vector<std::size_t>> templates;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const SPJQuery& q = test.queries[i];
    out[0].members.push_back(i);
    out[def.is_simple(q) ? 1 : 2].members.push_back(i);
    if (!q.template_tag.empty()) templates[q.template_tag].push_back(i);
  }
  for (auto& [tag, members] : templates) out.push_back({"template:" + tag, std::move(members)});
  return out;
}

QErrorReport quantile_report(std::span<const double> estimates, std::span<const double> truths,
                             const std::vector<EvalGroup>& groups) {
  if (estimates.size() != truths.size()) throw UsageError("estimates and labels differ in length");
  QErrorReport r;
  r.predictions.reserve(truths.size());
  for (std::size_t i = 0; i < truths.size(); ++i) {
    r.predictions.push_back({truths[i], estimates[i], q_error(truths[i], estimates[i])});
  }
  for (const EvalGroup& g : groups) {
    GroupSummary s;
    s.name = g.name;
    s.n = g.members.size();
    s.present = !g.members.empty();
    if (s.present) {
      std::vector<double> errs;
      errs.reserve(g.members.size());
      for (std::size_t i : g.members) {
        if (i >= r.predictions.size()) throw UsageError("group member outside the prediction range");
        errs.push_back(r.predictions[i].q_error);
      }
      for (std::size_t k = 0; k < kReportPercentiles.size(); ++k) {
        s.quantiles[k] = nearest_rank_quantile(errs, kReportPercentiles[k]);
      }
    }
    r.groups.push_back(std::move(s));
  }
  return r;
}

std::size_t Comparison::flag_count() const {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.flagged; }));
}

Comparison compare_algorithms(std::span<const QErrorReport> reports) {
  const auto erm = std::find_if(reports.begin(), reports.end(), [](const auto& r) { return r.algorithm == "erm"; });
  if (erm == reports.end()) throw DataError("comparison needs an ERM baseline report");
  Comparison c;
  c.algorithms.push_back("erm");
  for (const GroupSummary& g : erm->groups) c.groups.push_back(g.name);
  for (const QErrorReport& r : reports) {
    if (r.split != erm->split) throw DataError("reports were computed on different splits");
    if (&r != &*erm) c.algorithms.push_back(r.algorithm);
  }
  for (const QErrorReport& r : reports) {
    for (const GroupSummary& base : erm->groups) {
      if (!base.present) continue;
      const auto it = std::find_if(r.groups.begin(), r.groups.end(), [&](const auto& g) { return g.name == base.name; });
      if (it == r.groups.end() || !it->present) continue;
      for (std::size_t k = 0; k < kReportPercentiles.size(); ++k) {
        ComparisonCell cell{r.algorithm, base.name, kReportPercentiles[k], it->quantiles[k], base.quantiles[k], false};
        cell.flagged = &r != &*erm && (cell.baseline - cell.value) >= kSignificantReduction * cell.baseline;
        c.cells.push_back(std::move(cell));
      }
    }
  }
  return c;
}

namespace {

nlohmann::json summary_to_json(const GroupSummary& g) {
  nlohmann::json j{{"name", g.name}, {"n", g.n}, {"present", g.present}};
  if (g.present) {
    for (std::size_t k = 0; k < kReportPercentiles.size(); ++k) {
      j["q" + std::to_string(kReportPercentiles[k])] = g.quantiles[k];
    }
  }
  return j;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

}  // namespace

std::string report_to_json(const QErrorReport& r) {
  nlohmann::json j;
  j["algorithm"] = r.algorithm;
  j["arch"] = r.arch;
  j["split"] = r.split;
  j["train_wall_time"] = r.train_wall_time;
  j["groups"] = nlohmann::json::array();
  for (const GroupSummary& g : r.groups) j["groups"].push_back(summary_to_json(g));
  j["predictions"] = nlohmann::json::array();
  for (const Prediction& p : r.predictions) j["predictions"].push_back({p.truth, p.estimate, p.q_error});
  return j.dump(1);
}

QErrorReport report_from_json(std::string_view text) {
  QErrorReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.algorithm = j.at("algorithm").get<std::string>();
    r.arch = j.at("arch").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.train_wall_time = j.at("train_wall_time").get<double>();
    for (const auto& g : j.at("groups")) {
      GroupSummary s;
      s.name = g.at("name").get<std::string>();
      s.n = g.at("n").get<std::size_t>();
      s.present = g.at("present").get<bool>();
      if (s.present) {
        for (std::size_t k = 0; k < kReportPercentiles.size(); ++k) {
          s.quantiles[k] = g.at("q" + std::to_string(kReportPercentiles[k])).get<double>();
        }
      }
      r.groups.push_back(std::move(s));
    }
    for (const auto& p : j.at("predictions")) {
      r.predictions.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string report_to_text(const QErrorReport& r) {
  std::ostringstream out;
  out << r.algorithm << " (" << r.arch << "), split " << r.split << ", training " << fmt(r.train_wall_time) << " s\n";
  out << pad("group", 20, true) << pad("n", 8);
  for (int p : kReportPercentiles) out << pad(std::to_string(p) + "%", 12);
  out << '\n';
  for (const GroupSummary& g : r.groups) {
    out << pad(g.name, 20, true) << pad(std::to_string(g.n), 8);
    if (!g.present) {
      out << pad("absent", 12);
    } else {
      for (double q : g.quantiles) out << pad(fmt(q), 12);
    }
    out << '\n';
  }
  return out.str();
}

std::string report_to_csv(const QErrorReport& r) {
  std::string out = "truth,estimate,q_error\n";
  char buf[32];
  for (const Prediction& p : r.predictions) {
    const std::array<double, 3> row{p.truth, p.estimate, p.q_error};
    for (std::size_t k = 0; k < row.size(); ++k) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), row[k]);
      out.append(buf, end);
      out += k + 1 == row.size() ? '\n' : ',';
    }
  }
  return out;
}

std::string comparison_to_json(const Comparison& c) {
  nlohmann::json j;
  j["algorithms"] = c.algorithms;
  j["groups"] = c.groups;
  j["cells"] = nlohmann::json::array();
  for (const ComparisonCell& cell : c.cells) {
    j["cells"].push_back({{"algorithm", cell.algorithm},
                          {"group", cell.group},
                          {"percentile", cell.percentile},
                          {"value", cell.value},
                          {"baseline", cell.baseline},
                          {"flagged", cell.flagged}});
  }
  return j.dump(1);
}

std::string comparison_to_text(const Comparison& c) {
  std::ostringstream out;
  out << pad("group", 20, true) << pad("algorithm", 12, true);
  for (int p : kReportPercentiles) out << pad(std::to_string(p) + "%", 13);
  out << '\n';
  for (const std::string& g : c.groups) {
    for (const std::string& a : c.algorithms) {
      std::vector<const ComparisonCell*> row;
      for (const ComparisonCell& cell : c.cells) {
        if (cell.group == g && cell.algorithm == a) row.push_back(&cell);
      }
      if (row.empty()) continue;
      out << pad(g, 20, true) << pad(a, 12, true);
      for (const ComparisonCell* cell : row) out << pad(fmt(cell->value) + (cell->flagged ? "*" : " "), 13);
      out << '\n';
    }
  }
  out << "* at least 20% below ERM\n";
  return out.str();
}

}  // namespace cardood
