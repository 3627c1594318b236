#include "cardood/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cardood/error.hpp"
#include "cardood/seed.hpp"

namespace cardood {

using nlohmann::json;

GroupRule parse_group_rule(std::string_view text) {
  if (text == "by-selection-count" || text == "selections") return GroupRule::BySelectionCount;
  if (text == "by-join-count" || text == "joins") return GroupRule::ByJoinCount;
  if (text == "by-template" || text == "template") return GroupRule::ByTemplate;
  throw UsageError("unknown group rule '" + std::string(text) + "'");
}

std::string to_string(GroupRule rule) {
  switch (rule) {
    case GroupRule::BySelectionCount: return "by-selection-count";
    case GroupRule::ByJoinCount: return "by-join-count";
    case GroupRule::ByTemplate: return "by-template";
  }
  return "?";
}

int Workload::num_groups() const {
  return group_of.empty() ? 0 : *std::max_element(group_of.begin(), group_of.end());
}

Workload Workload::subset(const std::vector<std::size_t>& indices) const {
  Workload out;
  out.group_rule = group_rule;
  for (std::size_t i : indices) {
    out.queries.push_back(queries.at(i));
    if (!group_of.empty()) out.group_of.push_back(group_of.at(i));
  }
  return out;
}

namespace {

std::string group_key(const SPJQuery& q, GroupRule rule) {
  // Zero-padded so lexicographic order matches numeric order.
  char buf[16];
  switch (rule) {
    case GroupRule::BySelectionCount:
      std::snprintf(buf, sizeof(buf), "%08zu", q.num_selections());
      return buf;
    case GroupRule::ByJoinCount:
      std::snprintf(buf, sizeof(buf), "%08zu", q.num_joins());
      return buf;
    case GroupRule::ByTemplate:
      return q.template_tag;
  }
  return {};
}

std::string structural_key(const SPJQuery& q) {
  std::string key;
  char buf[32];
  for (const auto& r : q.relations) key += r + ',';
  key += '|';
  for (const Selection& s : q.selections) {
    key += s.attribute.to_string();
    if (s.is_range()) {
      auto [e1, ec1] = std::to_chars(buf, buf + sizeof(buf), s.range().lb);
      key += '[' + std::string(buf, e1);
      auto [e2, ec2] = std::to_chars(buf, buf + sizeof(buf), s.range().ub);
      key += ',' + std::string(buf, e2) + ']';
    } else {
      key += '{';
      for (int v : s.in().values) key += std::to_string(v) + ',';
      key += '}';
    }
  }
  key += '|';
  for (const JoinPair& j : q.joins) key += j.to_string() + ',';
  return key;
}

}  // namespace

Workload partition_workload(Workload w, GroupRule rule) {
  std::set<std::string> keys;
  for (const SPJQuery& q : w.queries) keys.insert(group_key(q, rule));
  std::map<std::string, int> id;
  int next = 1;
  for (const std::string& k : keys) id[k] = next++;
  w.group_of.resize(w.queries.size());
  for (std::size_t i = 0; i < w.queries.size(); ++i) w.group_of[i] = id[group_key(w.queries[i], rule)];
  w.group_rule = rule;
  return w;
}

bool SimpleDef::is_simple(const SPJQuery& q) const {
  switch (by) {
    case GroupRule::BySelectionCount: return q.num_selections() <= max_count;
    case GroupRule::ByJoinCount: return q.num_joins() <= max_count;
    case GroupRule::ByTemplate: break;
  }
  throw UsageError("simple/complex definition must count selections or joins");
}

void SplitSpec::validate() const {
  if (ratio.first <= 0 || ratio.second <= 0) throw UsageError("split ratio parts must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test fraction must lie in (0, 1)");
  if (simple_def.by == GroupRule::ByTemplate) throw UsageError("simple definition cannot be by template");
}

std::pair<int, int> parse_ratio(std::string_view text) {
  const auto sep = text.find_first_of("/:");
  if (sep == std::string_view::npos) throw UsageError("ratio must look like 20/80");
  auto parse = [&](std::string_view s) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !(v > 0)) {
      throw UsageError("bad ratio component '" + std::string(s) + "'");
    }
    return v;
  };
  double a = parse(text.substr(0, sep));
  double b = parse(text.substr(sep + 1));
  // Scale fractional forms such as 0.2/0.8 to integers.
  while ((a != std::floor(a) || b != std::floor(b)) && a < 1e6) {
    a *= 10;
    b *= 10;
  }
  long ia = std::lround(a), ib = std::lround(b);
  const long g = std::gcd(ia, ib);
  return {static_cast<int>(ia / g), static_cast<int>(ib / g)};
}

Split build_skewed_split(const Workload& input, const SplitSpec& spec) {
  spec.validate();
  if (input.empty()) throw DataError("cannot split an empty workload");
  const Workload w = input.group_of.empty() ? partition_workload(input, spec.simple_def.by) : input;
  Rng rng(derive_seed(spec.seed, "split"));

  // Stratified test sample, largest-remainder apportionment across groups.
  const int m = w.num_groups();
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < w.size(); ++i) members[static_cast<std::size_t>(w.group_of[i] - 1)].push_back(i);
  const auto total = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(w.size())));
  std::vector<std::size_t> quota(members.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < members.size(); ++g) {
    const double exact = spec.test_fraction * static_cast<double>(members[g].size());
    quota[g] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[g];
    remainders.emplace_back(exact - std::floor(exact), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total && r < remainders.size(); ++r) {
    const std::size_t g = remainders[r].second;
    if (quota[g] < members[g].size()) {
      ++quota[g];
      ++assigned;
    }
  }

  std::vector<std::size_t> test, simple, complex;
  for (std::size_t g = 0; g < members.size(); ++g) {
    std::vector<std::size_t> idx = members[g];
    std::shuffle(idx.begin(), idx.end(), rng);
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[g]));
    for (std::size_t j = quota[g]; j < idx.size(); ++j) {
      (spec.simple_def.is_simple(w.queries[idx[j]]) ? simple : complex).push_back(idx[j]);
    }
  }
  std::sort(simple.begin(), simple.end());
  std::sort(complex.begin(), complex.end());
  std::shuffle(simple.begin(), simple.end(), rng);
  std::shuffle(complex.begin(), complex.end(), rng);

  const auto [a, b] = spec.ratio;
  const std::size_t k = std::min(simple.size() / static_cast<std::size_t>(a),
                                 complex.size() / static_cast<std::size_t>(b));
  if (k == 0) {
    throw DataError("ratio " + std::to_string(a) + "/" + std::to_string(b) + " unachievable: remaining pool has " +
                    std::to_string(simple.size()) + " simple and " + std::to_string(complex.size()) +
                    " complex queries (achievable maximum 0 queries)");
  }
  std::vector<std::size_t> train(simple.begin(), simple.begin() + static_cast<std::ptrdiff_t>(k * a));
  train.insert(train.end(), complex.begin(), complex.begin() + static_cast<std::ptrdiff_t>(k * b));
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {w.subset(train), w.subset(test)};
}

Workload label_and_filter(const Database& db, std::vector<SPJQuery> queries) {
  Workload w;
  std::set<std::string> seen;
  for (SPJQuery& q : queries) {
    q.normalize();
    if (!seen.insert(structural_key(q)).second) continue;
    const std::uint64_t c = exact_cardinality(db, q);
    if (c == 0) continue;
    q.cardinality = c;
    w.queries.push_back(std::move(q));
  }
  return w;
}

// ---------------------------------------------------------------------------
// JSON-lines

std::string query_to_json(const SPJQuery& q, const Database& db, int group) {
  json doc;
  doc["relations"] = q.relations;
  doc["selections"] = json::array();
  for (const Selection& s : q.selections) {
    json sel;
    sel["attribute"] = s.attribute.to_string();
    if (s.is_range()) {
      sel["lb"] = s.range().lb;
      sel["ub"] = s.range().ub;
    } else {
      const AttributeMeta& meta = db.attribute(s.attribute);
      json values = json::array();
      for (int v : s.in().values) values.push_back(meta.categories.at(static_cast<std::size_t>(v)));
      sel["in"] = std::move(values);
    }
    doc["selections"].push_back(std::move(sel));
  }
  doc["joins"] = json::array();
  for (const JoinPair& j : q.joins) doc["joins"].push_back({{"left", j.left.to_string()}, {"right", j.right.to_string()}});
  if (q.cardinality) {
    doc["cardinality"] = *q.cardinality;
  } else {
    doc["cardinality"] = nullptr;
  }
  doc["group"] = group;
  doc["template"] = q.template_tag;
  return doc.dump();
}

SPJQuery query_from_json(std::string_view line, const Database& db, int* group) {
  SPJQuery q;
  try {
    const json doc = json::parse(line);
    if (!doc.is_object()) throw DataError("query must be a JSON object");
    q.relations = doc.at("relations").get<std::vector<std::string>>();
    for (const json& sel : doc.value("selections", json::array())) {
      Selection s{AttributeRef::parse(sel.at("attribute").get<std::string>()), RangeFilter{}};
      if (sel.contains("in")) {
        const AttributeMeta& meta = db.attribute(s.attribute);
        InFilter f;
        for (const json& v : sel.at("in")) {
          auto idx = meta.category_index(v.get<std::string>());
          if (!idx) throw DataError("value '" + v.get<std::string>() + "' outside domain of " + s.attribute.to_string());
          f.values.push_back(*idx);
        }
        s.filter = std::move(f);
      } else {
        s.filter = RangeFilter{sel.at("lb").get<double>(), sel.at("ub").get<double>()};
      }
      q.selections.push_back(std::move(s));
    }
    for (const json& j : doc.value("joins", json::array())) {
      q.joins.push_back({AttributeRef::parse(j.at("left").get<std::string>()),
                         AttributeRef::parse(j.at("right").get<std::string>())});
    }
    if (doc.contains("cardinality") && !doc.at("cardinality").is_null()) {
      q.cardinality = doc.at("cardinality").get<std::uint64_t>();
    }
    q.template_tag = doc.value("template", std::string{});
    if (group) *group = doc.value("group", 0);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed query: ") + e.what());
  }
  q.normalize();
  validate_query(db, q);
  return q;
}

void write_workload(std::ostream& out, const Workload& w, const Database& db) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    out << query_to_json(w.queries[i], db, w.group_of.empty() ? 0 : w.group_of[i]) << '\n';
  }
}

void write_workload(const std::filesystem::path& path, const Workload& w, const Database& db) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_workload(out, w, db);
}

Workload read_workload(std::istream& in, const Database& db) {
  Workload w;
  std::string line;
  bool all_grouped = true;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    int group = 0;
    try {
      w.queries.push_back(query_from_json(line, db, &group));
    } catch (const DataError& e) {
      throw DataError("workload line " + std::to_string(n) + ": " + e.what());
    }
    w.group_of.push_back(group);
    all_grouped = all_grouped && group >= 1;
  }
  if (!all_grouped) w.group_of.clear();
  return w;
}

Workload read_workload(const std::filesystem::path& path, const Database& db) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_workload(in, db);
}

}  // namespace cardood
