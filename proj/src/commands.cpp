#include "cardood/commands.hpp"

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "cardood/checkpoint.hpp"
#include "cardood/error.hpp"
#include "cardood/evaluation.hpp"
#include "cardood/seed.hpp"
#include "cardood/server.hpp"

namespace cardood {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Typed accessors over one config section; unknown keys are rejected.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (doc.is_null()) return;
    if (!doc.is_object()) throw UsageError("config section '" + name_ + "' must be an object");
    doc_ = &doc;
  }

  template <typename T>
  std::optional<T> get(const std::string& key) {
    seen_.insert(key);
    if (!doc_ || !doc_->contains(key)) return std::nullopt;
    try {
      return doc_->at(key).get<T>();
    } catch (const json::exception&) {
      throw UsageError("config key '" + path(key) + "' has the wrong type");
    }
  }

  template <typename T>
  void read(const std::string& key, T& target) {
    if (auto v = get<T>(key)) target = *v;
  }

  /// Accepts a scalar or a list of scalars.
  template <typename T>
  void read_list(const std::string& key, std::vector<T>& target) {
    seen_.insert(key);
    if (!doc_ || !doc_->contains(key)) return;
    const json& v = doc_->at(key);
    try {
      target = v.is_array() ? v.get<std::vector<T>>() : std::vector<T>{v.get<T>()};
    } catch (const json::exception&) {
      throw UsageError("config key '" + path(key) + "' has the wrong type");
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    if (!doc_ || !doc_->contains(key)) return nullptr;
    return &doc_->at(key);
  }

  void finish() const {
    if (!doc_) return;
    for (const auto& [key, value] : doc_->items()) {
      if (!seen_.count(key)) throw UsageError("unknown config key '" + path(key) + "'");
    }
  }

 private:
  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  const json* doc_ = nullptr;
  std::string name_;
  std::set<std::string> seen_;
};

const json kNull;

const json& section_or_null(const json* j) { return j ? *j : kNull; }

AttributeMeta parse_attribute(const json& j) {
  Section s(j, "data.tables[].attributes[]");
  const std::string name = s.get<std::string>("name").value_or("");
  if (name.empty()) throw UsageError("attribute without a name");
  const std::string kind = s.get<std::string>("kind").value_or("numerical");
  AttributeMeta meta;
  if (kind == "numerical") {
    meta = AttributeMeta::numerical(name, s.get<double>("min").value_or(0.0), s.get<double>("max").value_or(1000.0));
    s.child("categories");
  } else if (kind == "categorical") {
    std::vector<std::string> cats;
    const json* c = s.child("categories");
    if (!c) throw UsageError("categorical attribute '" + name + "' needs categories");
    if (c->is_number_integer()) {
      const int n = c->get<int>();
      if (n <= 0) throw UsageError("categorical attribute '" + name + "' needs a positive category count");
      for (int k = 0; k < n; ++k) cats.push_back("c" + std::to_string(k));
    } else if (c->is_array()) {
      cats = c->get<std::vector<std::string>>();
    } else {
      throw UsageError("categories of '" + name + "' must be a count or a list");
    }
    meta = AttributeMeta::categorical(name, std::move(cats));
    s.child("min");
    s.child("max");
  } else {
    throw UsageError("unknown attribute kind '" + kind + "'");
  }
  s.read("range_encodable", meta.range_encodable);
  s.finish();
  return meta;
}

SyntheticTableSpec parse_table(const json& j) {
  Section s(j, "data.tables[]");
  SyntheticTableSpec t;
  s.read("name", t.name);
  s.read("rows", t.rows);
  s.read("skew", t.skew);
  if (const json* attrs = s.child("attributes")) {
    for (const json& a : *attrs) t.attributes.push_back(parse_attribute(a));
  }
  if (const json* corr = s.child("correlations")) {
    for (const json& c : *corr) {
      Section cs(c, "data.tables[].correlations[]");
      Correlation x;
      cs.read("a", x.a);
      cs.read("b", x.b);
      cs.read("coef", x.coef);
      cs.finish();
      t.correlation.push_back(std::move(x));
    }
  }
  s.finish();
  return t;
}

SyntheticTableSpec default_table() {
  SyntheticTableSpec t;
  for (int k = 0; k < 5; ++k) t.attributes.push_back(AttributeMeta::numerical("a" + std::to_string(k), 0.0, 1000.0));
  return t;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

fs::path manifest_path(const ExperimentConfig& cfg) { return cfg.resolve(cfg.data_dir) / "manifest.json"; }

std::string split_descriptor(const ExperimentConfig& cfg) {
  return std::to_string(cfg.split.ratio.first) + "/" + std::to_string(cfg.split.ratio.second) +
         " seed=" + std::to_string(cfg.seed);
}

std::string pair_name(Algorithm a, Arch arch) { return to_string(a) + "-" + to_string(arch); }

// Identifies a grid point: every hyperparameter plus the training data.
std::string grid_checksum(const ExperimentConfig& cfg, const TrainConfig& tc, const std::string& train_bytes) {
  std::ostringstream key;
  key.precision(17);
  key << "v1|" << to_string(tc.algorithm) << '|' << to_string(cfg.arch) << '|' << tc.lr << '|' << tc.batch_size << '|'
      << tc.epochs << '|' << tc.weight_decay << '|' << tc.lr_decay << '|' << tc.lambda << '|' << tc.dann_ce_weight
      << '|' << tc.dro_step << '|' << tc.mixup_alpha << '|' << tc.mixup_sigma << '|' << tc.mask_prob << '|'
      << tc.contrastive_k << '|' << tc.seed << '|' << tc.convergence_tol << '|' << tc.convergence_window << '|'
      << cfg.validation_fraction << '|' << to_string(cfg.group_rule) << '|' << cfg.seed << '|'
      << fnv1a(train_bytes);
  return hex64(fnv1a(key.str()));
}

ModelDims dims_for(const QueryEncoder& encoder) { return ModelDims::for_encoder(encoder); }

void check_encoding(const Model<float>& model, const QueryEncoder& encoder) {
  const ModelDims e = dims_for(encoder);
  const ModelDims& m = model.dims();
  const bool fits = model.arch() == Arch::Mlp ? m.input_width == e.input_width
                                              : m.relation_width == e.relation_width &&
                                                    m.selection_width == e.selection_width &&
                                                    m.join_width == e.join_width;
  if (!fits) throw DataError("checkpoint architecture does not match the database encoding");
}

EncoderOptions encoder_options(const CheckpointMeta& meta) {
  EncoderOptions o;
  if (auto it = meta.find("chunk_bits"); it != meta.end()) o.chunk_bits = std::stoul(it->second);
  return o;
}

std::vector<QErrorReport> load_reports(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::exists(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      const fs::path p = e.path();
      if (p.extension() == ".json" && p.filename().string().rfind("comparison-", 0) != 0) files.push_back(p);
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<QErrorReport> out;
  for (const fs::path& p : files) out.push_back(report_from_json(read_file(p)));
  return out;
}

// One comparison per arch that has an ERM report; ERM first, others sorted.
void write_comparisons(const fs::path& dir, const std::vector<QErrorReport>& reports, std::ostream& log) {
  std::map<std::string, std::vector<QErrorReport>> by_arch;
  for (const QErrorReport& r : reports) by_arch[r.arch].push_back(r);
  for (auto& [arch, rs] : by_arch) {
    std::stable_sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) {
      if ((a.algorithm == "erm") != (b.algorithm == "erm")) return a.algorithm == "erm";
      return a.algorithm < b.algorithm;
    });
    if (rs.front().algorithm != "erm") {
      log << "no ERM baseline for " << arch << ", comparison skipped\n";
      continue;
    }
    const Comparison c = compare_algorithms(rs);
    write_file(dir / ("comparison-" + arch + ".json"), comparison_to_json(c));
    const std::string text = comparison_to_text(c);
    write_file(dir / ("comparison-" + arch + ".txt"), text);
    log << text;
  }
}

std::atomic<EstimateServer*> g_server{nullptr};

extern "C" void handle_stop_signal(int) {
  if (EstimateServer* s = g_server.load()) s->stop();
}

}  // namespace

fs::path ExperimentConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

void ExperimentConfig::validate() const {
  train.validate();
  split.validate();
  if (lr_grid.empty() || batch_grid.empty() || epoch_grid.empty()) throw UsageError("grid lists must be non-empty");
  for (double lr : lr_grid) {
    if (!(lr > 0)) throw UsageError("grid learning rates must be positive");
  }
  for (std::size_t b : batch_grid) {
    if (b == 0) throw UsageError("grid batch sizes must be positive");
  }
  for (std::size_t e : epoch_grid) {
    if (e == 0) throw UsageError("grid epoch counts must be positive");
  }
  if (counts.empty()) throw UsageError("workload counts must be non-empty");
  if (queries_per_count == 0) throw UsageError("queries per count must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw UsageError("validation fraction must lie in [0, 1)");
  }
  if (workers == 0) throw UsageError("worker count must be positive");
}

ExperimentConfig parse_config(const json& doc, const fs::path& base_dir) {
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  Section top(doc, "");
  top.read("seed", cfg.seed);

  Section data(section_or_null(top.child("data")), "data");
  if (auto dir = data.get<std::string>("dir")) cfg.data_dir = *dir;
  if (const json* tables = data.child("tables")) {
    for (const json& t : *tables) cfg.data.tables.push_back(parse_table(t));
  }
  if (const json* fks = data.child("foreign_keys")) {
    for (const json& f : *fks) {
      Section fs_(f, "data.foreign_keys[]");
      ForeignKey k;
      fs_.read("from", k.from);
      fs_.read("to", k.to);
      fs_.finish();
      cfg.data.foreign_keys.push_back(std::move(k));
    }
  }
  if (cfg.data.tables.empty()) cfg.data.tables.push_back(default_table());
  data.finish();

  Section wl(section_or_null(top.child("workload")), "workload");
  if (auto p = wl.get<std::string>("path")) cfg.workload_path = *p;
  if (auto kind = wl.get<std::string>("kind")) {
    if (*kind == "single") {
      cfg.workload_kind = ExperimentConfig::WorkloadKind::SingleTable;
    } else if (*kind == "join") {
      cfg.workload_kind = ExperimentConfig::WorkloadKind::Join;
    } else {
      throw UsageError("workload kind must be 'single' or 'join'");
    }
  }
  wl.read("table", cfg.workload_table);
  wl.read_list("counts", cfg.counts);
  wl.read("per_count", cfg.queries_per_count);
  wl.read("min_selections", cfg.join_options.min_selections_per_relation);
  wl.read("max_selections", cfg.join_options.max_selections_per_relation);
  wl.finish();

  Section sp(section_or_null(top.child("split")), "split");
  if (auto dir = sp.get<std::string>("dir")) cfg.split_dir = *dir;
  if (auto r = sp.get<std::string>("ratio")) cfg.split.ratio = parse_ratio(*r);
  if (auto by = sp.get<std::string>("simple_by")) cfg.split.simple_def.by = parse_group_rule(*by);
  sp.read("simple_max", cfg.split.simple_def.max_count);
  sp.read("test_fraction", cfg.split.test_fraction);
  if (auto g = sp.get<std::string>("group_rule")) {
    cfg.group_rule = parse_group_rule(*g);
  } else {
    cfg.group_rule = cfg.split.simple_def.by;
  }
  sp.finish();
  cfg.split.seed = derive_seed(cfg.seed, "split");

  Section tr(section_or_null(top.child("train")), "train");
  if (auto a = tr.get<std::string>("algorithm")) cfg.train.algorithm = parse_algorithm(*a);
  if (auto a = tr.get<std::string>("arch")) cfg.arch = parse_arch(*a);
  tr.read_list("lr", cfg.lr_grid);
  tr.read_list("batch_size", cfg.batch_grid);
  tr.read_list("epochs", cfg.epoch_grid);
  tr.read("weight_decay", cfg.train.weight_decay);
  tr.read("lr_decay", cfg.train.lr_decay);
  tr.read("lambda", cfg.train.lambda);
  cfg.train.dann_ce_weight = cfg.arch == Arch::Mscn ? 1e-3 : 1e-2;
  tr.read("dann_ce_weight", cfg.train.dann_ce_weight);
  tr.read("dro_step", cfg.train.dro_step);
  tr.read("mixup_alpha", cfg.train.mixup_alpha);
  tr.read("mixup_sigma", cfg.train.mixup_sigma);
  tr.read("mask_prob", cfg.train.mask_prob);
  tr.read("contrastive_k", cfg.train.contrastive_k);
  tr.read("convergence_tol", cfg.train.convergence_tol);
  tr.read("convergence_window", cfg.train.convergence_window);
  tr.read("validation_fraction", cfg.validation_fraction);
  if (auto dir = tr.get<std::string>("checkpoint_dir")) cfg.checkpoint_dir = *dir;
  tr.finish();
  cfg.train.seed = derive_seed(cfg.seed, "train");
  cfg.train.lr = cfg.lr_grid.empty() ? cfg.train.lr : cfg.lr_grid.front();
  cfg.train.batch_size = cfg.batch_grid.empty() ? cfg.train.batch_size : cfg.batch_grid.front();
  cfg.train.epochs = cfg.epoch_grid.empty() ? cfg.train.epochs : cfg.epoch_grid.front();

  Section ev(section_or_null(top.child("eval")), "eval");
  if (auto dir = ev.get<std::string>("report_dir")) cfg.report_dir = *dir;
  ev.finish();

  Section sv(section_or_null(top.child("serve")), "serve");
  if (auto ck = sv.get<std::string>("checkpoint")) cfg.serve_checkpoint = *ck;
  sv.read("port", cfg.port);
  sv.read("workers", cfg.workers);
  sv.finish();

  top.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return parse_config(doc, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

fs::path best_marker_path(const ExperimentConfig& cfg, Algorithm algorithm, Arch arch) {
  return cfg.resolve(cfg.checkpoint_dir) / ("best-" + pair_name(algorithm, arch) + ".json");
}

void cmd_gen_data(const ExperimentConfig& cfg, std::ostream& log) {
  const Database db = generate_synthetic_database(cfg.data, derive_seed(cfg.seed, "gen-data"));
  const fs::path dir = cfg.resolve(cfg.data_dir);
  save_database(dir, db);
  for (const Table& t : db.tables()) {
    log << t.name << ": " << t.num_rows() << " rows, " << t.num_attributes() << " attributes\n";
  }
  log << db.join_graph().size() << " join pairs, manifest " << (dir / "manifest.json").string() << '\n';
}

std::size_t cmd_gen_workload(const ExperimentConfig& cfg, std::ostream& log) {
  const Database db = load_database(manifest_path(cfg));
  Rng rng(derive_seed(cfg.seed, "gen-workload"));
  std::vector<SPJQuery> queries;
  for (std::size_t count : cfg.counts) {
    for (std::size_t k = 0; k < cfg.queries_per_count; ++k) {
      SPJQuery q;
      if (cfg.workload_kind == ExperimentConfig::WorkloadKind::SingleTable) {
        q = generate_single_table_query(db.table(cfg.workload_table), count, rng);
        q.template_tag = "d" + std::to_string(count);
      } else {
        q = generate_join_query(db, count, rng, cfg.join_options);
        q.template_tag = "t" + std::to_string(count);
      }
      queries.push_back(std::move(q));
    }
  }
  const Workload w = label_and_filter(db, std::move(queries));
  const fs::path out = cfg.resolve(cfg.workload_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_workload(out, w, db);
  std::map<std::string, std::size_t> per_group;
  for (const SPJQuery& q : w.queries) ++per_group[q.template_tag];
  for (const auto& [tag, n] : per_group) log << tag << ": " << n << '\n';
  log << w.size() << " labelled queries written to " << out.string() << '\n';
  return w.size();
}

TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  const Database db = load_database(manifest_path(cfg));
  const Workload all = read_workload(cfg.resolve(cfg.workload_path), db);
  const Split split = build_skewed_split(all, cfg.split);
  const fs::path split_dir = cfg.resolve(cfg.split_dir);
  fs::create_directories(split_dir);
  write_workload(split_dir / "train.jsonl", split.train, db);
  write_workload(split_dir / "test.jsonl", split.test, db);
  const std::string train_bytes = read_file(split_dir / "train.jsonl");
  log << "split: " << split.train.size() << " train, " << split.test.size() << " test\n";

  // Held-out validation slice of the training queries picks the grid point.
  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, "validation"));
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(cfg.validation_fraction * static_cast<double>(split.train.size())));
  if (cfg.validation_fraction > 0 && n_val == 0 && split.train.size() >= 2) n_val = 1;
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> fit_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(fit_idx.begin(), fit_idx.end());
  if (fit_idx.empty()) throw TrainingError("no training queries left after the validation hold-out");
  const Workload fit = partition_workload(split.train.subset(fit_idx), cfg.group_rule);
  const Workload val = split.train.subset(val_idx);

  const QueryEncoder encoder(db);
  const fs::path ck_dir = cfg.resolve(cfg.checkpoint_dir);
  fs::create_directories(ck_dir);
  TrainSummary summary;
  for (double lr : cfg.lr_grid) {
    for (std::size_t bs : cfg.batch_grid) {
      for (std::size_t epochs : cfg.epoch_grid) {
        TrainConfig tc = cfg.train;
        tc.lr = lr;
        tc.batch_size = bs;
        tc.epochs = epochs;
        GridPointResult point{lr, bs, epochs, grid_checksum(cfg, tc, train_bytes), {}, 0.0, false};
        const std::string stem = pair_name(tc.algorithm, cfg.arch) + "-" + point.checksum;
        point.checkpoint = ck_dir / (stem + ".ckpt");
        log << "grid point lr=" << lr << " batch=" << bs << " epochs=" << epochs << " [" << point.checksum << "]";
        if (fs::exists(point.checkpoint)) {
          const Checkpoint done = load_checkpoint(point.checkpoint);
          point.validation_mse = std::stod(done.meta.at("validation_mse"));
          point.skipped = true;
          log << " already trained, validation MSE " << point.validation_mse << '\n';
          summary.points.push_back(point);
          continue;
        }
        log << '\n';
        std::ofstream epoch_log(ck_dir / (stem + ".log.jsonl"));
        const bool has_aux = tc.algorithm != Algorithm::Erm && tc.algorithm != Algorithm::Masking &&
                             tc.algorithm != Algorithm::Mixup;
        auto on_epoch = [&](const EpochRecord& r, const Model<float>&) {
          json line{{"epoch", r.epoch}, {"main_loss", r.main_loss}, {"lr", r.lr}, {"wall_time", r.wall_time}};
          line["aux_loss"] = has_aux ? json(r.aux_loss) : json(nullptr);
          epoch_log << line.dump() << '\n';
        };
        Model<float> model = init_model(cfg.arch, dims_for(encoder), derive_seed(cfg.seed, "model"));
        TrainedModel trained = train(std::move(model), fit, db, tc, on_epoch);
        point.validation_mse = val.empty() ? trained.final_loss : workload_mse(trained.model, val, encoder);
        CheckpointMeta meta{{"algorithm", to_string(tc.algorithm)},
                            {"arch", to_string(cfg.arch)},
                            {"chunk_bits", std::to_string(encoder.options().chunk_bits)},
                            {"validation_mse", json(point.validation_mse).dump()},
                            {"wall_time", json(trained.wall_time).dump()},
                            {"epochs_run", std::to_string(trained.history.size())},
                            {"checksum", point.checksum}};
        save_checkpoint(point.checkpoint, trained.model, meta);
        log << "  " << trained.history.size() << " epochs, " << trained.wall_time << " s, train MSE "
            << trained.initial_loss << " -> " << trained.final_loss << ", validation MSE " << point.validation_mse
            << '\n';
        summary.points.push_back(point);
      }
    }
  }
  for (std::size_t i = 1; i < summary.points.size(); ++i) {
    if (summary.points[i].validation_mse < summary.points[summary.best].validation_mse) summary.best = i;
  }
  const GridPointResult& best = summary.points[summary.best];
  json marker{{"checkpoint", best.checkpoint.filename().string()},
              {"checksum", best.checksum},
              {"validation_mse", best.validation_mse},
              {"lr", best.lr},
              {"batch_size", best.batch_size},
              {"epochs", best.epochs}};
  write_file(best_marker_path(cfg, cfg.train.algorithm, cfg.arch), marker.dump(2) + "\n");
  log << "best: " << best.checkpoint.filename().string() << " (validation MSE " << best.validation_mse << ")\n";
  return summary;
}

std::vector<fs::path> cmd_eval(const ExperimentConfig& cfg, std::ostream& log, bool only_configured) {
  const Database db = load_database(manifest_path(cfg));
  const Workload test = read_workload(cfg.resolve(cfg.split_dir) / "test.jsonl", db);
  if (test.empty()) throw DataError("test workload is empty");
  const fs::path ck_dir = cfg.resolve(cfg.checkpoint_dir);
  std::vector<fs::path> markers;
  if (only_configured) {
    markers.push_back(best_marker_path(cfg, cfg.train.algorithm, cfg.arch));
    if (!fs::exists(markers.back())) throw DataError("no trained model at " + markers.back().string());
  } else if (fs::exists(ck_dir)) {
    for (const auto& e : fs::directory_iterator(ck_dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("best-", 0) == 0 && e.path().extension() == ".json") markers.push_back(e.path());
    }
    std::sort(markers.begin(), markers.end());
  }
  if (markers.empty()) throw DataError("no trained models in " + ck_dir.string());

  std::vector<double> truths;
  for (const SPJQuery& q : test.queries) truths.push_back(static_cast<double>(q.cardinality.value_or(0)));
  const auto groups = evaluation_groups(test, cfg.split.simple_def);
  const fs::path report_dir = cfg.resolve(cfg.report_dir);
  fs::create_directories(report_dir);
  std::vector<fs::path> written;
  for (const fs::path& marker : markers) {
    const json m = json::parse(read_file(marker));
    const Checkpoint ck = load_checkpoint(ck_dir / m.at("checkpoint").get<std::string>());
    const QueryEncoder encoder(db, encoder_options(ck.meta));
    check_encoding(ck.model, encoder);
    std::vector<double> estimates;
    estimates.reserve(test.size());
    for (const SPJQuery& q : test.queries) estimates.push_back(predict_cardinality(ck.model, q, encoder));
    QErrorReport r = quantile_report(estimates, truths, groups);
    r.algorithm = ck.meta.at("algorithm");
    r.arch = to_string(ck.model.arch());
    r.split = split_descriptor(cfg);
    r.train_wall_time = std::stod(ck.meta.at("wall_time"));
    const std::string stem = r.algorithm + "-" + r.arch;
    write_file(report_dir / (stem + ".json"), report_to_json(r));
    write_file(report_dir / (stem + ".txt"), report_to_text(r));
    write_file(report_dir / (stem + ".csv"), report_to_csv(r));
    log << report_to_text(r);
    written.push_back(report_dir / (stem + ".json"));
  }
  write_comparisons(report_dir, load_reports(report_dir), log);
  return written;
}

void cmd_report(const ExperimentConfig& cfg, std::ostream& log) {
  const fs::path dir = cfg.resolve(cfg.report_dir);
  const std::vector<QErrorReport> reports = load_reports(dir);
  if (reports.empty()) throw DataError("no reports in " + dir.string());
  for (const QErrorReport& r : reports) {
    const std::string text = report_to_text(r);
    write_file(dir / (r.algorithm + "-" + r.arch + ".txt"), text);
    log << text;
  }
  write_comparisons(dir, reports, log);
}

void cmd_serve(const ExperimentConfig& cfg, std::ostream& log) {
  const Database db = load_database(manifest_path(cfg));
  fs::path ck_path;
  if (cfg.serve_checkpoint) {
    ck_path = cfg.resolve(*cfg.serve_checkpoint);
  } else {
    const fs::path marker = best_marker_path(cfg, cfg.train.algorithm, cfg.arch);
    if (!fs::exists(marker)) throw DataError("no trained model at " + marker.string());
    ck_path = cfg.resolve(cfg.checkpoint_dir) / json::parse(read_file(marker)).at("checkpoint").get<std::string>();
  }
  Checkpoint ck = load_checkpoint(ck_path);
  const EncoderOptions options = encoder_options(ck.meta);
  const EstimateService service(std::move(ck.model), db, options);
  EstimateServer server(service, cfg.port, cfg.workers);
  g_server.store(&server);
  std::signal(SIGINT, handle_stop_signal);
  std::signal(SIGTERM, handle_stop_signal);
  log << "listening on 127.0.0.1:" << server.port() << std::endl;
  server.run();
  g_server.store(nullptr);
  log << "stopped" << std::endl;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training and evaluation of query-driven cardinality estimators"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> algorithm, arch, ratio, out_path, checkpoint;
  std::optional<std::uint16_t> port;
  std::optional<std::size_t> workers;
  app.add_option("--config", config_path, "JSON config file (default: $" + std::string(kConfigEnv) + ")");
  app.add_option("--seed", seed, "Global seed");
  app.add_option("--algorithm", algorithm, "erm, coral, dann, dro, orderemb, mixup or masking");
  app.add_option("--arch", arch, "mlp or mscn");
  app.add_option("--ratio", ratio, "Simple/complex training ratio, e.g. 20/80");
  app.add_option("--out", out_path, "Output location of the command");
  auto* gen_data = app.add_subcommand("gen-data", "Generate a synthetic database");
  auto* gen_workload = app.add_subcommand("gen-workload", "Generate and label a query workload");
  auto* train_cmd = app.add_subcommand("train", "Split the workload and train over the grid");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate trained models on the test split");
  auto* report_cmd = app.add_subcommand("report", "Rebuild tables from saved reports");
  auto* serve_cmd = app.add_subcommand("serve", "Serve estimates over a line protocol");
  serve_cmd->add_option("--port", port, "TCP port (0 picks a free one)");
  serve_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file (default: best for --algorithm/--arch)");
  serve_cmd->add_option("--workers", workers, "Concurrent connections");
  for (auto* sub : {gen_data, gen_workload, train_cmd, eval_cmd, report_cmd, serve_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (config_path.empty()) {
      if (const char* env = std::getenv(kConfigEnv)) config_path = env;
    }
    json doc = json::object();
    fs::path base = ".";
    if (!config_path.empty()) {
      try {
        doc = json::parse(read_file(config_path));
      } catch (const json::exception& e) {
        throw UsageError("config " + config_path + ": " + e.what());
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
      if (fs::path(config_path).has_parent_path()) base = fs::path(config_path).parent_path();
    }
    // Flags override the matching config keys.
    if (seed) doc["seed"] = *seed;
    if (algorithm) doc["train"]["algorithm"] = *algorithm;
    if (arch) doc["train"]["arch"] = *arch;
    if (ratio) doc["split"]["ratio"] = *ratio;
    if (port) doc["serve"]["port"] = *port;
    if (workers) doc["serve"]["workers"] = *workers;
    if (checkpoint) doc["serve"]["checkpoint"] = fs::absolute(*checkpoint).string();
    if (out_path) {
      const std::string p = fs::absolute(*out_path).string();
      if (gen_data->parsed()) doc["data"]["dir"] = p;
      if (gen_workload->parsed()) doc["workload"]["path"] = p;
      if (train_cmd->parsed()) doc["train"]["checkpoint_dir"] = p;
      if (eval_cmd->parsed() || report_cmd->parsed()) doc["eval"]["report_dir"] = p;
      if (serve_cmd->parsed()) throw UsageError("serve does not write output; --out is not accepted");
    }
    const ExperimentConfig cfg = parse_config(doc, base);
    if (gen_data->parsed()) cmd_gen_data(cfg, out);
    if (gen_workload->parsed()) cmd_gen_workload(cfg, out);
    if (train_cmd->parsed()) cmd_train(cfg, out);
    if (eval_cmd->parsed()) cmd_eval(cfg, out, algorithm.has_value() || arch.has_value());
    if (report_cmd->parsed()) cmd_report(cfg, out);
    if (serve_cmd->parsed()) cmd_serve(cfg, out);
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const TrainingError& e) {
    err << "training error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace cardood
