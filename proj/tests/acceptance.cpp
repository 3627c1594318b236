// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include <json.hpp>

#include "cardood/checkpoint.hpp"
#include "cardood/encoding.hpp"
#include "cardood/evaluation.hpp"
#include "cardood/losses.hpp"
#include "cardood/objectives.hpp"
#include "cardood/server.hpp"
#include "cardood/trainer.hpp"
#include "support.hpp"

using namespace cardood;
using namespace cardood::testing;
using nlohmann::json;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradientTolerance = 1e-4;
constexpr double kSimplexTolerance = 1e-9;
constexpr double kDroExampleTolerance = 1e-9;
constexpr double kErmLossRatio = 0.25;
constexpr double kErmMedianQError = 10.0;
constexpr double kOracleBudget = 60.0;
constexpr double kGradientBudget = 120.0;
constexpr double kErmBudget = 300.0;
constexpr double kOodBudget = 1800.0;

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// 1. exact_cardinality against the nested-loop oracle.
Outcome oracle_equivalence() {
  const auto start = Clock::now();
  const Database db = chain_database(3, 1000, 2024);
  std::mt19937_64 rng(1);
  std::size_t agree = 0, total = 0;
  for (int i = 0; i < 100; ++i) {
    const Table& t = db.tables()[static_cast<std::size_t>(i) % db.tables().size()];
    const SPJQuery q = generate_single_table_query(t, 2 + static_cast<std::size_t>(i % 2), rng);
    agree += exact_cardinality(db, q) == oracle_count(db, q);
    ++total;
  }
  for (int i = 0; i < 100; ++i) {
    const SPJQuery q = generate_join_query(db, 1 + static_cast<std::size_t>(i % 2), rng);
    agree += exact_cardinality(db, q) == oracle_count(db, q);
    ++total;
  }
  const double secs = seconds_since(start);
  return {agree == total && secs < kOracleBudget,
          std::to_string(agree) + "/" + std::to_string(total) + " queries agree in " + fmt(secs) + " s"};
}

// 2. q-error laws.
Outcome qerror_law() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> logu(-3, 7);
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    double c = std::pow(10.0, logu(rng));
    double e = std::pow(10.0, logu(rng));
    if (i % 5 == 0) e = c;
    if (i % 7 == 0) c = std::floor(c);
    const double q = q_error(c, e);
    const bool equal = std::max(c, 1.0) == std::max(e, 1.0);
    if (!(q >= 1.0) || q != q_error(e, c) || (q == 1.0) != equal) ++violations;
  }
  return {violations == 0, std::to_string(violations) + " violations over 10000 pairs"};
}

// 3. Finite-difference gradient checks.
Outcome gradient_suite() {
  const auto start = Clock::now();
  std::mt19937_64 rng(3);
  double worst_mse = 0, worst_coral = 0, worst_ce = 0, worst_order = 0, worst_mlp = 0, worst_mscn = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Matrix<double> p = random_matrix(1, 8, rng, -3, 3);
    const Matrix<double> y = random_matrix(1, 8, rng, 0, 6);
    worst_mse = std::max(worst_mse, tensor_rel_error(loss_mse_grad(p, y), numeric_gradient([&] { return loss_mse(p, y); }, p)));

    Matrix<double> a = random_matrix(5, 6, rng);
    Matrix<double> b = random_matrix(5, 9, rng);
    const auto cg = loss_coral_grad(a, b);
    worst_coral = std::max({worst_coral, tensor_rel_error(cg.a, numeric_gradient([&] { return loss_coral(a, b); }, a)),
                            tensor_rel_error(cg.b, numeric_gradient([&] { return loss_coral(a, b); }, b))});

    Matrix<double> logits = random_matrix(4, 6, rng, -2, 2);
    std::vector<int> labels(6);
    for (auto& l : labels) l = static_cast<int>(rng() % 4);
    const auto ce = [&] { return loss_ce(softmax<double>(logits), labels); };
    Matrix<double> probs = random_matrix(4, 6, rng, 0.05, 1);
    worst_ce = std::max({worst_ce,
                         tensor_rel_error(loss_ce_logit_grad(softmax<double>(logits), labels), numeric_gradient(ce, logits)),
                         tensor_rel_error(loss_ce_grad(probs, labels),
                                          numeric_gradient([&] { return loss_ce(probs, labels); }, probs))});

    Matrix<double> anchor = random_matrix(5, 1, rng);
    Matrix<double> subs = random_matrix(5, 4, rng);
    const auto og = loss_order_grad(anchor.col(0), subs);
    const auto order = [&] { return loss_order(anchor.col(0), subs); };
    worst_order = std::max({worst_order, tensor_rel_error(og.subs, numeric_gradient(order, subs)),
                            tensor_rel_error(Matrix<double>(og.anchor), numeric_gradient(order, anchor))});

    for (Arch arch : {Arch::Mlp, Arch::Mscn}) {
      const ModelDims dims = tiny_dims();
      Model<double> m(arch, dims, static_cast<std::uint64_t>(trial));
      const Batch<double> batch = random_batch(arch, dims, 4, rng);
      const Matrix<double> w = random_matrix(1, 4, rng);
      m.zero_grad();
      m.backward(batch, m.forward(batch), w);
      const double err = worst_parameter_gradient_error(
          m, [&](std::size_t) { return (m.forward(batch).log_card.array() * w.array()).sum(); });
      (arch == Arch::Mlp ? worst_mlp : worst_mscn) = std::max(arch == Arch::Mlp ? worst_mlp : worst_mscn, err);
    }
  }
  const double worst = std::max({worst_mse, worst_coral, worst_ce, worst_order, worst_mlp, worst_mscn});
  const double secs = seconds_since(start);
  return {worst <= kGradientTolerance && secs < kGradientBudget,
          "worst relative error mse " + fmt(worst_mse) + ", coral " + fmt(worst_coral) + ", ce " + fmt(worst_ce) +
              ", order " + fmt(worst_order) + ", mlp " + fmt(worst_mlp) + ", mscn " + fmt(worst_mscn) + " in " +
              fmt(secs) + " s"};
}

// 4. DRO example and simplex invariant.
Outcome dro_dynamics() {
  Eigen::VectorXd w(2), l(2);
  w << 0.5, 0.5;
  l << 1, 2;
  const Eigen::VectorXd out = dro_weight_update(w, l, 1.0);
  const double e = std::exp(1.0);
  const double example_err = std::max(std::abs(out[0] - 1 / (1 + e)), std::abs(out[1] - e / (1 + e)));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> loss(0, 20);
  Eigen::VectorXd omega = Eigen::VectorXd::Constant(6, 1.0 / 6);
  double drift = 0;
  for (int i = 0; i < 1000; ++i) {
    Eigen::VectorXd g(6);
    for (auto& v : g) v = loss(rng);
    omega = dro_weight_update(omega, g, 0.1);
    drift = std::max(drift, std::abs(omega.sum() - 1));
  }
  return {example_err <= kDroExampleTolerance && drift <= kSimplexTolerance,
          "example error " + fmt(example_err) + ", max |sum - 1| " + fmt(drift) + " over 1000 updates"};
}

// 5. Contrastive samples are sub-conditions with no larger cardinality.
Outcome contrastive_monotonicity() {
  const Database db = mixed_database(5000, 5);
  const Table& t = db.table("t0");
  std::mt19937_64 rng(5);
  std::size_t pairs = 0, ok = 0;
  while (pairs < 1000) {
    const SPJQuery q = generate_single_table_query(t, 2 + pairs % 4, rng);
    const std::uint64_t c = exact_cardinality(db, q);
    for (const SPJQuery& sub : sample_contrastive_queries(q, 5, rng)) {
      ok += is_subcondition(sub, q) && exact_cardinality(db, sub) <= c;
      ++pairs;
    }
  }
  return {ok == pairs, std::to_string(ok) + "/" + std::to_string(pairs) + " pairs monotone"};
}

// 6. Factorised bitmaps round-trip for every subset.
Outcome bitmap_losslessness() {
  std::size_t cases = 0, ok = 0;
  for (std::size_t m = 1; m <= 12; ++m) {
    for (std::size_t s : {1, 4, 8}) {
      for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
        std::vector<int> subset;
        for (std::size_t k = 0; k < m; ++k) {
          if (mask & (1u << k)) subset.push_back(static_cast<int>(k));
        }
        const auto chunks = factorize_bitmap(subset, m, s);
        bool good = chunks.size() == (m + s - 1) / s && decode_bitmap(chunks, m, s) == subset;
        for (std::uint64_t c : chunks) good = good && c < (std::uint64_t{1} << s);
        ok += good;
        ++cases;
      }
    }
  }
  return {ok == cases, std::to_string(ok) + "/" + std::to_string(cases) + " subsets round-trip"};
}

struct Labelled {
  Database db;
  Workload workload;
};

Labelled labelled_single_table(std::size_t rows, std::size_t attrs, std::size_t queries, std::uint64_t seed) {
  Labelled l;
  l.db = generate_synthetic_database({{numeric_table("t0", rows, attrs)}, {}}, seed);
  std::mt19937_64 rng(seed + 1);
  std::vector<SPJQuery> qs;
  for (std::size_t i = 0; i < queries * 3; ++i) {
    qs.push_back(generate_single_table_query(l.db.table("t0"), 2 + i % (attrs - 1), rng));
  }
  Workload w = label_and_filter(l.db, std::move(qs));
  if (w.size() < queries) throw std::runtime_error("not enough distinct non-empty queries");
  w.queries.resize(queries);
  l.workload = partition_workload(std::move(w), GroupRule::BySelectionCount);
  return l;
}

// 7. Degenerate configurations reproduce ERM exactly.
Outcome degenerate_equivalence() {
  const Labelled l = labelled_single_table(2000, 3, 120, 7);
  Workload one = l.workload;
  std::fill(one.group_of.begin(), one.group_of.end(), 1);
  std::string detail;
  bool pass = true;
  for (Arch arch : {Arch::Mlp, Arch::Mscn}) {
    const ModelDims dims = ModelDims::for_encoder(QueryEncoder(l.db));
    auto run = [&](Algorithm a, const Workload& w) {
      TrainConfig cfg;
      cfg.algorithm = a;
      cfg.epochs = 10;
      cfg.batch_size = 16;
      cfg.seed = 77;
      cfg.mask_prob = 0.0;
      cfg.convergence_tol = 0.0;
      std::vector<Vector<float>> trajectory;
      train(Model<float>(arch, dims, 3), w, l.db, cfg,
            [&](const EpochRecord&, const Model<float>& m) { trajectory.push_back(m.flat_parameters()); });
      return trajectory;
    };
    const auto erm = run(Algorithm::Erm, l.workload);
    const bool masking = run(Algorithm::Masking, l.workload) == erm;
    const bool dro = run(Algorithm::GroupDro, one) == erm;
    pass = pass && masking && dro && erm.size() == 10;
    detail += to_string(arch) + ": masking " + (masking ? "identical" : "differs") + ", dro " +
              (dro ? "identical" : "differs") + "; ";
  }
  detail += "10 epochs";
  return {pass, detail};
}

// 8. ERM fits a small 2-attribute workload.
Outcome erm_sanity() {
  const auto start = Clock::now();
  const Labelled l = labelled_single_table(10000, 2, 600, 8);
  std::vector<std::size_t> train_idx(500), test_idx(100);
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(test_idx.begin(), test_idx.end(), 500);
  const Workload train_w = l.workload.subset(train_idx);
  const Workload test_w = l.workload.subset(test_idx);
  const QueryEncoder enc(l.db);
  TrainConfig cfg;
  cfg.epochs = 80;
  cfg.seed = 8;
  const TrainedModel t = train(Model<float>(Arch::Mlp, ModelDims::for_encoder(enc), 8), train_w, l.db, cfg);
  std::vector<double> q;
  for (const SPJQuery& s : test_w.queries) {
    q.push_back(q_error(static_cast<double>(*s.cardinality), predict_cardinality(t.model, s, enc)));
  }
  const double ratio = t.final_loss / t.initial_loss;
  const double median = nearest_rank_quantile(q, 50);
  const double secs = seconds_since(start);
  return {ratio <= kErmLossRatio && median <= kErmMedianQError && secs < kErmBudget,
          "loss " + fmt(t.initial_loss) + " -> " + fmt(t.final_loss) + " (ratio " + fmt(ratio) + ") in " +
              std::to_string(t.history.size()) + " epochs, test median q-error " + fmt(median) + ", " + fmt(secs) +
              " s"};
}

// 9. Robust training against ERM under a 20/80 simple/complex skew.
Outcome ood_smoke() {
  const auto start = Clock::now();
  SyntheticTableSpec spec = numeric_table("t0", 50000, 10);
  for (auto& a : spec.attributes) a.max = 1000.0;
  spec.correlation = {{"a0", "a1", 0.7}, {"a2", "a3", 0.5}};
  const Database db = generate_synthetic_database({{spec}, {}}, derive_seed(0, "ood-data"));
  std::mt19937_64 rng(derive_seed(0, "ood-workload"));
  std::vector<SPJQuery> qs;
  for (std::size_t d = 2; d <= 10; ++d) {
    for (int k = 0; k < 2000; ++k) {
      SPJQuery q = generate_single_table_query(db.table("t0"), d, rng);
      q.template_tag = "d" + std::to_string(d);
      qs.push_back(std::move(q));
    }
  }
  const Workload all = partition_workload(label_and_filter(db, std::move(qs)), GroupRule::BySelectionCount);
  const QueryEncoder enc(db);
  std::size_t wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SplitSpec split_spec;
    split_spec.simple_def = {GroupRule::BySelectionCount, 6};
    split_spec.ratio = {20, 80};
    split_spec.test_fraction = 0.10;
    split_spec.seed = derive_seed(seed, "split");
    const Split split = build_skewed_split(all, split_spec);
    const Workload train_w = partition_workload(split.train, GroupRule::BySelectionCount);
    auto p95 = [&](Algorithm a) {
      TrainConfig cfg;
      cfg.algorithm = a;
      cfg.seed = derive_seed(seed, "train");
      const TrainedModel t =
          train(Model<float>(Arch::Mlp, ModelDims::for_encoder(enc), derive_seed(seed, "model")), train_w, db, cfg);
      std::vector<double> q;
      for (const SPJQuery& s : split.test.queries) {
        q.push_back(q_error(static_cast<double>(*s.cardinality), predict_cardinality(t.model, s, enc)));
      }
      return nearest_rank_quantile(q, 95);
    };
    const double erm = p95(Algorithm::Erm);
    const double coral = p95(Algorithm::Coral);
    const double order = p95(Algorithm::OrderEmb);
    const bool win = coral <= erm || order <= erm;
    wins += win;
    detail += "seed " + std::to_string(seed) + " erm " + fmt(erm) + " coral " + fmt(coral) + " orderemb " +
              fmt(order) + (win ? " (win)" : "") + "; ";
    std::cerr << "  ood seed " << seed << ": erm " << erm << ", coral " << coral << ", orderemb " << order << " ("
              << fmt(seconds_since(start)) << " s)\n";
  }
  const double secs = seconds_since(start);
  detail += std::to_string(wins) + "/5 seeds, " + std::to_string(all.size()) + " queries, " + fmt(secs) + " s";
  return {wins >= 3 && secs <= kOodBudget, detail};
}

// 10. Member order never changes MSCN output.
Outcome mscn_permutation() {
  const Database db = chain_database(4, 300, 10);
  const QueryEncoder enc(db);
  const Model<float> m(Arch::Mscn, ModelDims::for_encoder(enc), 10);
  std::mt19937_64 rng(10);
  auto shuffle_cols = [&](const Eigen::MatrixXd& x) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.cols()));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) out.col(c) = x.col(order[static_cast<std::size_t>(c)]);
    return out;
  };
  std::vector<SetEncoding> original, permuted;
  for (int i = 0; i < 100; ++i) {
    const SPJQuery q = generate_join_query(db, 1 + static_cast<std::size_t>(i % 3), rng);
    original.push_back(enc.encode_set(q));
    const SetEncoding& e = original.back();
    permuted.push_back({shuffle_cols(e.relations), shuffle_cols(e.selections), shuffle_cols(e.joins)});
  }
  std::size_t identical = 0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const SetEncoding* a = &original[i];
    const SetEncoding* b = &permuted[i];
    const auto fa = m.forward(make_batch<float>(std::span<const SetEncoding* const>(&a, 1)));
    const auto fb = m.forward(make_batch<float>(std::span<const SetEncoding* const>(&b, 1)));
    identical += fa.log_card == fb.log_card && fa.embedding == fb.embedding;
  }
  return {identical == original.size(), std::to_string(identical) + "/100 queries bit-identical"};
}

// 11. Line protocol over TCP.
Outcome serve_protocol() {
  const Labelled l = labelled_single_table(3000, 4, 200, 11);
  TempDir dir("acceptance-serve");
  const std::filesystem::path ckpt = dir.path() / "model.ckpt";
  {
    TrainConfig cfg;
    cfg.epochs = 5;
    const TrainedModel t =
        train(Model<float>(Arch::Mscn, ModelDims::for_encoder(QueryEncoder(l.db)), 11), l.workload, l.db, cfg);
    save_checkpoint(ckpt, t.model, {{"algorithm", "erm"}});
  }
  std::vector<std::string> script;
  const std::vector<std::string> malformed{"", "not json", "{", "[]", "{\"relations\": 3}",
                                           "{\"relations\": [\"nope\"]}", "{\"relations\": [\"t0\"], \"selections\": [{}]}",
                                           "null", "{\"relations\": [\"t0\"], \"joins\": \"x\"}", "\"t0\""};
  for (std::size_t i = 0, v = 0, b = 0; i < 110; ++i) {
    if (i % 11 == 5) {
      script.push_back(malformed[b++]);
    } else {
      script.push_back(query_to_json(l.workload.queries[v++ % l.workload.size()], l.db));
    }
  }
  std::size_t valid_ok = 0, errors_ok = 0;
  bool survived = true;
  auto session = [&]() {
    Checkpoint ck = load_checkpoint(ckpt);
    const EstimateService service(std::move(ck.model), l.db);
    EstimateServer server(service, 0);
    std::thread loop([&] { server.run(); });
    std::vector<std::string> responses;
    {
      LineClient client(server.port());
      for (const std::string& line : script) responses.push_back(client.request(line));
    }
    {
      LineClient again(server.port());
      survived = survived && !again.request(script[0]).empty();
    }
    server.stop();
    loop.join();
    return responses;
  };
  const auto first = session();
  const auto second = session();
  for (std::size_t i = 0; i < script.size(); ++i) {
    json r;
    try {
      r = json::parse(first[i]);
    } catch (const json::exception&) {
      continue;
    }
    if (i % 11 == 5) {
      errors_ok += r.is_object() && r.contains("error") && !r.contains("cardinality");
    } else {
      valid_ok += r.is_object() && r.contains("cardinality") && r["cardinality"].get<double>() >= 1.0;
    }
  }
  const bool deterministic = first == second;
  return {valid_ok == 100 && errors_ok == 10 && survived && deterministic,
          std::to_string(valid_ok) + "/100 valid answered, " + std::to_string(errors_ok) +
              "/10 malformed rejected, server " + (survived ? "survived" : "died") + ", runs " +
              (deterministic ? "identical" : "differ")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"q-error law", qerror_law},
      {"gradient suite", gradient_suite},
      {"DRO weight dynamics", dro_dynamics},
      {"contrastive monotonicity", contrastive_monotonicity},
      {"bitmap losslessness", bitmap_losslessness},
      {"degenerate equivalence", degenerate_equivalence},
      {"ERM sanity", erm_sanity},
      {"OOD smoke test", ood_smoke},
      {"MSCN permutation invariance", mscn_permutation},
      {"serve protocol", serve_protocol},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << criteria.size() - static_cast<std::size_t>(failures) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
