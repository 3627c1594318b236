#include <doctest.h>

#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cardood/checkpoint.hpp"
#include "cardood/commands.hpp"
#include "cardood/error.hpp"
#include "cardood/evaluation.hpp"
#include "cardood/server.hpp"
#include "support.hpp"

using namespace cardood;
using namespace cardood::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small single-table experiment: 2000 rows, 4 attributes, 60 queries per
// selection count 2..4.
json small_config() {
  return json::parse(R"({
    "seed": 5,
    "data": {"tables": [{"name": "t0", "rows": 2000, "attributes": [
      {"name": "a0", "kind": "numerical", "min": 0, "max": 100},
      {"name": "a1", "kind": "numerical", "min": 0, "max": 100},
      {"name": "a2", "kind": "numerical", "min": 0, "max": 100},
      {"name": "a3", "kind": "categorical", "categories": 6}]}]},
    "workload": {"counts": [2, 3, 4], "per_count": 60},
    "split": {"ratio": "50/50", "simple_max": 2, "test_fraction": 0.2},
    "train": {"lr": [1e-3, 5e-4, 1e-4], "batch_size": 32, "epochs": 3}
  })");
}

struct Cli {
  int code = 0;
  std::string out;
  std::string err;
};

Cli run(std::vector<std::string> args) {
  args.insert(args.begin(), "cardood");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Cli r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path write_config(const fs::path& dir, const json& doc) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

}  // namespace

TEST_CASE("config parsing resolves defaults and rejects unknown keys") {
  json doc = small_config();
  const ExperimentConfig cfg = parse_config(doc, "/base");
  CHECK(cfg.lr_grid == std::vector<double>{1e-3, 5e-4, 1e-4});
  CHECK(cfg.batch_grid == std::vector<std::size_t>{32});
  CHECK(cfg.split.ratio == std::pair{1, 1});
  CHECK(cfg.resolve("data") == fs::path("/base/data"));
  CHECK(cfg.resolve("/abs") == fs::path("/abs"));
  CHECK(cfg.train.dann_ce_weight == 1e-2);
  CHECK(cfg.data.tables.at(0).attributes.at(3).domain_size() == 6);

  json mscn = small_config();
  mscn["train"]["arch"] = "mscn";
  CHECK(parse_config(mscn).train.dann_ce_weight == 1e-3);

  json unknown = small_config();
  unknown["train"]["learning_rate"] = 1;
  CHECK_THROWS_AS(parse_config(unknown), UsageError);
  json typed = small_config();
  typed["seed"] = "five";
  CHECK_THROWS_AS(parse_config(typed), UsageError);
  json empty_grid = small_config();
  empty_grid["train"]["lr"] = json::array();
  CHECK_THROWS_AS(parse_config(empty_grid), UsageError);
  json bad_algo = small_config();
  bad_algo["train"]["algorithm"] = "adam";
  CHECK_THROWS_AS(parse_config(bad_algo), UsageError);
}

TEST_CASE("full pipeline through the command line") {
  TempDir dir("cli");
  const fs::path config = write_config(dir.path(), small_config());
  const std::string c = config.string();

  const Cli data = run({"gen-data", "--config", c});
  REQUIRE(data.code == 0);
  const std::string manifest = slurp(dir.path() / "data" / "manifest.json");
  CHECK(manifest.find("t0") != std::string::npos);
  const std::string csv = slurp(dir.path() / "data" / "t0.csv");
  REQUIRE(run({"gen-data", "--config", c}).code == 0);
  CHECK(slurp(dir.path() / "data" / "manifest.json") == manifest);
  CHECK(slurp(dir.path() / "data" / "t0.csv") == csv);

  REQUIRE(run({"gen-workload", "--config", c}).code == 0);
  const std::string workload = slurp(dir.path() / "workload.jsonl");
  REQUIRE(run({"gen-workload", "--config", c}).code == 0);
  CHECK(slurp(dir.path() / "workload.jsonl") == workload);
  std::istringstream lines(workload);
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line); ++n) CHECK(json::parse(line).at("cardinality").get<double>() >= 1);
  CHECK(n > 0);
  CHECK(n <= 180);

  const Cli trained = run({"train", "--config", c});
  REQUIRE_MESSAGE(trained.code == 0, trained.err);
  std::size_t checkpoints = 0, logs = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "checkpoints")) {
    if (e.path().extension() == ".ckpt") ++checkpoints;
    if (e.path().string().ends_with(".log.jsonl")) ++logs;
  }
  CHECK(checkpoints == 3);
  CHECK(logs == 3);
  const fs::path marker = dir.path() / "checkpoints" / "best-erm-mlp.json";
  REQUIRE(fs::exists(marker));
  CHECK(fs::exists(dir.path() / "checkpoints" / json::parse(slurp(marker)).at("checkpoint").get<std::string>()));

  const Cli again = run({"train", "--config", c});
  REQUIRE(again.code == 0);
  CHECK(again.out.find("already trained") != std::string::npos);
  std::size_t skipped = 0;
  for (std::size_t pos = 0; (pos = again.out.find("already trained", pos)) != std::string::npos; ++pos) ++skipped;
  CHECK(skipped == 3);

  SUBCASE("auxiliary losses are logged for algorithms that have one") {
    REQUIRE(run({"train", "--config", c, "--algorithm", "coral"}).code == 0);
    bool found = false;
    for (const auto& e : fs::directory_iterator(dir.path() / "checkpoints")) {
      const std::string name = e.path().filename().string();
      if (name.rfind("coral-mlp-", 0) != 0 || !name.ends_with(".log.jsonl")) continue;
      std::ifstream in(e.path());
      for (std::string line; std::getline(in, line);) {
        const json rec = json::parse(line);
        CHECK(rec.at("aux_loss").is_number());
        for (const char* key : {"epoch", "main_loss", "lr", "wall_time"}) CHECK(rec.contains(key));
        found = true;
      }
    }
    CHECK(found);
    for (const auto& e : fs::directory_iterator(dir.path() / "checkpoints")) {
      const std::string name = e.path().filename().string();
      if (name.rfind("erm-mlp-", 0) == 0 && name.ends_with(".log.jsonl")) {
        std::ifstream in(e.path());
        std::string line;
        std::getline(in, line);
        CHECK(json::parse(line).at("aux_loss").is_null());
      }
    }
  }

  SUBCASE("eval writes identical reports on repeated runs") {
    REQUIRE(run({"train", "--config", c, "--algorithm", "orderemb"}).code == 0);
    const Cli first = run({"eval", "--config", c});
    REQUIRE_MESSAGE(first.code == 0, first.err);
    const fs::path reports = dir.path() / "reports";
    const std::string erm_json = slurp(reports / "erm-mlp.json");
    const std::string cmp = slurp(reports / "comparison-mlp.txt");
    CHECK(fs::exists(reports / "orderemb-mlp.csv"));
    REQUIRE(run({"eval", "--config", c}).code == 0);
    CHECK(slurp(reports / "erm-mlp.json") == erm_json);
    CHECK(slurp(reports / "comparison-mlp.txt") == cmp);
    const QErrorReport r = report_from_json(erm_json);
    CHECK(r.group("overall").present);
    CHECK(r.group("simple").n + r.group("complex").n == r.group("overall").n);
    for (const auto& g : r.groups) {
      if (!g.present) continue;
      for (std::size_t k = 1; k < g.quantiles.size(); ++k) CHECK(g.quantiles[k] >= g.quantiles[k - 1]);
      CHECK(g.quantiles[0] >= 1.0);
    }
    fs::remove(reports / "erm-mlp.txt");
    REQUIRE(run({"report", "--config", c}).code == 0);
    CHECK(fs::exists(reports / "erm-mlp.txt"));
    CHECK(slurp(reports / "comparison-mlp.txt") == cmp);

    const Cli only = run({"eval", "--config", c, "--algorithm", "dann"});
    CHECK(only.code == 2);
  }

  SUBCASE("stub estimators give the derived quantiles on the generated test set") {
    const ExperimentConfig cfg = load_config(config);
    const Database db = load_database(dir.path() / "data" / "manifest.json");
    const Workload test = read_workload(dir.path() / "split" / "test.jsonl", db);
    REQUIRE_FALSE(test.empty());
    std::vector<double> truths, ones(test.size(), 1.0);
    for (const SPJQuery& q : test.queries) truths.push_back(static_cast<double>(*q.cardinality));
    const auto groups = evaluation_groups(test, cfg.split.simple_def);
    const QErrorReport perfect = quantile_report(truths, truths, groups);
    for (const auto& g : perfect.groups) {
      if (g.present) CHECK(g.quantiles == decltype(g.quantiles){1.0, 1.0, 1.0, 1.0});
    }
    // A constant estimate of 1 has q-error equal to the true count.
    const QErrorReport constant = quantile_report(ones, truths, groups);
    CHECK(constant.group("overall").quantile(99) == nearest_rank_quantile(truths, 99));
  }

  SUBCASE("serve answers over TCP") {
    const fs::path ckpt =
        dir.path() / "checkpoints" / json::parse(slurp(marker)).at("checkpoint").get<std::string>();
    const Database db = load_database(dir.path() / "data" / "manifest.json");
    Checkpoint ck = load_checkpoint(ckpt);
    const EstimateService service(std::move(ck.model), db);
    EstimateServer server(service, 0);
    std::thread loop([&] { server.run(); });
    const Workload test = read_workload(dir.path() / "split" / "test.jsonl", db);
    {
      LineClient client(server.port());
      for (std::size_t i = 0; i < 50; ++i) {
        const json resp = json::parse(client.request(query_to_json(test.queries[i % test.size()], db)));
        CHECK(resp.at("cardinality").get<double>() >= 1.0);
        if (i % 10 == 0) {
          const json bad = json::parse(client.request("{\"relations\": [\"nope\"]"));
          CHECK(bad.contains("error"));
        }
      }
    }
    server.stop();
    loop.join();
  }
}

TEST_CASE("command-line errors map to exit codes") {
  TempDir dir("cli-errors");
  json zero = small_config();
  zero["data"]["tables"][0]["rows"] = 0;
  const Cli z = run({"gen-data", "--config", write_config(dir.path(), zero).string()});
  CHECK(z.code == 2);
  CHECK_FALSE(z.err.empty());

  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  json unknown = small_config();
  unknown["extra"] = 1;
  CHECK(run({"gen-data", "--config", write_config(dir.path(), unknown).string()}).code == 1);
  CHECK(run({"gen-data", "--config", (dir.path() / "missing.json").string()}).code == 1);
  CHECK(run({"gen-data", "--config", write_config(dir.path(), small_config()).string(), "--algorithm", "sgd"}).code ==
        1);
  // No database yet.
  CHECK(run({"gen-workload", "--config", write_config(dir.path(), small_config()).string()}).code == 2);
  CHECK(run({"serve", "--config", write_config(dir.path(), small_config()).string(), "--out", "x"}).code == 1);
}

TEST_CASE("flags override config keys") {
  TempDir dir("cli-flags");
  const std::string c = write_config(dir.path(), small_config()).string();
  const fs::path out = dir.path() / "elsewhere";
  REQUIRE(run({"gen-data", "--config", c, "--out", out.string()}).code == 0);
  CHECK(fs::exists(out / "manifest.json"));
  CHECK_FALSE(fs::exists(dir.path() / "data"));

  REQUIRE(run({"gen-data", "--config", c, "--seed", "6"}).code == 0);
  CHECK(slurp(out / "t0.csv") != slurp(dir.path() / "data" / "t0.csv"));

  setenv(kConfigEnv, c.c_str(), 1);
  const Cli from_env = run({"gen-workload"});
  unsetenv(kConfigEnv);
  CHECK(from_env.code == 0);
  CHECK(fs::exists(dir.path() / "workload.jsonl"));
}

TEST_CASE("estimate service handles valid and malformed requests") {
  const Database db = mixed_database(300, 2);
  const QueryEncoder enc(db);
  const EstimateService service(Model<float>(Arch::Mscn, ModelDims::for_encoder(enc), 1), db);
  const SPJQuery q = generate_single_table_query(db.table("t0"), 3, 9);
  const std::string line = query_to_json(q, db);
  const json ok = json::parse(service.handle(line));
  CHECK(ok.at("cardinality").get<double>() >= 1.0);
  CHECK(service.handle(line) == service.handle(line));
  for (const char* bad : {"", "not json", "[]", "{\"relations\": [\"t9\"]}", "{\"relations\": [\"t0\"], \"selections\": 4}"}) {
    CAPTURE(bad);
    CHECK(json::parse(service.handle(bad)).contains("error"));
  }
  ModelDims wrong = ModelDims::for_encoder(enc);
  wrong.selection_width += 1;
  CHECK_THROWS_AS(EstimateService(Model<float>(Arch::Mscn, wrong, 1), db), DataError);
}
