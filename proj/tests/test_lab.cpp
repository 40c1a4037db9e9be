#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "longtail/error.hpp"
#include "longtail/lab.hpp"
#include "support.hpp"

using namespace longtail;
namespace fs = std::filesystem;

namespace {

RunConfig small_run() {
  RunConfig c;
  c.synth = testing::small_config();
  c.train.epochs = 2;
  c.train.batch_size = 64;
  c.train.lr = 0.05;
  c.train.warmup_steps = 10;
  c.train.seed = 2;
  return c;
}

fs::path write_config(const fs::path& dir, const RunConfig& c) {
  const auto p = dir / "run.json";
  std::ofstream(p) << nlohmann::json(c).dump(2);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LONGTAIL_LAB_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("run config json") {
  RunConfig c = small_run();
  c.boundaries = decade_boundaries(2);
  c.tau = 0.5;
  nlohmann::json j = c;
  CHECK(j.get<RunConfig>() == c);
  CHECK(j["boundaries"].back()[1].is_null());

  const auto g = nlohmann::json{{"groups", 8}}.get<RunConfig>();
  CHECK(g.boundaries == decade_boundaries(8));
  CHECK(g.train == TrainConfig{});
  CHECK_THROWS_AS(nlohmann::json({{"boundaries", {{0, 10}, {20, nullptr}}}}).get<RunConfig>(),
                  ConfigError);

  const auto dir = testing::scratch_dir("lab_cfg");
  std::ofstream(dir / "bad.json") << "{";
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("variant names") {
  for (auto name : {"full", "others_only", "groups_only", "background_only"}) {
    CHECK(to_string(variant_from_string(name)) == name);
  }
  CHECK_THROWS_AS(variant_from_string("none"), ConfigError);
}

TEST_CASE("every recipe runs on a small dataset") {
  const Dataset ds = generate(testing::small_config());
  Lab lab(ds, small_run());
  for (const auto& name : recipe_names()) {
    CAPTURE(name);
    const auto r = lab.run(name);
    CHECK(r.method == name);
    CHECK((r.overall_acc >= 0.0 && r.overall_acc <= 1.0));
    CHECK(r.acc_bg.has_value());
    CHECK(r.config.at("train").at("seed") == 2);
  }
  CHECK_THROWS_WITH_AS(lab.run("mystery"), doctest::Contains("tau_norm_select"), ConfigError);
}

TEST_CASE("gen, train and eval commands") {
  const auto dir = testing::scratch_dir("lab_cmds");
  const RunConfig c = small_run();
  std::ostringstream log;
  const auto ds = cmd_gen(c, dir / "data", false, log);
  CHECK(log.str().find("bin 1") != std::string::npos);
  CHECK(fs::exists(dir / "data" / "manifest.json"));
  CHECK(fs::exists(dir / "data" / "config.json"));
  CHECK_THROWS_AS(cmd_gen(c, dir / "data", false, log), ConfigError);
  CHECK_NOTHROW(cmd_gen(c, dir / "data", true, log));

  const auto soft = cmd_train(dir / "data", c, dir / "soft", std::nullopt, log);
  for (auto f : {"checkpoint.bin", "history.json", "config.json"}) CHECK(fs::exists(dir / "soft" / f));
  CHECK(soft.params.logit_dim() == static_cast<std::size_t>(ds.catalog.num_foreground() + 1));

  const auto report = cmd_eval(dir / "soft" / "checkpoint.bin", dir / "data", {}, dir / "ev");
  CHECK(report.pearson_norm_logcount.has_value());
  const auto j = nlohmann::json::parse(slurp(dir / "ev" / "report.json"));
  CHECK(j.at("pearson_norm_logcount").is_number());
  CHECK(j.at("config").at("run").at("train").at("seed") == 2);
  CHECK(read_norms_csv(dir / "ev" / "norms.csv").size() ==
        static_cast<std::size_t>(ds.catalog.num_foreground()));

  SUBCASE("tau predictor is tau-norm-select") {
    const auto tau = cmd_eval(dir / "soft" / "checkpoint.bin", dir / "data", {"tau", 1.0}, dir / "tau");
    const HeadParams tp = tau_normalize(soft.params, 1.0);
    const auto direct = evaluate(
        [&](std::span<const float> f) { return tau_select_predict(soft.params, tp, f); }, ds.eval,
        ds.catalog);
    CHECK(tau.overall_acc == direct.overall_acc);
    CHECK(tau.acc_per_bin == direct.acc_per_bin);
  }
  SUBCASE("bags checkpoint") {
    RunConfig b = c;
    b.train.method = Method::Bags;
    const auto bags = cmd_train(dir / "data", b, dir / "bags", std::nullopt, log);
    const auto part = GroupPartition::assign(ds.catalog, b.boundaries);
    CHECK(bags.params.layout == HeadLayout::Grouped);
    CHECK(bags.params.logit_dim() == static_cast<std::size_t>(part.logit_dim()));
    const auto r = cmd_eval(dir / "bags" / "checkpoint.bin", dir / "data", {}, dir / "bev");
    CHECK(r.config.at("eval").at("predictor") == "bags");
    CHECK_THROWS_AS(cmd_eval(dir / "bags" / "checkpoint.bin", dir / "data", {"softmax", {}}, dir / "x"),
                    ConfigError);
  }
  SUBCASE("tail_finetune needs a starting checkpoint") {
    RunConfig t = c;
    t.train.method = Method::TailFinetune;
    CHECK_THROWS_AS(cmd_train(dir / "data", t, dir / "tail", std::nullopt, log), ConfigError);
    CHECK_NOTHROW(cmd_train(dir / "data", t, dir / "tail", dir / "soft" / "checkpoint.bin", log));
  }
  SUBCASE("missing inputs") {
    CHECK_THROWS_AS(cmd_eval(dir / "nope.bin", dir / "data", {}, dir / "x"), DataError);
    CHECK_THROWS_AS(cmd_train(dir / "nodata", c, dir / "x", std::nullopt, log), DataError);
    CHECK_THROWS_AS(cmd_eval(dir / "soft" / "checkpoint.bin", dir / "data", {"magic", {}}, dir / "x"),
                    ConfigError);
  }
}

TEST_CASE("sweep and compare") {
  const auto dir = testing::scratch_dir("lab_sweep");
  const RunConfig c = small_run();
  std::ostringstream log;
  cmd_gen(c, dir / "data", false, log);

  const std::vector<double> betas{0, 1, 2, 4, 8, 16};
  const auto rows = cmd_sweep(dir / "data", c, "beta", betas, dir / "sweep", 1);
  REQUIRE(rows.size() == 6);
  const auto csv = slurp(dir / "sweep" / "sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(csv.rfind("beta,overall_acc,", 0) == 0);

  SUBCASE("threads do not change results") {
    const auto par = cmd_sweep(dir / "data", c, "beta", betas, dir / "sweep2", 3);
    CHECK(slurp(dir / "sweep2" / "sweep.csv") == csv);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(par[i].report == rows[i].report);
  }
  SUBCASE("single-value sweep equals train + eval") {
    RunConfig b = c;
    b.train.method = Method::Bags;
    b.train.beta = 4;
    cmd_train(dir / "data", b, dir / "b4", std::nullopt, log);
    const auto r = cmd_eval(dir / "b4" / "checkpoint.bin", dir / "data", {}, dir / "b4ev");
    const auto one = cmd_sweep(dir / "data", c, "beta", {4}, dir / "one", 1);
    CHECK(one[0].report.overall_acc == r.overall_acc);
    CHECK(one[0].report.acc_per_bin == r.acc_per_bin);
    CHECK(one[0].report.weight_norms == r.weight_norms);
  }
  SUBCASE("groups axis") {
    const auto g = cmd_sweep(dir / "data", c, "groups", {2, 4, 8}, dir / "groups", 1);
    CHECK(g.size() == 3);
    CHECK(g[2].report.config.at("boundaries").size() == 8);
  }
  SUBCASE("bad sweeps") {
    CHECK_THROWS_AS(cmd_sweep(dir / "data", c, "beta", {}, dir / "x", 1), ConfigError);
    CHECK_THROWS_AS(cmd_sweep(dir / "data", c, "lr", {1}, dir / "x", 1), ConfigError);
    CHECK_THROWS_AS(cmd_sweep(dir / "data", c, "groups", {1.5}, dir / "x", 1), ConfigError);
  }
  SUBCASE("compare") {
    const auto text = cmd_compare(dir / "data", c, {"softmax", "bags"}, dir / "cmp");
    const auto table = slurp(dir / "cmp" / "compare.csv");
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
    CHECK(table.find("acc_bg") != std::string::npos);
    CHECK(text.find("bags") != std::string::npos);
    CHECK(fs::exists(dir / "cmp" / "compare.txt"));
    CHECK_THROWS_WITH_AS(cmd_compare(dir / "data", c, {"softmax", "nope"}, dir / "x"),
                         doctest::Contains("softmax, rfs"), ConfigError);
  }
}

TEST_CASE("cli exit codes and determinism") {
  const auto dir = testing::scratch_dir("lab_cli");
  const auto cfg = write_config(dir, small_run());
  const std::string c = " --config " + cfg.string();
  const std::string data = (dir / "data").string();

  CHECK(run_cli("gen" + c + " --out " + data) == 0);
  CHECK(run_cli("gen" + c + " --out " + data) == 1);
  const auto first = testing::read_bytes(dir / "data" / "features.bin");
  CHECK(run_cli("gen" + c + " --out " + data + " --force") == 0);
  CHECK(testing::read_bytes(dir / "data" / "features.bin") == first);
  CHECK(run_cli("gen" + c + " --seed 99 --out " + (dir / "data99").string()) == 0);
  CHECK(testing::read_bytes(dir / "data99" / "features.bin") != first);

  const std::string d = " --data " + data;
  CHECK(run_cli("train" + c + d + " --method bags --beta 8 --out " + (dir / "bags").string()) == 0);
  CHECK(load_checkpoint(dir / "bags" / "checkpoint.bin").layout == HeadLayout::Grouped);
  CHECK(run_cli("train" + c + d + " --method softmax --beta 8 --out " + (dir / "soft").string()) == 0);
  CHECK(load_checkpoint(dir / "soft" / "checkpoint.bin").layout == HeadLayout::Plain);

  CHECK(run_cli("train" + c + d + " --method sgd --out " + (dir / "x").string()) == 1);
  CHECK(run_cli("train" + c + d + " --method tail_finetune --out " + (dir / "x").string()) == 1);
  CHECK(run_cli("train" + c + d + " --sampler zigzag --out " + (dir / "x").string()) == 1);
  CHECK(run_cli("train" + c + " --data " + (dir / "none").string() + " --out " + (dir / "x").string()) == 2);
  CHECK(run_cli("eval" + d + " --checkpoint " + (dir / "none.bin").string() + " --out " + (dir / "x").string()) == 2);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("") == 1);

  RunConfig hot = small_run();
  hot.train.lr = 1e300;
  hot.train.warmup_steps = 0;
  const auto hot_dir = dir / "hot";
  fs::create_directories(hot_dir);
  const auto hot_cfg = write_config(hot_dir, hot);
  CHECK(run_cli("train --config " + hot_cfg.string() + d + " --out " + (dir / "y").string()) == 3);

  CHECK(run_cli("eval" + d + " --checkpoint " + (dir / "soft" / "checkpoint.bin").string() +
                " --predictor tau --tau 1.0 --out " + (dir / "ev").string()) == 0);
  CHECK(run_cli("sweep" + c + d + " --axis beta --values 0,2 --out " + (dir / "sw").string()) == 0);
  CHECK(run_cli("compare" + c + d + " --methods softmax,bags --out " + (dir / "cmp").string()) == 0);
  CHECK(run_cli("compare" + c + d + " --methods softmax,magic --out " + (dir / "cmp2").string()) == 1);
}
