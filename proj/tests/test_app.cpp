#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "emo/app/ablation.hpp"
#include "emo/app/bench.hpp"
#include "emo/app/commands.hpp"
#include "emo/app/verify.hpp"
#include "emo/error.hpp"

using namespace emo;
using namespace emo::app;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

VariantResult fake(const std::string& name, double error) {
  VariantResult v;
  v.variant = find_variant(name);
  v.variant.name = name;
  SeedRun run;
  run.test.joint_error = error;
  v.runs = {run};
  v.mean_error = error;
  return v;
}

}  // namespace

TEST_CASE("content hash matches git object ids") {
  CHECK(content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("reports write json and csv") {
  const auto dir = std::filesystem::temp_directory_path() / "emo_test_report";
  std::filesystem::remove_all(dir);
  Report rep;
  rep.command = "unit";
  rep.doc["value"] = 1.5;
  Table t{{"a", "b"}, {}};
  t.add_row({"1", "x"});
  t.add_row({"2", "y"});
  rep.tables["t"] = t;
  CHECK_THROWS_AS(t.add_row({"only one"}), Error);
  rep.write(dir, "inputs");
  CHECK(slurp(dir / "t.csv") == "a,b\n1,x\n2,y\n");
  const auto j = Json::parse(slurp(dir / "report.json"));
  CHECK(j["command"] == "unit");
  CHECK(j["input_hash"] == content_hash("inputs"));
  CHECK(j["tables"]["t.csv"] == 2);
  CHECK(format_double(0.1) == "0.1");
  std::filesystem::remove_all(dir);
}

TEST_CASE("variants") {
  const auto vs = all_variants();
  CHECK(vs.size() == 10);
  CHECK(find_variant("local_bi").local_mixer == block::MixerKind::kLocalBidirectional);
  CHECK_THROWS_AS(find_variant("G+X"), ConfigError);
  const auto base = train::RunConfig::defaults();
  const auto mlp = variant_config(base, find_variant("mlp"));
  CHECK_FALSE(mlp.decoder.use_global);
  CHECK_FALSE(mlp.decoder.use_cross);
  CHECK_FALSE(mlp.decoder.use_local);
  CHECK(variant_config(base, find_variant("uni")).decoder.local_mixer == block::MixerKind::kUnidirectional);
  CHECK(variant_config(base, find_variant("local_uni")).decoder.local_mixer == block::MixerKind::kLocalUnidirectional);
}

TEST_CASE("ablation ordering claims") {
  AblationResult r;
  for (const char* n : {"G", "L", "G+CA", "G+L", "CA+L"}) r.variants.push_back(fake(n, 0.05));
  r.variants.push_back(fake("G+CA+L", 0.04));
  r.variants.push_back(fake("mlp", 0.1));
  r.variants.push_back(fake("uni", 0.045));
  auto checks = check_ordering(r);
  CHECK(checks.size() == 12);
  for (const auto& c : checks) CHECK_MESSAGE(c.pass, c.detail);

  r.variants[0].mean_error = 0.095;  // G no longer 10% better than mlp
  checks = check_ordering(r);
  std::size_t failed = 0;
  for (const auto& c : checks) failed += !c.pass;
  CHECK(failed == 1);

  r.variants.pop_back();  // uni missing
  checks = check_ordering(r);
  CHECK_FALSE(checks.back().pass);
}

TEST_CASE("a broken discretization fails the golden check") {
  CHECK(check_zoh_golden(ssm::zoh_discretize).pass);
  const auto flipped = [](double a, double delta, double b) { return ssm::zoh_discretize(a, delta, -b); };
  CHECK_FALSE(check_zoh_golden(flipped).pass);
}

TEST_CASE("benchmark FLOP side is deterministic and shaped as expected") {
  auto cfg = train::RunConfig::defaults();
  cfg.bench.m_grid = {64, 128, 256, 512, 1024};
  const auto a = run_bench(cfg, false), b = run_bench(cfg, false);
  REQUIRE(a.points.size() == b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    CHECK(a.points[i].flops == b.points[i].flops);
    CHECK(a.points[i].counted == a.points[i].flops);
  }
  CHECK(a.scan.flops.slope == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.attention.flops_top.slope > 1.7);
  cfg.bench.m_grid = {64, 64};
  CHECK_THROWS_AS(run_bench(cfg, false), ConfigError);
}

TEST_CASE("train outputs reproduce") {
  auto cfg = train::RunConfig::parse("optimizer.steps = 3\ndata.train_size = 4\ndata.test_size = 2\n");
  const auto a = run_train(cfg), b = run_train(cfg);
  CHECK(deterministic_part(a.report) == deterministic_part(b.report));
  const auto dir = std::filesystem::temp_directory_path() / "emo_test_train";
  std::filesystem::remove_all(dir);
  write_train_outputs(dir, cfg, a);
  CHECK(std::filesystem::exists(dir / "checkpoint.bin"));
  CHECK(std::filesystem::exists(dir / "train_curve.csv"));
  std::filesystem::remove_all(dir);
}
