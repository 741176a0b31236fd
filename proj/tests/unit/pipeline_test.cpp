#include "mddt/pipeline.hpp"

#include <fmt/format.h>
#include <gtest/gtest.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

#include "mddt/common.hpp"

namespace fs = std::filesystem;
using namespace mddt::pipeline;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// Fresh directory per test, removed afterwards.
class Workdir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / fmt::format("mddt_pipeline_{}_{}", info->name(), ::getpid());
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Context small(std::vector<std::string> extra = {}) const {
    ConfigLayers layers;
    layers.overrides = {"cohort.n=300", "rl.epochs=1", "rl.queries_per_update=32", "sft.epochs=1"};
    layers.overrides.insert(layers.overrides.end(), extra.begin(), extra.end());
    layers.seed = 3;
    layers.mock_oracle = true;
    Context ctx;
    ctx.config = resolve_config(layers);
    ctx.out_dir = dir_;
    return ctx;
  }

  fs::path dir_;
};

}  // namespace

// ---- config -----------------------------------------------------------------

TEST(RunConfig, DefaultsAreValidAndCanonical) {
  RunConfig c;
  const auto s = c.settings();
  EXPECT_EQ(s.rl.G, 8);
  EXPECT_EQ(s.sft.epochs, 3);
  EXPECT_EQ(s.sft.batch_size, 256);
  EXPECT_EQ(s.reasoner.T, 4);
  EXPECT_EQ(s.oracles.size(), 3u);
  EXPECT_EQ(c.values().size(), RunConfig::keys().size());
  EXPECT_EQ(c.hash(), RunConfig().hash());
  const auto keys = RunConfig::keys();
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
}

TEST(RunConfig, EquivalentSpellingsHashEqually) {
  RunConfig a;
  RunConfig b;
  a.set("rl.beta", "0.5");
  b.set("rl.beta", "5e-1");
  a.set("cohort.include_comorbid", "yes");
  b.set("cohort.include_comorbid", "true");
  EXPECT_EQ(a.canonical(), b.canonical());
  EXPECT_EQ(a.hash(), b.hash());
}

TEST(RunConfig, UnknownKeyRejected) {
  RunConfig c;
  try {
    c.set("rl.betta", "0.1");
    FAIL() << "accepted an unknown key";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("rl.betta"), std::string::npos);
  }
}

TEST(RunConfig, OutOfRangePrevalenceNamesTheField) {
  RunConfig c;
  try {
    c.set("cohort.prevalence", "1.5");
    FAIL() << "accepted prevalence 1.5";
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("cohort.prevalence"), std::string::npos) << what;
    EXPECT_NE(what.find("1.5"), std::string::npos) << what;
  }
}

TEST(RunConfig, MalformedValuesRejected) {
  RunConfig c;
  EXPECT_THROW(c.set("rl.G", "eight"), ConfigError);
  EXPECT_THROW(c.set("rl.G", "8.5"), ConfigError);
  EXPECT_THROW(c.set("rl.G", "1"), ConfigError);
  EXPECT_THROW(c.set("rl.epsilon", "nan"), ConfigError);
  EXPECT_THROW(c.set("rl.optimizer", "rmsprop"), ConfigError);
  EXPECT_THROW(c.set("narrative.tier", "verbose"), ConfigError);
  EXPECT_THROW(c.set("oracle.mock", "maybe"), ConfigError);
  EXPECT_THROW(c.set("seed", "-1"), ConfigError);
  EXPECT_EQ(c.hash(), RunConfig().hash());  // failed sets change nothing
}

TEST(RunConfig, FileErrorsCarryLineNumbers) {
  RunConfig c;
  const std::string body =
      "# comment\n"
      "\n"
      "rl.beta = 0.1  # trailing comment\n"
      "cohort.prevalence = 1.5\n";
  try {
    c.merge_file(body, "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    EXPECT_EQ(what.rfind("run.cfg:4:", 0), 0u) << what;
    EXPECT_NE(what.find("cohort.prevalence"), std::string::npos) << what;
  }
  try {
    RunConfig().merge_file("seed = 1\nnot a pair\n", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("x.cfg:2:", 0), 0u) << e.what();
  }
  try {
    RunConfig().merge_file("seed = 1\nbogus.key = 2\n", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("x.cfg:2:", 0), 0u) << e.what();
  }
}

TEST(RunConfig, CommentsAndWhitespaceIgnored) {
  RunConfig c;
  c.merge_file("  rl.beta=0.25   \n\n# rl.beta = 9\n\trl.G =  16 # groups\n");
  EXPECT_EQ(c.get("rl.beta"), "0.25");
  EXPECT_EQ(c.get("rl.G"), "16");
}

TEST(RunConfig, CrossFieldChecks) {
  ConfigLayers l;
  l.overrides = {"rl.mu=0", "rl.nu=0"};
  EXPECT_THROW(resolve_config(l), ConfigError);
}

TEST(RunConfig, PrecedencePerField) {
  // every key: default, then file, then override; each layer wins over the one below
  const RunConfig defaults;
  for (const auto& key : RunConfig::keys()) {
    if (key == "oracle.mock") continue;  // flag-only layer checked below
    RunConfig probe;
    std::string file_value;
    std::string flag_value;
    // file value differs from the default, flag value from the file value
    const std::vector<std::string> candidates = {"1", "2", "12", "13", "0.25", "0.5", "true", "false", "sgd",
                                                 "adam", "direct", "simple_cot", "x-one", "x-two"};
    std::vector<std::string> valid;
    for (const auto& v : candidates) {
      try {
        probe.set(key, v);
        valid.push_back(probe.get(key));
      } catch (const ConfigError&) {
      }
    }
    for (const auto& v : valid) {
      if (file_value.empty() && v != defaults.get(key)) file_value = v;
    }
    for (const auto& v : valid) {
      if (flag_value.empty() && v != file_value) flag_value = v;
    }
    ASSERT_FALSE(flag_value.empty()) << key;

    ConfigLayers l;
    EXPECT_EQ(resolve_config(l).get(key), defaults.get(key)) << key;
    l.file_text = fmt::format("{} = {}\n", key, file_value);
    EXPECT_EQ(resolve_config(l).get(key), file_value) << key;
    l.overrides = {fmt::format("{}={}", key, flag_value)};
    EXPECT_EQ(resolve_config(l).get(key), flag_value) << key;
  }

  ConfigLayers l;
  l.file_text = "seed = 5\noracle.mock = false\n";
  l.overrides = {"seed=6"};
  EXPECT_EQ(resolve_config(l).get("seed"), "6");
  l.seed = 7;
  l.mock_oracle = true;
  EXPECT_EQ(resolve_config(l).get("seed"), "7");
  EXPECT_EQ(resolve_config(l).get("oracle.mock"), "true");
}

TEST(RunConfig, StageScopes) {
  RunConfig a;
  RunConfig b;
  b.set("rl.beta", "0.3");
  EXPECT_EQ(a.hash("synth"), b.hash("synth"));
  EXPECT_EQ(a.hash("train-sft"), b.hash("train-sft"));
  EXPECT_NE(a.hash("train-rl"), b.hash("train-rl"));
  EXPECT_NE(a.hash("eval"), b.hash("eval"));
  b = RunConfig();
  b.set("seed", "11");
  for (const auto* stage : {"synth", "filter", "reason", "train-sft", "train-rl", "eval", "report"}) {
    EXPECT_NE(a.hash(stage), b.hash(stage)) << stage;
  }
  EXPECT_EQ(RunConfig::scope("eval").size(), RunConfig::keys().size());
  EXPECT_LT(RunConfig::scope("synth").size(), RunConfig::scope("filter").size());
  EXPECT_THROW(RunConfig::scope("deploy"), ConfigError);
}

// ---- stages -----------------------------------------------------------------

TEST_F(Workdir, SynthIsDeterministic) {
  const auto ctx = small();
  cmd_synth(ctx);
  const auto first = slurp(dir_ / files::kCohort) + slurp(dir_ / files::kQa) + slurp(dir_ / files::kCohortSummary);
  cmd_synth(ctx);
  const auto second = slurp(dir_ / files::kCohort) + slurp(dir_ / files::kQa) + slurp(dir_ / files::kCohortSummary);
  EXPECT_EQ(first, second);
  EXPECT_FALSE(slurp(dir_ / files::kQa).empty());
}

TEST_F(Workdir, MissingUpstreamIsADependencyError) {
  const auto ctx = small();
  try {
    cmd_eval(ctx);
    FAIL();
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("mddt"), std::string::npos) << e.what();
  }
  EXPECT_THROW(cmd_filter(ctx), DependencyError);
  EXPECT_THROW(cmd_report(ctx), DependencyError);
}

TEST_F(Workdir, EvalWithoutCheckpointIsADependencyError) {
  const auto ctx = small();
  cmd_synth(ctx);
  cmd_filter(ctx);
  cmd_reason(ctx);
  try {
    cmd_eval(ctx);
    FAIL();
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("train-sft"), std::string::npos) << e.what();
  }
}

TEST_F(Workdir, StaleOrEditedInputsRejected) {
  const auto ctx = small();
  cmd_synth(ctx);
  auto other = small({"cohort.n=301"});
  EXPECT_THROW(cmd_filter(other), DependencyError);
  // settings outside the producer's scope do not make it stale
  auto unrelated = small({"rl.beta=2"});
  EXPECT_NO_THROW(cmd_filter(unrelated));
  spit(dir_ / files::kQa, slurp(dir_ / files::kQa) + "\n");
  EXPECT_THROW(cmd_filter(ctx), DependencyError);
}

TEST_F(Workdir, OverridesReflectedInStamp) {
  const auto ctx = small();
  cmd_synth(ctx);
  cmd_filter(ctx);
  cmd_reason(ctx);
  cmd_train_sft(ctx);
  const auto tuned = small({"rl.beta=0.37", "rl.epsilon=0.15"});
  cmd_train_rl(tuned);
  const auto stamp = nlohmann::json::parse(slurp(dir_ / "stamps" / "train-rl.json"));
  EXPECT_EQ(stamp.at("config").at("rl.beta"), "0.37");
  EXPECT_EQ(stamp.at("config").at("rl.epsilon"), "0.15");
  EXPECT_EQ(stamp.at("config_hash"), tuned.config.hash("train-rl"));
  EXPECT_NE(stamp.at("config_hash"), ctx.config.hash("train-rl"));
  cmd_eval(tuned);
  EXPECT_EQ(read_ablation(nlohmann::json::parse(slurp(dir_ / files::kBundle))).size(), 4u);
  // under the old settings the RL checkpoints are stale and left out
  cmd_eval(ctx);
  const auto bundle = nlohmann::json::parse(slurp(dir_ / files::kBundle));
  EXPECT_EQ(read_ablation(bundle).size(), 2u);
  EXPECT_FALSE(bundle.at("ablation_complete").get<bool>());
  EXPECT_FALSE(bundle.at("artifacts").contains(files::kRl));
}

TEST_F(Workdir, FullRunBundle) {
  const auto ctx = small();
  run_all(ctx);
  const auto bundle = nlohmann::json::parse(slurp(dir_ / files::kBundle));
  EXPECT_EQ(bundle.at("config_hash"), ctx.config.hash("eval"));
  EXPECT_TRUE(bundle.at("ablation_complete").get<bool>());
  const auto rows = read_ablation(bundle);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].variant, "base");
  EXPECT_EQ(rows[3].variant, "sft_rl");
  for (const auto& r : rows) {
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
  }
  for (const auto& [file, info] : bundle.at("artifacts").items()) {
    ASSERT_TRUE(fs::exists(dir_ / file)) << file;
    EXPECT_EQ(info.at("sha256"), mddt::sha256_hex(slurp(dir_ / file))) << file;
    EXPECT_EQ(info.at("config_hash"), ctx.config.hash(info.at("stage").get<std::string>())) << file;
  }
  EXPECT_TRUE(bundle.at("eval").at("delong").contains("p_value"));
  EXPECT_EQ(bundle.at("eval").at("tiers").size(), 3u);
  EXPECT_TRUE(fs::exists(dir_ / files::kReport));
  EXPECT_FALSE(fs::exists(dir_ / ".mddt.lock"));
}

TEST_F(Workdir, DeletingDownstreamLeavesUpstreamIntact) {
  const auto ctx = small();
  run_all(ctx);
  const auto upstream = slurp(dir_ / files::kSft) + slurp(dir_ / files::kSamples);
  const auto before = bundle_hash(dir_);
  fs::remove(dir_ / files::kRl);
  cmd_eval(ctx);
  EXPECT_EQ(read_ablation(nlohmann::json::parse(slurp(dir_ / files::kBundle))).size(), 3u);
  EXPECT_EQ(slurp(dir_ / files::kSft) + slurp(dir_ / files::kSamples), upstream);
  cmd_train_rl(ctx);
  cmd_eval(ctx);
  EXPECT_EQ(bundle_hash(dir_), before);
}

TEST_F(Workdir, LockExcludesConcurrentRuns) {
  {
    RunLock lock(dir_);
    EXPECT_TRUE(fs::exists(dir_ / ".mddt.lock"));
    EXPECT_THROW(RunLock{dir_}, std::runtime_error);
  }
  EXPECT_FALSE(fs::exists(dir_ / ".mddt.lock"));
  EXPECT_NO_THROW(RunLock{dir_});
}
