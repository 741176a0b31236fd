#include <fmt/format.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mddt/pipeline.hpp"

namespace {

namespace pl = mddt::pipeline;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "mddt_out";
  bool mock = false;
  bool quiet = false;
  std::vector<std::string> overrides;
};

pl::RunConfig build_config(const Options& o) {
  pl::ConfigLayers layers;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw pl::ConfigError(fmt::format("cannot open config file {}", o.config_path));
    std::ostringstream body;
    body << in.rdbuf();
    layers.file_text = body.str();
    layers.file_origin = o.config_path;
  }
  layers.overrides = o.overrides;
  layers.seed = o.seed;
  layers.mock_oracle = o.mock;
  return pl::resolve_config(layers);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-cohort diagnosis pipeline: data synthesis, toy SFT/GRPO training, evaluation"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "key = value run-config file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "root seed (overrides the config)");
  app.add_option("--out-dir", o.out_dir, "artifact directory")->capture_default_str();
  app.add_flag("--mock-oracle", o.mock, "use the in-process rule oracle instead of HTTP endpoints");
  app.add_option("--set", o.overrides, "override one config key (repeatable), e.g. --set rl.beta=0.1");
  app.add_flag("-q,--quiet", o.quiet, "no progress messages");

  using Command = void (*)(const pl::Context&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"synth", "generate the cohort and question/answer pairs", pl::cmd_synth},
      {"filter", "three-oracle consensus filter", pl::cmd_filter},
      {"reason", "build reasoning paths", pl::cmd_reason},
      {"train-sft", "base policy and supervised fine-tuning", pl::cmd_train_sft},
      {"train-rl", "GRPO from the base and the SFT checkpoints", pl::cmd_train_rl},
      {"eval", "evaluate checkpoints and write the report bundle", pl::cmd_eval},
      {"report", "render report.md from the bundle", pl::cmd_report},
      {"all", "every stage in order", pl::run_all},
      {"config", "print the effective configuration", nullptr},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  pl::Context ctx;
  try {
    ctx.config = build_config(o);
  } catch (const pl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  }
  ctx.out_dir = o.out_dir;
  if (!o.quiet) ctx.log = [](const std::string& line) { std::cerr << line << "\n"; };

  const auto* sub = app.get_subcommands().front();
  if (sub->get_name() == "config") {
    std::cout << ctx.config.canonical() << "# hash " << ctx.config.hash() << "\n";
    return kOk;
  }
  for (const auto& [name, help, fn] : commands) {
    if (name != sub->get_name()) continue;
    try {
      pl::RunLock lock(ctx.out_dir);
      fn(ctx);
      return kOk;
    } catch (const pl::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kUsage;
    } catch (const pl::DependencyError& e) {
      std::cerr << "dependency error: " << e.what() << "\n";
      return kRuntime;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kRuntime;
    }
  }
  return kUsage;
}
