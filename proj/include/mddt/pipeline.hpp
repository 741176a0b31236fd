#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "mddt/grpo.hpp"
#include "mddt/narrative.hpp"
#include "mddt/oracle.hpp"
#include "mddt/policy.hpp"
#include "mddt/reasoner.hpp"

namespace mddt::pipeline {

/// Bad configuration: unknown keys, malformed or out-of-range values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage was asked to run before its inputs exist or they are stale.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OracleSpec {
  std::string base_url;
  std::string model;
  std::string token_env;
};

/// Typed view of a run configuration.
struct Settings {
  std::uint64_t seed = 0;

  std::size_t cohort_n = 2000;
  double prevalence = 0.5;
  double missing_threshold = 0.30;
  bool include_comorbid = false;

  PromptTier tier = PromptTier::ComplexCot;
  reasoner::PipelineConfig reasoner;

  bool mock_oracle = false;
  std::vector<OracleSpec> oracles;  // three; the first also generates and refines
  int oracle_max_retries = 3;
  double oracle_timeout_seconds = 60.0;
  double oracle_rps = 0.0;

  int policy_dim = 16;
  policy::SftConfig sft;
  grpo::GrpoConfig rl;
  int rl_epochs = 10;  // passes over the training queries; sets the update count

  double test_fraction = 0.2;
};

/// Flat key = value configuration with a fixed schema. Values are kept in
/// canonical text form so that equal settings hash equally.
class RunConfig {
 public:
  RunConfig();  // built-in defaults

  /// Sets one key. Throws ConfigError naming the key for unknown keys or
  /// invalid values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Parses a config file body. Errors carry "<origin>:<line>:".
  void merge_file(std::string_view text, std::string_view origin = "config");

  /// Checks cross-field invariants and returns the typed settings.
  Settings settings() const;

  /// "key = value" lines in key order.
  std::string canonical() const;
  std::string hash() const;  // sha256 of canonical()
  nlohmann::json to_json() const;

  /// The keys a stage's outputs depend on: its own and its upstream stages'.
  /// Throws ConfigError for unknown stage names.
  static std::vector<std::string> scope(std::string_view stage);
  std::string canonical(std::string_view stage) const;
  std::string hash(std::string_view stage) const;
  nlohmann::json to_json(std::string_view stage) const;

  static std::vector<std::string> keys();

 private:
  std::map<std::string, std::string> values_;
};

/// Sources of a run config, lowest precedence first: built-in defaults, the
/// config file, --set overrides, then the dedicated --seed / --mock-oracle flags.
struct ConfigLayers {
  std::optional<std::string> file_text;
  std::string file_origin = "config";
  std::vector<std::string> overrides;  // "key=value"
  std::optional<std::uint64_t> seed;
  bool mock_oracle = false;
};

/// Applies the layers and validates the result.
RunConfig resolve_config(const ConfigLayers& layers);

using Logger = std::function<void(const std::string&)>;

struct Context {
  RunConfig config;
  std::filesystem::path out_dir;
  Logger log;
  /// Overrides the transport chosen from the config (tests).
  std::shared_ptr<oracle::Transport> transport;
};

/// Holds <out_dir>/.mddt.lock for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& out_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

void cmd_synth(const Context& ctx);
void cmd_filter(const Context& ctx);
void cmd_reason(const Context& ctx);
void cmd_train_sft(const Context& ctx);
void cmd_train_rl(const Context& ctx);
void cmd_eval(const Context& ctx);
void cmd_report(const Context& ctx);

/// Every stage in order.
void run_all(const Context& ctx);

/// sha256 of the bundle file written by cmd_eval.
std::string bundle_hash(const std::filesystem::path& out_dir);

struct AblationRow {
  std::string variant;
  double accuracy = 0.0;
  std::optional<double> f1;
  std::optional<double> auc;
};

/// Rows of the ablation table stored in a bundle.
std::vector<AblationRow> read_ablation(const nlohmann::json& bundle);

// File names inside the output directory.
namespace files {
inline constexpr const char* kCohort = "cohort.csv";
inline constexpr const char* kCohortSummary = "cohort_summary.json";
inline constexpr const char* kQa = "qa.jsonl";
inline constexpr const char* kFiltered = "filtered.jsonl";
inline constexpr const char* kFilterReport = "filter_report.json";
inline constexpr const char* kSamples = "samples.jsonl";
inline constexpr const char* kSynthesisReport = "synthesis_report.json";
inline constexpr const char* kBase = "base.ckpt";
inline constexpr const char* kSft = "sft.ckpt";
inline constexpr const char* kSftCurve = "sft_loss.csv";
inline constexpr const char* kRl = "rl.ckpt";
inline constexpr const char* kSftRl = "sft_rl.ckpt";
inline constexpr const char* kRlStats = "rl_stats.csv";
inline constexpr const char* kSftRlStats = "sft_rl_stats.csv";
inline constexpr const char* kEvalReport = "eval_report.json";
inline constexpr const char* kRoc = "roc.csv";
inline constexpr const char* kBundle = "report_bundle.json";
inline constexpr const char* kReport = "report.md";
}  // namespace files

}  // namespace mddt::pipeline
