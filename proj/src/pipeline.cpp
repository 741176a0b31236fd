#include "mddt/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "mddt/cohort.hpp"
#include "mddt/common.hpp"
#include "mddt/metrics.hpp"
#include "mddt/toy.hpp"

namespace mddt::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- schema -----------------------------------------------------------------

namespace {

// Canonicalizes a value or throws std::string with the reason.
using Canon = std::function<std::string(std::string_view)>;

struct KeySpec {
  std::string key;
  std::string fallback;
  Canon canon;
  std::string help;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

Canon integer(long long lo, long long hi) {
  return [lo, hi](std::string_view v) {
    long long x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw fmt::format("expected an integer, got '{}'", v);
    }
    if (x < lo || x > hi) throw fmt::format("must be in [{}, {}], got {}", lo, hi, x);
    return std::to_string(x);
  };
}

Canon unsigned_integer() {
  return [](std::string_view v) {
    std::uint64_t x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw fmt::format("expected a non-negative integer, got '{}'", v);
    }
    return std::to_string(x);
  };
}

enum class Bound { Open, Closed };

Canon real(double lo, Bound lb, double hi, Bound hb) {
  return [=](std::string_view v) {
    std::string s(v);
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(s, &used);
    } catch (const std::exception&) {
      throw fmt::format("expected a number, got '{}'", v);
    }
    if (used != s.size() || !std::isfinite(x)) throw fmt::format("expected a number, got '{}'", v);
    const bool ok_lo = lb == Bound::Open ? x > lo : x >= lo;
    const bool ok_hi = hb == Bound::Open ? x < hi : x <= hi;
    if (!ok_lo || !ok_hi) {
      throw fmt::format("must be in {}{}, {}{}, got {}", lb == Bound::Open ? '(' : '[', lo, hi,
                        hb == Bound::Open ? ')' : ']', x);
    }
    return fmt::format("{}", x);
  };
}

Canon boolean() {
  return [](std::string_view v) -> std::string {
    if (v == "true" || v == "1" || v == "yes") return "true";
    if (v == "false" || v == "0" || v == "no") return "false";
    throw fmt::format("expected true or false, got '{}'", v);
  };
}

Canon one_of(std::vector<std::string> options) {
  return [options](std::string_view v) {
    if (std::find(options.begin(), options.end(), v) == options.end()) {
      std::string list;
      for (const auto& o : options) list += (list.empty() ? "" : "|") + o;
      throw fmt::format("expected one of {}, got '{}'", list, v);
    }
    return std::string(v);
  };
}

Canon text(bool allow_empty = false) {
  return [allow_empty](std::string_view v) {
    if (v.empty() && !allow_empty) throw std::string("must not be empty");
    return std::string(v);
  };
}

constexpr double kInf = std::numeric_limits<double>::infinity();

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = [] {
    std::vector<KeySpec> k = {
        {"seed", "0", unsigned_integer(), "root seed; every stage derives its own"},
        {"cohort.n", "2000", integer(10, 10'000'000), "participants generated"},
        {"cohort.prevalence", "0.5", real(0, Bound::Open, 1, Bound::Open), "expected MDD share"},
        {"cohort.missing_threshold", "0.3", real(0, Bound::Closed, 1, Bound::Closed),
         "exclude when the missing share exceeds this"},
        {"cohort.include_comorbid", "false", boolean(), "generate comorbid cases to be excluded"},
        {"narrative.tier", "complex_cot", one_of({"direct", "simple_cot", "complex_cot"}),
         "prompt tier for synthesis"},
        {"reasoner.T", "4", integer(1, 100), "generation attempts"},
        {"reasoner.N", "3", integer(0, 100), "regeneration attempts under the refined prompt"},
        {"reasoner.generation_temperature", "0.7", real(0, Bound::Closed, 2, Bound::Closed), ""},
        {"reasoner.refine_temperature", "0", real(0, Bound::Closed, 2, Bound::Closed), ""},
        {"reasoner.max_tokens", "1024", integer(1, 1'000'000), ""},
        {"reasoner.workers", "4", integer(1, 256), "concurrent oracle requests"},
        {"oracle.mock", "false", boolean(), "answer every request with the in-process rule oracle"},
        {"oracle.max_retries", "3", integer(0, 20), ""},
        {"oracle.timeout_seconds", "60", real(0, Bound::Open, 3600, Bound::Closed), ""},
        {"oracle.requests_per_second", "0", real(0, Bound::Closed, kInf, Bound::Open),
         "0 disables rate limiting"},
        {"policy.dim", "16", integer(1, 1024), "toy policy embedding width"},
        {"sft.epochs", "3", integer(0, 100000), ""},
        {"sft.lr", "0.02", real(0, Bound::Closed, kInf, Bound::Open), ""},
        {"sft.batch_size", "256", integer(1, 1'000'000), "clamped to the corpus size"},
        {"sft.optimizer", "adam", one_of({"sgd", "adam"}), ""},
        {"rl.G", "8", integer(2, 1024), "outputs per query"},
        {"rl.epsilon", "0.2", real(0, Bound::Open, 1, Bound::Open), "clip width"},
        {"rl.beta", "0.01", real(0, Bound::Closed, kInf, Bound::Open), "KL coefficient"},
        {"rl.mu", "0.9", real(0, Bound::Closed, kInf, Bound::Open), "accuracy reward weight"},
        {"rl.nu", "0.1", real(0, Bound::Closed, kInf, Bound::Open), "format reward weight"},
        {"rl.lr", "0.01", real(0, Bound::Closed, kInf, Bound::Open), ""},
        {"rl.optimizer", "adam", one_of({"sgd", "adam"}), ""},
        {"rl.epochs", "10", integer(1, 100000), "passes over the training queries"},
        {"rl.queries_per_update", "64", integer(1, 100000), ""},
        {"rl.sync_every", "1", integer(1, 100000), "updates between old-policy syncs"},
        {"rl.std_normalize", "true", boolean(), "divide advantages by the group std"},
        {"rl.temperature", "1", real(0, Bound::Open, 10, Bound::Closed), "rollout temperature"},
        {"eval.test_fraction", "0.2", real(0, Bound::Open, 1, Bound::Open), "held-out share"},
    };
    const std::vector<std::array<std::string, 3>> oracles = {
        {"https://api.openai.com/v1", "gpt-4o", "MDDT_ORACLE_TOKEN_1"},
        {"https://generativelanguage.googleapis.com/v1beta/openai", "gemini-1.5-pro",
         "MDDT_ORACLE_TOKEN_2"},
        {"https://api.deepseek.com/v1", "deepseek-chat", "MDDT_ORACLE_TOKEN_3"},
    };
    for (std::size_t i = 0; i < oracles.size(); ++i) {
      const auto p = fmt::format("oracle.{}.", i + 1);
      k.push_back({p + "base_url", oracles[i][0], text(), ""});
      k.push_back({p + "model", oracles[i][1], text(), ""});
      k.push_back({p + "token_env", oracles[i][2], text(true), "environment variable with the bearer token"});
    }
    std::sort(k.begin(), k.end(), [](const KeySpec& a, const KeySpec& b) { return a.key < b.key; });
    return k;
  }();
  return keys;
}

const KeySpec* find_key(std::string_view key) {
  for (const auto& k : schema()) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : schema()) values_[k.key] = k.canon(k.fallback);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : schema()) out.push_back(k.key);
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto* spec = find_key(key);
  if (!spec) throw ConfigError(fmt::format("unknown key '{}'", key));
  try {
    values_[spec->key] = spec->canon(trim(value));
  } catch (const std::string& why) {
    throw ConfigError(fmt::format("{}: {}", key, why));
  }
}

std::string RunConfig::get(std::string_view key) const {
  const auto it = values_.find(std::string(key));
  if (it == values_.end()) throw ConfigError(fmt::format("unknown key '{}'", key));
  return it->second;
}

void RunConfig::merge_file(std::string_view body, std::string_view origin) {
  std::istringstream in{std::string(body)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const auto content = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, number));
    }
    try {
      set(trim(content.substr(0, eq)), trim(content.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", origin, number, e.what()));
    }
  }
}

Settings RunConfig::settings() const {
  Settings s;
  const auto num = [&](const char* k) { return std::stod(get(k)); };
  const auto whole = [&](const char* k) { return std::stoi(get(k)); };
  const auto flag = [&](const char* k) { return get(k) == "true"; };
  s.seed = std::stoull(get("seed"));
  s.cohort_n = std::stoull(get("cohort.n"));
  s.prevalence = num("cohort.prevalence");
  s.missing_threshold = num("cohort.missing_threshold");
  s.include_comorbid = flag("cohort.include_comorbid");
  s.tier = *parse_tier(get("narrative.tier"));

  s.reasoner.T = whole("reasoner.T");
  s.reasoner.N = whole("reasoner.N");
  s.reasoner.tier = s.tier;
  s.reasoner.generation_temperature = num("reasoner.generation_temperature");
  s.reasoner.refine_temperature = num("reasoner.refine_temperature");
  s.reasoner.max_tokens = whole("reasoner.max_tokens");
  s.reasoner.workers = whole("reasoner.workers");
  s.reasoner.seed = derive_seed(s.seed, "reason");

  s.mock_oracle = flag("oracle.mock");
  for (int i = 1; i <= 3; ++i) {
    const auto p = fmt::format("oracle.{}.", i);
    s.oracles.push_back({get(p + "base_url"), get(p + "model"), get(p + "token_env")});
  }
  s.oracle_max_retries = whole("oracle.max_retries");
  s.oracle_timeout_seconds = num("oracle.timeout_seconds");
  s.oracle_rps = num("oracle.requests_per_second");

  s.policy_dim = whole("policy.dim");
  s.sft.epochs = whole("sft.epochs");
  s.sft.lr = num("sft.lr");
  s.sft.batch_size = whole("sft.batch_size");
  s.sft.optimizer = policy::parse_optimizer(get("sft.optimizer"));
  s.sft.seed = derive_seed(s.seed, "sft");

  s.rl.G = whole("rl.G");
  s.rl.epsilon = num("rl.epsilon");
  s.rl.beta = num("rl.beta");
  s.rl.mu = num("rl.mu");
  s.rl.nu = num("rl.nu");
  s.rl.lr = num("rl.lr");
  s.rl.optimizer = policy::parse_optimizer(get("rl.optimizer"));
  s.rl.queries_per_update = whole("rl.queries_per_update");
  s.rl.sync_every = whole("rl.sync_every");
  s.rl.std_normalize = flag("rl.std_normalize");
  s.rl.temperature = num("rl.temperature");
  s.rl.seed = derive_seed(s.seed, "rl");
  s.rl_epochs = whole("rl.epochs");

  s.test_fraction = num("eval.test_fraction");

  if (s.rl.mu + s.rl.nu <= 0.0) throw ConfigError("rl.mu + rl.nu must be > 0");
  try {
    s.rl.validate();
    s.reasoner.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return s;
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += fmt::format("{} = {}\n", k, v);
  return out;
}

std::string RunConfig::hash() const { return sha256_hex(canonical()); }

json RunConfig::to_json() const {
  json j = json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

RunConfig resolve_config(const ConfigLayers& layers) {
  RunConfig config;
  if (layers.file_text) config.merge_file(*layers.file_text, layers.file_origin);
  for (const auto& kv : layers.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("override '{}' is not key=value", kv));
    config.set(trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (layers.seed) config.set("seed", std::to_string(*layers.seed));
  if (layers.mock_oracle) config.set("oracle.mock", "true");
  config.settings();
  return config;
}

namespace {

// Key prefixes each stage adds to its upstream's scope.
const std::vector<std::pair<std::string, std::vector<std::string>>>& stage_prefixes() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> stages = {
      {"synth", {"seed", "cohort.", "narrative."}},
      {"filter", {"oracle."}},
      {"reason", {"reasoner."}},
      {"train-sft", {"policy.", "sft.", "eval."}},
      {"train-rl", {"rl."}},
      {"eval", {}},
      {"report", {}},
  };
  return stages;
}

bool under(const std::string& key, const std::string& prefix) {
  return prefix.back() == '.' ? key.rfind(prefix, 0) == 0 : key == prefix;
}

}  // namespace

std::vector<std::string> RunConfig::scope(std::string_view stage) {
  std::vector<std::string> prefixes;
  bool found = false;
  for (const auto& [name, own] : stage_prefixes()) {
    prefixes.insert(prefixes.end(), own.begin(), own.end());
    if (name == stage) {
      found = true;
      break;
    }
  }
  if (!found) throw ConfigError(fmt::format("unknown stage '{}'", stage));
  std::vector<std::string> out;
  for (const auto& k : schema()) {
    if (std::any_of(prefixes.begin(), prefixes.end(), [&](const auto& p) { return under(k.key, p); })) {
      out.push_back(k.key);
    }
  }
  return out;
}

std::string RunConfig::canonical(std::string_view stage) const {
  std::string out;
  for (const auto& k : scope(stage)) out += fmt::format("{} = {}\n", k, values_.at(k));
  return out;
}

std::string RunConfig::hash(std::string_view stage) const { return sha256_hex(canonical(stage)); }

json RunConfig::to_json(std::string_view stage) const {
  json j = json::object();
  for (const auto& k : scope(stage)) j[k] = values_.at(k);
  return j;
}

// ---- lock -------------------------------------------------------------------

RunLock::RunLock(const fs::path& out_dir) : path_(out_dir / ".mddt.lock") {
  fs::create_directories(out_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw std::runtime_error(fmt::format(
        "{} exists: another run is using this directory (remove the file if that run is gone)",
        path_.string()));
  }
  const auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---- artifact plumbing --------------------------------------------------------

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view content) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", tmp));
    out << content;
    if (!out) throw std::runtime_error(fmt::format("write to {} failed", tmp));
  }
  fs::rename(tmp, p);
}

fs::path stamp_path(const Context& ctx, std::string_view stage) {
  return ctx.out_dir / "stamps" / (std::string(stage) + ".json");
}

// Records what a stage wrote under which config.
class Stage {
 public:
  Stage(const Context& ctx, std::string name) : ctx_(ctx), name_(std::move(name)) {
    fs::create_directories(ctx.out_dir / "stamps");
    // a rerun invalidates the previous stamp until it completes
    std::error_code ec;
    fs::remove(stamp_path(ctx_, name_), ec);
  }

  void write(const std::string& file, std::string_view content) {
    write_file(ctx_.out_dir / file, content);
    outputs_[file] = sha256_hex(content);
  }

  void finish() {
    json stamp = {{"stage", name_},
                  {"config_hash", ctx_.config.hash(name_)},
                  {"config", ctx_.config.to_json(name_)},
                  {"outputs", outputs_}};
    write_file(stamp_path(ctx_, name_), stamp.dump(2) + "\n");
    if (ctx_.log) ctx_.log(fmt::format("{}: wrote {} file(s) to {}", name_, outputs_.size(), ctx_.out_dir.string()));
  }

 private:
  const Context& ctx_;
  std::string name_;
  std::map<std::string, std::string> outputs_;
};

// Returns the content of `file` after checking that `producer` wrote it under
// the current config and that it is unchanged since.
std::string require(const Context& ctx, std::string_view producer, const std::string& file) {
  const auto path = ctx.out_dir / file;
  const auto stamp_file = stamp_path(ctx, producer);
  if (!fs::exists(path) || !fs::exists(stamp_file)) {
    throw DependencyError(fmt::format("missing {}: run `mddt {}` first", path.string(), producer));
  }
  const auto stamp = json::parse(read_file(stamp_file));
  if (stamp.at("config_hash").get<std::string>() != ctx.config.hash(producer)) {
    throw DependencyError(fmt::format(
        "{} was produced by `mddt {}` under a different configuration ({}); rerun it with this one",
        file, producer, stamp.at("config_hash").get<std::string>().substr(0, 12)));
  }
  auto content = read_file(path);
  const auto& outputs = stamp.at("outputs");
  if (!outputs.contains(file) || outputs.at(file).get<std::string>() != sha256_hex(content)) {
    throw DependencyError(fmt::format("{} changed after `mddt {}` wrote it; rerun that stage", file, producer));
  }
  return content;
}

bool available(const Context& ctx, std::string_view producer, const std::string& file) {
  try {
    require(ctx, producer, file);
    return true;
  } catch (const DependencyError&) {
    return false;
  }
}

std::vector<QaPair> read_qa(std::string_view text) {
  std::vector<QaPair> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(qa_from_json(json::parse(line)));
  }
  return out;
}

std::string qa_jsonl(const std::vector<QaPair>& pairs) {
  std::string out;
  for (const auto& qa : pairs) out += to_json(qa).dump() + "\n";
  return out;
}

std::shared_ptr<oracle::Transport> make_transport(const Context& ctx, const Settings& s) {
  if (ctx.transport) return ctx.transport;
  if (s.mock_oracle) {
    return std::make_shared<oracle::MockTransport>(std::make_shared<oracle::ClinicalRuleOracle>());
  }
  return std::make_shared<oracle::HttpTransport>();
}

std::vector<oracle::OracleClient> make_clients(const Context& ctx, const Settings& s) {
  const auto transport = make_transport(ctx, s);
  std::vector<oracle::OracleClient> clients;
  for (std::size_t i = 0; i < s.oracles.size(); ++i) {
    oracle::OracleEndpoint e;
    e.id = fmt::format("oracle{}:{}", i + 1, s.oracles[i].model);
    e.base_url = s.mock_oracle ? fmt::format("mock://oracle{}", i + 1) : s.oracles[i].base_url;
    e.model_name = s.oracles[i].model;
    if (!s.mock_oracle && !s.oracles[i].token_env.empty()) {
      if (const char* token = std::getenv(s.oracles[i].token_env.c_str())) e.auth_token = token;
    }
    e.max_retries = s.oracle_max_retries;
    e.timeout = std::chrono::milliseconds(static_cast<long long>(s.oracle_timeout_seconds * 1000.0));
    e.requests_per_second = s.oracle_rps;
    e.max_in_flight = s.reasoner.workers;
    clients.emplace_back(e, transport);
  }
  return clients;
}

// Runs fn(i) for i in [0, n) on `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < std::max(1, workers); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

struct Split {
  std::vector<reasoner::ReasoningSample> train;
  std::vector<reasoner::ReasoningSample> test;
};

Split split_samples(const Context& ctx, const Settings& s) {
  const auto samples = reasoner::samples_from_jsonl(require(ctx, "reason", files::kSamples));
  Split out;
  const auto root = derive_seed(s.seed, "split");
  for (const auto& sample : samples) {
    if (!reasoner::is_usable(sample.status)) continue;
    const bool test = unit_interval(derive_seed(root, sample.qa.id)) < s.test_fraction;
    (test ? out.test : out.train).push_back(sample);
  }
  if (out.train.empty() || out.test.empty()) {
    throw std::runtime_error(fmt::format(
        "the usable corpus ({} train / {} test samples) is too small to train and evaluate",
        out.train.size(), out.test.size()));
  }
  return out;
}

std::vector<toy::ToyQuery> queries_of(const std::vector<reasoner::ReasoningSample>& samples) {
  std::vector<toy::ToyQuery> out;
  for (const auto& s : samples) out.push_back(toy::query_from_qa(s.qa));
  return out;
}

policy::PolicyParams load_ckpt(const Context& ctx, std::string_view producer, const std::string& file) {
  std::istringstream in(require(ctx, producer, file));
  return policy::read_checkpoint(in);
}

std::string ckpt_bytes(const policy::PolicyParams& p) {
  std::ostringstream out;
  policy::write_checkpoint(out, p);
  return out.str();
}

json csv_rows(std::string_view csv) {
  // numeric CSV with a header line -> array of objects
  json rows = json::array();
  std::istringstream in{std::string(csv)};
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (header.empty()) {
      header = cells;
      continue;
    }
    json row = json::object();
    for (std::size_t i = 0; i < cells.size() && i < header.size(); ++i) row[header[i]] = std::stod(cells[i]);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

// ---- stages -------------------------------------------------------------------

void cmd_synth(const Context& ctx) {
  const auto s = ctx.config.settings();
  Stage stage(ctx, "synth");
  GeneratorOptions options;
  options.include_comorbid = s.include_comorbid;
  const auto generated = generate_cohort(s.cohort_n, s.prevalence, derive_seed(s.seed, "cohort"), options);
  const auto eligible = exclude_comorbid(generated);
  const auto filtered = filter_missing(eligible, s.missing_threshold);

  std::vector<QaPair> pairs;
  for (const auto& r : filtered.kept) pairs.push_back(make_qa(r, s.tier));

  json summary = {{"config_hash", ctx.config.hash("synth")},
                  {"generated", generated.size()},
                  {"excluded_comorbid", generated.size() - eligible.size()},
                  {"excluded_missing", filtered.excluded.size()},
                  {"kept", filtered.kept.size()},
                  {"summary", to_json(summarize(filtered.kept))}};
  stage.write(files::kCohort, to_csv(filtered.kept));
  stage.write(files::kCohortSummary, summary.dump(2) + "\n");
  stage.write(files::kQa, qa_jsonl(pairs));
  stage.finish();
}

void cmd_filter(const Context& ctx) {
  const auto s = ctx.config.settings();
  const auto pairs = read_qa(require(ctx, "synth", files::kQa));
  Stage stage(ctx, "filter");
  auto clients = make_clients(ctx, s);
  std::vector<oracle::ConsensusResult> results(pairs.size());
  parallel_for(pairs.size(), s.reasoner.workers, [&](std::size_t i) {
    results[i] = oracle::consensus_filter(pairs[i], clients);
  });

  std::vector<QaPair> kept;
  std::map<std::string, std::size_t> counts = {{"retain", 0}, {"exclude", 0}, {"deferred", 0}};
  json decisions = json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& r = results[i];
    ++counts[std::string(oracle::to_string(r.decision))];
    if (r.decision == oracle::ConsensusDecision::Retain) kept.push_back(pairs[i]);
    json verdicts = json::array();
    for (const auto& v : r.verdicts) verdicts.push_back({{"endpoint", v.endpoint_id}, {"answer", to_string(v.extracted_answer)}});
    json d = {{"id", pairs[i].id}, {"decision", oracle::to_string(r.decision)}, {"verdicts", verdicts}};
    if (!r.error.empty()) d["error"] = r.error;
    decisions.push_back(d);
  }
  json report = {{"config_hash", ctx.config.hash("filter")}, {"total", pairs.size()}, {"counts", counts},
                 {"decisions", decisions}};
  stage.write(files::kFiltered, qa_jsonl(kept));
  stage.write(files::kFilterReport, report.dump(2) + "\n");
  stage.finish();
}

void cmd_reason(const Context& ctx) {
  const auto s = ctx.config.settings();
  const auto pairs = read_qa(require(ctx, "filter", files::kFiltered));
  Stage stage(ctx, "reason");
  auto clients = make_clients(ctx, s);
  const auto corpus = reasoner::run_corpus(pairs, clients.front(), s.reasoner);
  json report = corpus.report.to_json();
  report["config_hash"] = ctx.config.hash("reason");
  stage.write(files::kSamples, reasoner::to_jsonl(corpus.samples));
  stage.write(files::kSynthesisReport, report.dump(2) + "\n");
  stage.finish();
}

void cmd_train_sft(const Context& ctx) {
  const auto s = ctx.config.settings();
  const auto split = split_samples(ctx, s);
  Stage stage(ctx, "train-sft");
  const auto train_queries = queries_of(split.train);
  const auto base = toy::base_policy(train_queries, derive_seed(s.seed, "base"), toy::default_shape(s.policy_dim));
  std::vector<policy::TokenSeq> corpus;
  for (const auto& sample : split.train) corpus.push_back(toy::sequence_from_sample(sample));
  const auto sft = policy::train_sft(base, corpus, s.sft);
  if (ctx.log) {
    ctx.log(fmt::format("train-sft: {} sequences, batch {}, final loss {:.4f}", corpus.size(),
                        sft.effective_batch_size, sft.curve.empty() ? 0.0 : sft.curve.back().loss));
  }
  stage.write(files::kBase, ckpt_bytes(base));
  stage.write(files::kSft, ckpt_bytes(sft.params));
  stage.write(files::kSftCurve, policy::loss_curve_csv(sft.curve));
  stage.finish();
}

void cmd_train_rl(const Context& ctx) {
  auto s = ctx.config.settings();
  const auto split = split_samples(ctx, s);
  const auto base = load_ckpt(ctx, "train-sft", files::kBase);
  const auto sft = load_ckpt(ctx, "train-sft", files::kSft);
  Stage stage(ctx, "train-rl");
  const auto queries = queries_of(split.train);
  const auto passes = static_cast<std::size_t>(s.rl_epochs) * queries.size();
  const auto per = static_cast<std::size_t>(s.rl.queries_per_update);
  s.rl.updates = static_cast<int>(std::max<std::size_t>(1, (passes + per - 1) / per));
  const grpo::Logger log = ctx.log ? grpo::Logger(ctx.log) : grpo::Logger();
  const auto rl = grpo::train_rl(base, queries, s.rl, log);
  const auto sft_rl = grpo::train_rl(sft, queries, s.rl, log);
  if (ctx.log) {
    ctx.log(fmt::format("train-rl: {} updates of {} queries x G={}", s.rl.updates, per, s.rl.G));
  }
  stage.write(files::kRl, ckpt_bytes(rl.params));
  stage.write(files::kRlStats, grpo::stats_csv(rl.stats));
  stage.write(files::kSftRl, ckpt_bytes(sft_rl.params));
  stage.write(files::kSftRlStats, grpo::stats_csv(sft_rl.stats));
  stage.finish();
}

void cmd_eval(const Context& ctx) {
  const auto s = ctx.config.settings();
  const auto split = split_samples(ctx, s);
  const auto test = queries_of(split.test);
  std::vector<Label> truth;
  for (const auto& q : test) truth.push_back(q.truth);

  struct Variant {
    const char* name;
    const char* producer;
    const char* file;
  };
  const Variant variants[] = {{"base", "train-sft", files::kBase},
                              {"sft", "train-sft", files::kSft},
                              {"rl", "train-rl", files::kRl},
                              {"sft_rl", "train-rl", files::kSftRl}};
  // the base checkpoint is the minimum; others join when present
  load_ckpt(ctx, "train-sft", files::kBase);

  Stage stage(ctx, "eval");
  metrics::EvalReport report;
  std::map<std::string, toy::Evaluation> evals;
  json ablation = json::array();
  for (const auto& v : variants) {
    if (!available(ctx, v.producer, v.file)) continue;
    const auto params = load_ckpt(ctx, v.producer, v.file);
    auto ev = toy::evaluate(params, test);
    report.methods.push_back(metrics::method_row(v.name, truth, ev.predicted, ev.score));
    const auto& row = report.methods.back();
    ablation.push_back({{"variant", v.name},
                        {"accuracy", ev.accuracy},
                        {"format_rate", ev.format_rate},
                        {"F1", row.metrics.f1 ? json(*row.metrics.f1) : json(nullptr)},
                        {"AUC", row.auc ? json(*row.auc) : json(nullptr)}});
    stage.write(fmt::format("roc_{}.csv", v.name), metrics::roc_csv(metrics::roc_curve(ev.truth, ev.score)));
    evals[v.name] = std::move(ev);
  }
  const auto best = evals.count("sft_rl") ? "sft_rl" : (evals.count("sft") ? "sft" : "");
  if (*best != '\0') {
    report.delong = metrics::delong_test(evals.at("base").truth, evals.at(best).score, evals.at("base").score);
    report.delong_pair = fmt::format("{} vs base", best);
  }

  // tier comparison on the held-out questions, answered by the generation oracle
  auto clients = make_clients(ctx, s);
  json overlap = json::array();
  for (auto tier : {PromptTier::Direct, PromptTier::SimpleCot, PromptTier::ComplexCot}) {
    const auto prompt = prompt_template(tier).render();
    std::vector<std::string> responses(split.test.size());
    parallel_for(split.test.size(), s.reasoner.workers, [&](std::size_t i) {
      oracle::CompletionOptions opt;
      opt.temperature = 0.0;
      opt.max_tokens = s.reasoner.max_tokens;
      opt.seed = derive_seed(derive_seed(s.seed, "tier"), split.test[i].qa.id);
      responses[i] = clients.front().complete(oracle::diagnosis_messages(prompt, split.test[i].qa.question), opt).response;
    });
    std::vector<Label> tier_truth;
    double bleu = 0.0;
    double rouge = 0.0;
    double meteor = 0.0;
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      tier_truth.push_back(split.test[i].qa.answer);
      const std::vector<std::string> ref = {split.test[i].path};
      const auto o = metrics::text_overlap(responses[i], ref);
      bleu += o.bleu;
      rouge += o.rouge_l;
      meteor += o.meteor;
    }
    const double n = static_cast<double>(split.test.size());
    report.tiers.push_back(metrics::tier_row(std::string(to_string(tier)), responses, tier_truth,
                                             metrics::whitespace_tokenizer()));
    overlap.push_back({{"tier", to_string(tier)}, {"bleu", bleu / n}, {"rouge_l", rouge / n}, {"meteor", meteor / n}});
  }

  auto eval_json = metrics::to_json(report);
  eval_json["text_overlap"] = overlap;
  eval_json["tokenizer"] = metrics::whitespace_tokenizer().name;
  eval_json["test_size"] = test.size();
  eval_json["config_hash"] = ctx.config.hash("eval");
  stage.write(files::kEvalReport, eval_json.dump(2) + "\n");

  json curves = {{"sft_loss", csv_rows(require(ctx, "train-sft", files::kSftCurve))}};
  if (available(ctx, "train-rl", files::kRlStats)) {
    curves["rl"] = csv_rows(require(ctx, "train-rl", files::kRlStats));
    curves["sft_rl"] = csv_rows(require(ctx, "train-rl", files::kSftRlStats));
  }
  json artifacts = json::object();
  for (const auto* producer : {"synth", "filter", "reason", "train-sft", "train-rl"}) {
    const auto p = stamp_path(ctx, producer);
    if (!fs::exists(p)) continue;
    const auto stamp = json::parse(read_file(p));
    for (const auto& [file, digest] : stamp.at("outputs").items()) {
      if (!available(ctx, producer, file)) continue;
      artifacts[file] = {{"sha256", digest}, {"stage", producer}, {"config_hash", stamp.at("config_hash")}};
    }
  }
  json bundle = {
      {"config_hash", ctx.config.hash("eval")},
      {"config", ctx.config.to_json("eval")},
      {"cohort", json::parse(require(ctx, "synth", files::kCohortSummary))},
      {"filter", json::parse(require(ctx, "filter", files::kFilterReport)).at("counts")},
      {"synthesis", json::parse(require(ctx, "reason", files::kSynthesisReport))},
      {"curves", curves},
      {"eval", eval_json},
      {"ablation", ablation},
      {"ablation_complete", ablation.size() == 4},
      {"split", {{"train", split.train.size()}, {"test", split.test.size()}}},
      {"artifacts", artifacts},
  };
  stage.write(files::kBundle, bundle.dump(2) + "\n");
  stage.finish();
  if (ctx.log) ctx.log(fmt::format("eval: bundle sha256 {}", bundle_hash(ctx.out_dir)));
}

namespace {

std::string cell(const json& v, int digits = 4) {
  if (v.is_null()) return "n/a";
  if (v.is_number()) return fmt::format("{:.{}f}", v.get<double>(), digits);
  return v.dump();
}

}  // namespace

void cmd_report(const Context& ctx) {
  const auto bundle = json::parse(require(ctx, "eval", files::kBundle));
  Stage stage(ctx, "report");
  std::string md = "# Run report\n\n";
  md += fmt::format("config hash `{}`\n\nbundle sha256 `{}`\n\n", bundle.at("config_hash").get<std::string>(),
                    bundle_hash(ctx.out_dir));
  const auto& cohort = bundle.at("cohort");
  md += fmt::format("## Cohort\n\ngenerated {}, excluded (comorbid) {}, excluded (missing) {}, kept {}\n\n",
                    cohort.at("generated").dump(), cohort.at("excluded_comorbid").dump(),
                    cohort.at("excluded_missing").dump(), cohort.at("kept").dump());
  const auto& f = bundle.at("filter");
  md += fmt::format("## Consensus filter\n\nretain {}, exclude {}, deferred {}\n\n", f.at("retain").dump(),
                    f.at("exclude").dump(), f.at("deferred").dump());
  const auto& syn = bundle.at("synthesis");
  md += fmt::format("## Reasoning corpus\n\n{} samples, discard rate {}\n\n", syn.at("total").dump(),
                    cell(syn.at("discard_rate")));
  md += "| status | count |\n|---|---|\n";
  for (const auto& [k, v] : syn.at("status_counts").items()) md += fmt::format("| {} | {} |\n", k, v.dump());

  md += "\n## Toy policy evaluation\n\n| Method | ACC | F1 | AUC | SPE | SENS | PPV | NPV |\n|---|---|---|---|---|---|---|---|\n";
  for (const auto& m : bundle.at("eval").at("methods")) {
    md += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} |\n", m.at("method").get<std::string>(),
                      cell(m.at("ACC")), cell(m.at("F1")), cell(m.at("AUC")), cell(m.at("SPE")),
                      cell(m.at("SENS")), cell(m.at("PPV")), cell(m.at("NPV")));
  }
  const auto& delong = bundle.at("eval").at("delong");
  if (!delong.is_null()) {
    md += fmt::format("\nDeLong ({}): z = {}, p-value = {}\n", delong.at("pair").get<std::string>(),
                      cell(delong.at("z"), 3), cell(delong.at("p_value")));
  }
  md += "\n## Ablation\n\n| Variant | Accuracy | F1 | AUC |\n|---|---|---|---|\n";
  for (const auto& r : bundle.at("ablation")) {
    md += fmt::format("| {} | {} | {} | {} |\n", r.at("variant").get<std::string>(), cell(r.at("accuracy")),
                      cell(r.at("F1")), cell(r.at("AUC")));
  }
  md += "\n## Prompt tiers (oracle answers on held-out questions)\n\n| Method | Accuracy | F1-Score | Average Tokens |\n|---|---|---|---|\n";
  for (const auto& t : bundle.at("eval").at("tiers")) {
    md += fmt::format("| {} | {} | {} | {} |\n", t.at("method").get<std::string>(), cell(t.at("Accuracy")),
                      cell(t.at("F1-Score")), cell(t.at("Average Tokens"), 1));
  }
  stage.write(files::kReport, md);
  stage.finish();
}

void run_all(const Context& ctx) {
  cmd_synth(ctx);
  cmd_filter(ctx);
  cmd_reason(ctx);
  cmd_train_sft(ctx);
  cmd_train_rl(ctx);
  cmd_eval(ctx);
  cmd_report(ctx);
}

std::string bundle_hash(const fs::path& out_dir) { return sha256_hex(read_file(out_dir / files::kBundle)); }

std::vector<AblationRow> read_ablation(const json& bundle) {
  std::vector<AblationRow> rows;
  for (const auto& r : bundle.at("ablation")) {
    AblationRow row;
    row.variant = r.at("variant").get<std::string>();
    row.accuracy = r.at("accuracy").get<double>();
    if (!r.at("F1").is_null()) row.f1 = r.at("F1").get<double>();
    if (!r.at("AUC").is_null()) row.auc = r.at("AUC").get<double>();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mddt::pipeline
