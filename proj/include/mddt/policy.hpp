#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mddt::policy {

/// Token ids with a prompt marker: only positions >= split are scored.
struct TokenSeq {
  std::vector<int> tokens;
  std::size_t split = 1;

  std::size_t target_count() const { return tokens.size() - split; }
  bool operator==(const TokenSeq&) const = default;
};

struct PolicyShape {
  int vocab = 0;
  int dim = 0;
  int context = 0;  // maximum sequence length
  bool operator==(const PolicyShape&) const = default;
};

// Conditional for position t given x_0..x_{t-1}:
//   logits = bigram[x_{t-1}] + head * mean_j emb[x_j] + bias
inline constexpr std::string_view kLayout = "emb[V*D] head[V*D] bias[V] bigram[V*V]";

class PolicyParams {
 public:
  PolicyParams() = default;
  /// All parameters zero.
  explicit PolicyParams(PolicyShape shape, std::uint64_t seed = 0);
  /// Embeddings ~ N(0, 1) from the seed, everything else zero, so every
  /// conditional is exactly uniform.
  static PolicyParams uniform(PolicyShape shape, std::uint64_t seed);

  const PolicyShape& shape() const { return shape_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return theta_.size(); }
  std::vector<double>& theta() { return theta_; }
  const std::vector<double>& theta() const { return theta_; }

  std::size_t emb_offset() const { return 0; }
  std::size_t head_offset() const { return static_cast<std::size_t>(shape_.vocab * shape_.dim); }
  std::size_t bias_offset() const { return 2 * head_offset(); }
  std::size_t bigram_offset() const { return bias_offset() + static_cast<std::size_t>(shape_.vocab); }

  bool finite() const;
  bool operator==(const PolicyParams&) const = default;

 private:
  PolicyShape shape_;
  std::uint64_t seed_ = 0;
  std::vector<double> theta_;
};

/// Throws DomainError for ids >= V, split outside [1, length] or sequences
/// longer than the context.
void validate(const TokenSeq& seq, const PolicyShape& shape);

/// Forward state for the scored positions of one sequence.
struct Trace {
  std::size_t from = 0;         // first scored position (= split)
  std::vector<double> context;  // per position: mean context embedding (D)
  std::vector<double> logp;     // per position: log-softmax over the vocabulary (V)

  std::span<const double> logp_at(std::size_t t, int vocab) const {
    return {logp.data() + (t - from) * static_cast<std::size_t>(vocab),
            static_cast<std::size_t>(vocab)};
  }
};

Trace trace(const PolicyParams& params, const TokenSeq& seq);

/// Adds d(objective)/d(theta) to grad given d(objective)/d(logits) for each
/// scored position (row-major, positions x V).
void accumulate_grad(const PolicyParams& params, const TokenSeq& seq, const Trace& tr,
                     std::span<const double> dlogits, std::vector<double>& grad);

/// Sum of log conditionals over the scored positions.
double log_prob(const PolicyParams& params, const TokenSeq& seq);

/// Log-softmax for the next token after `prefix`.
std::vector<double> next_token_logp(const PolicyParams& params, std::span<const int> prefix);

struct Sampled {
  TokenSeq seq;
  std::vector<double> token_logp;  // untempered log-probabilities of the sampled tokens
  double logp = 0.0;
};

/// Continues `prompt` by up to max_new tokens, stopping after stop_token.
/// Temperature 0 is greedy; otherwise draws from softmax(logits / T).
Sampled sample(const PolicyParams& params, std::span<const int> prompt, int max_new,
               double temperature, std::uint64_t seed, std::optional<int> stop_token = {});

// ---- SFT --------------------------------------------------------------------

struct LossReport {
  double loss = 0.0;       // mean over sequences of the summed NLL
  double total_nll = 0.0;  // summed over every scored token
  double per_token_nll = 0.0;
  std::size_t token_count = 0;
  double grad_norm = 0.0;
};

/// Loss and its gradient (written to grad when non-null).
LossReport sft_loss_and_grad(const PolicyParams& params, std::span<const TokenSeq> batch,
                             std::vector<double>* grad);

enum class OptimizerKind { Sgd, Adam };
std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::size_t size);
  /// theta -= lr * step(grad) for descent.
  void descend(std::vector<double>& theta, const std::vector<double>& grad);

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_;
  std::vector<double> v_;
  long step_ = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SftConfig {
  int epochs = 3;
  double lr = 0.5;
  int batch_size = 256;  // clamped to the corpus size
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Sgd;
};

struct EpochLoss {
  int epoch = 0;
  double loss = 0.0;  // mean of the step losses in the epoch
  double per_token_nll = 0.0;
};

struct SftResult {
  PolicyParams params;
  std::vector<EpochLoss> curve;
  int effective_batch_size = 0;
};

SftResult train_sft(PolicyParams params, std::span<const TokenSeq> corpus, const SftConfig& config);

std::string loss_curve_csv(const std::vector<EpochLoss>& curve);

// ---- checkpoints -------------------------------------------------------------

void write_checkpoint(std::ostream& out, const PolicyParams& params);
PolicyParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace mddt::policy
