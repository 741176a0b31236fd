#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mddt/common.hpp"
#include "mddt/policy.hpp"
#include "mddt/toy.hpp"

namespace mddt::grpo {

struct GrpoConfig {
  int G = 8;
  double epsilon = 0.2;
  double beta = 0.01;
  double mu = 0.9;
  double nu = 0.1;
  double lr = 0.01;
  policy::OptimizerKind optimizer = policy::OptimizerKind::Adam;
  int updates = 200;
  int queries_per_update = 64;
  int sync_every = 1;  // updates between old-policy syncs
  bool std_normalize = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RewardBreakdown {
  int r_acc = 0;
  int r_fmt = 0;
  double combined = 0.0;
};

/// r = mu * r_acc + nu * r_fmt over a toy continuation.
RewardBreakdown reward(std::span<const int> continuation, Label truth, double mu, double nu);

/// (r - mean) / (std + 1e-8) with the population std; mean-only when
/// std_normalize is false.
std::vector<double> group_advantages(std::span<const double> rewards, bool std_normalize = true);

struct Rollout {
  policy::TokenSeq seq;  // prompt + continuation, split at the prompt
  double old_logp = 0.0;
  RewardBreakdown reward;
  double advantage = 0.0;
};

struct RolloutGroup {
  std::string query_id;
  Label truth = Label::HC;
  std::vector<Rollout> outputs;
};

struct UpdateStats {
  int update = 0;
  double objective = 0.0;
  double mean_ratio = 1.0;
  double max_ratio = 1.0;
  double clip_fraction = 0.0;
  double kl = 0.0;  // mean over outputs of the summed per-position KL(new || ref)
  double mean_reward = 0.0;
  double accuracy = 0.0;  // share of rollouts with r_acc = 1
};

/// min(rho * A, clip(rho, 1 - eps, 1 + eps) * A).
double clipped_term(double rho, double advantage, double epsilon);

/// Exact KL between two categorical distributions given as log-probabilities.
double categorical_kl(std::span<const double> logp, std::span<const double> logq);

/// Objective J = mean over groups of (1/G) sum_i [min(rho_i A_i, clip(rho_i) A_i)
/// - beta * KL_i(new || ref)] and dJ/dtheta (written to grad when non-null).
/// Throws DomainError naming the query for non-finite ratios.
UpdateStats grpo_objective_and_grad(const policy::PolicyParams& current,
                                    const policy::PolicyParams& reference,
                                    std::span<const RolloutGroup> groups, const GrpoConfig& config,
                                    std::vector<double>* grad);

/// G samples from the old policy for one query, scored and normalized.
RolloutGroup rollout(const policy::PolicyParams& old_policy, const toy::ToyQuery& query,
                     const GrpoConfig& config, std::uint64_t seed);

struct RlResult {
  policy::PolicyParams params;
  std::vector<UpdateStats> stats;
  int collapse_warnings = 0;  // epochs in which every group had zero reward variance
};

using Logger = std::function<void(const std::string&)>;

/// On-policy GRPO from `start`, which also serves as the frozen reference.
RlResult train_rl(policy::PolicyParams start, std::span<const toy::ToyQuery> queries,
                  const GrpoConfig& config, const Logger& log = {});

std::string stats_csv(const std::vector<UpdateStats>& stats);

}  // namespace mddt::grpo
