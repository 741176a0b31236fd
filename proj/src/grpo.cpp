#include "mddt/grpo.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mddt::grpo {

void GrpoConfig::validate() const {
  if (G < 2) throw DomainError("grpo: G must be >= 2");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw DomainError("grpo: epsilon must be in (0, 1)");
  if (beta < 0.0) throw DomainError("grpo: beta must be >= 0");
  if (mu < 0.0 || nu < 0.0 || mu + nu <= 0.0) {
    throw DomainError("grpo: reward weights must be >= 0 with mu + nu > 0");
  }
  if (lr < 0.0) throw DomainError("grpo: lr must be >= 0");
  if (updates < 0) throw DomainError("grpo: updates must be >= 0");
  if (queries_per_update < 1) throw DomainError("grpo: queries_per_update must be >= 1");
  if (sync_every < 1) throw DomainError("grpo: sync_every must be >= 1");
  if (temperature <= 0.0) throw DomainError("grpo: rollout temperature must be > 0");
}

RewardBreakdown reward(std::span<const int> continuation, Label truth, double mu, double nu) {
  RewardBreakdown r;
  r.r_acc = matches(toy::extract_answer(continuation), truth) ? 1 : 0;
  r.r_fmt = toy::well_formed(continuation) ? 1 : 0;
  r.combined = mu * r.r_acc + nu * r.r_fmt;
  return r;
}

std::vector<double> group_advantages(std::span<const double> rewards, bool std_normalize) {
  if (rewards.size() < 2) throw DomainError("group_advantages: need at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  // exact zeros for constant groups; the mean of repeated values need not be exact
  const bool flat = std::all_of(rewards.begin(), rewards.end(),
                                [&](double r) { return r == rewards.front(); });
  std::vector<double> out(rewards.size(), 0.0);
  if (flat) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    const double centered = rewards[i] - mean;
    out[i] = std_normalize ? centered / (sd + 1e-8) : centered;
  }
  return out;
}

double clipped_term(double rho, double advantage, double epsilon) {
  const double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(rho * advantage, clipped * advantage);
}

double categorical_kl(std::span<const double> logp, std::span<const double> logq) {
  double kl = 0.0;
  for (std::size_t v = 0; v < logp.size(); ++v) {
    const double p = std::exp(logp[v]);
    if (p > 0.0) kl += p * (logp[v] - logq[v]);
  }
  return std::max(0.0, kl);
}

UpdateStats grpo_objective_and_grad(const policy::PolicyParams& current,
                                    const policy::PolicyParams& reference,
                                    std::span<const RolloutGroup> groups, const GrpoConfig& config,
                                    std::vector<double>* grad) {
  if (current.shape() != reference.shape()) {
    throw DomainError("grpo: current and reference policies differ in shape");
  }
  if (groups.empty()) throw DomainError("grpo: no rollout groups");
  const int V = current.shape().vocab;
  const auto uv = static_cast<std::size_t>(V);
  if (grad) grad->assign(current.size(), 0.0);

  UpdateStats stats;
  stats.max_ratio = 0.0;
  double ratio_sum = 0.0;
  std::size_t outputs = 0;
  std::size_t clipped = 0;
  std::size_t correct = 0;
  double kl_sum = 0.0;
  double reward_sum = 0.0;
  std::vector<double> dz;
  const double group_weight = 1.0 / static_cast<double>(groups.size());

  for (const auto& group : groups) {
    if (group.outputs.empty()) throw DomainError("grpo: empty group " + group.query_id);
    const double w = group_weight / static_cast<double>(group.outputs.size());
    for (const auto& o : group.outputs) {
      const auto tr = policy::trace(current, o.seq);
      const auto tr_ref = policy::trace(reference, o.seq);
      double logp = 0.0;
      double kl = 0.0;
      std::vector<double> kl_at(o.seq.target_count());
      for (std::size_t t = o.seq.split; t < o.seq.tokens.size(); ++t) {
        const auto lp = tr.logp_at(t, V);
        logp += lp[static_cast<std::size_t>(o.seq.tokens[t])];
        kl_at[t - o.seq.split] = categorical_kl(lp, tr_ref.logp_at(t, V));
        kl += kl_at[t - o.seq.split];
      }
      const double rho = std::exp(logp - o.old_logp);
      if (!std::isfinite(rho) || !std::isfinite(logp)) {
        throw DomainError(fmt::format("grpo: non-finite importance ratio for query '{}'",
                                      group.query_id));
      }
      const double A = o.advantage;
      const double unclipped = rho * A;
      const double clip_value = std::clamp(rho, 1.0 - config.epsilon, 1.0 + config.epsilon) * A;
      const bool clip_active = clip_value < unclipped;
      stats.objective += w * (std::min(unclipped, clip_value) - config.beta * kl);

      ratio_sum += rho;
      stats.max_ratio = std::max(stats.max_ratio, rho);
      clipped += clip_active;
      kl_sum += kl;
      reward_sum += o.reward.combined;
      correct += o.reward.r_acc;
      ++outputs;

      if (!grad) continue;
      // d/dz of the surrogate: A * rho * (onehot - p) on the unclipped branch
      const double coef = clip_active ? 0.0 : w * A * rho;
      dz.assign(tr.logp.size(), 0.0);
      for (std::size_t t = o.seq.split; t < o.seq.tokens.size(); ++t) {
        const std::size_t i = t - o.seq.split;
        const auto lp = tr.logp_at(t, V);
        const auto lq = tr_ref.logp_at(t, V);
        double* row = dz.data() + i * uv;
        for (std::size_t v = 0; v < uv; ++v) {
          const double p = std::exp(lp[v]);
          row[v] = -coef * p - w * config.beta * p * (lp[v] - lq[v] - kl_at[i]);
        }
        row[static_cast<std::size_t>(o.seq.tokens[t])] += coef;
      }
      policy::accumulate_grad(current, o.seq, tr, dz, *grad);
    }
  }
  const double n = static_cast<double>(outputs);
  stats.mean_ratio = ratio_sum / n;
  stats.clip_fraction = static_cast<double>(clipped) / n;
  stats.kl = kl_sum / n;
  stats.mean_reward = reward_sum / n;
  stats.accuracy = static_cast<double>(correct) / n;
  return stats;
}

RolloutGroup rollout(const policy::PolicyParams& old_policy, const toy::ToyQuery& query,
                     const GrpoConfig& config, std::uint64_t seed) {
  RolloutGroup group;
  group.query_id = query.id;
  group.truth = query.truth;
  const auto prompt = toy::encode_prompt(query.cues);
  std::vector<double> rewards;
  for (int i = 0; i < config.G; ++i) {
    auto s = policy::sample(old_policy, prompt, toy::kMaxNewTokens, config.temperature,
                            derive_seed(seed, static_cast<std::uint64_t>(i)), toy::kEos);
    Rollout r;
    // log-prob under the old policy itself, independent of the sampling temperature
    r.old_logp = config.temperature == 1.0 ? s.logp : policy::log_prob(old_policy, s.seq);
    r.seq = std::move(s.seq);
    const std::span<const int> cont(r.seq.tokens.data() + r.seq.split, r.seq.target_count());
    r.reward = reward(cont, query.truth, config.mu, config.nu);
    rewards.push_back(r.reward.combined);
    group.outputs.push_back(std::move(r));
  }
  const auto adv = group_advantages(rewards, config.std_normalize);
  for (std::size_t i = 0; i < adv.size(); ++i) group.outputs[i].advantage = adv[i];
  return group;
}

RlResult train_rl(policy::PolicyParams start, std::span<const toy::ToyQuery> queries,
                  const GrpoConfig& config, const Logger& log) {
  config.validate();
  if (queries.empty()) throw DomainError("train_rl: no queries");
  RlResult result;
  const policy::PolicyParams reference = start;
  policy::PolicyParams current = std::move(start);
  policy::PolicyParams old = current;
  policy::Optimizer opt(config.optimizer, config.lr, current.size());

  std::vector<std::size_t> order(queries.size());
  std::size_t cursor = order.size();
  int epoch = 0;
  bool epoch_all_flat = true;
  std::vector<double> grad;
  std::vector<RolloutGroup> groups;

  auto close_epoch = [&] {
    if (epoch > 0 && epoch_all_flat) {
      ++result.collapse_warnings;
      if (log) log(fmt::format("grpo: reward collapse in epoch {} (every group has zero variance)", epoch));
    }
  };
  auto reshuffle = [&] {
    close_epoch();
    ++epoch;
    epoch_all_flat = true;
    std::iota(order.begin(), order.end(), 0);
    const auto s = derive_seed(derive_seed(config.seed, "order"), static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(unit_interval(derive_seed(s, i)) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    cursor = 0;
  };

  for (int u = 1; u <= config.updates; ++u) {
    if ((u - 1) % config.sync_every == 0) old = current;
    groups.clear();
    const auto update_seed = derive_seed(derive_seed(config.seed, "rollout"), static_cast<std::uint64_t>(u));
    for (int k = 0; k < config.queries_per_update; ++k) {
      if (cursor >= order.size()) reshuffle();
      const std::size_t qi = order[cursor++];
      groups.push_back(rollout(old, queries[qi], config, derive_seed(update_seed, qi)));
      const auto& outs = groups.back().outputs;
      const bool flat = std::all_of(outs.begin(), outs.end(), [&](const Rollout& r) {
        return r.reward.combined == outs.front().reward.combined;
      });
      epoch_all_flat = epoch_all_flat && flat;
    }
    auto stats = grpo_objective_and_grad(current, reference, groups, config, &grad);
    stats.update = u;
    for (double& g : grad) g = -g;  // ascend the objective
    opt.descend(current.theta(), grad);
    if (!current.finite()) {
      throw policy::TrainingDiverged(fmt::format("GRPO diverged at update {}", u));
    }
    result.stats.push_back(stats);
  }
  if (cursor == order.size()) close_epoch();
  result.params = std::move(current);
  return result;
}

std::string stats_csv(const std::vector<UpdateStats>& stats) {
  std::string out = "update,reward,kl,clip_fraction,objective,mean_ratio,max_ratio,accuracy\n";
  for (const auto& s : stats) {
    out += fmt::format("{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g}\n", s.update,
                       s.mean_reward, s.kl, s.clip_fraction, s.objective, s.mean_ratio,
                       s.max_ratio, s.accuracy);
  }
  return out;
}

}  // namespace mddt::grpo
