#include "mddt/policy.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "mddt/common.hpp"

namespace mddt::policy {

namespace {

constexpr double kEmbeddingScale = 1.0;

std::size_t uz(int v) { return static_cast<std::size_t>(v); }

void check_shape(const PolicyShape& s) {
  if (s.vocab < 2 || s.dim < 1 || s.context < 2) {
    throw DomainError(fmt::format("policy shape V={} D={} context={} is invalid", s.vocab, s.dim,
                                  s.context));
  }
}

// Box-Muller over the splitmix stream, so initial weights do not depend on the
// standard library's distribution implementation.
double standard_normal(std::uint64_t seed, std::uint64_t index) {
  const double u1 = 1.0 - unit_interval(derive_seed(seed, 2 * index));
  const double u2 = unit_interval(derive_seed(seed, 2 * index + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void log_softmax(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (double& v : z) v -= lse;
}

// logits for the next token given the running context sum over `count` tokens.
void logits_into(const PolicyParams& p, int prev, std::span<const double> h, std::span<double> out) {
  const int V = p.shape().vocab;
  const int D = p.shape().dim;
  const auto& th = p.theta();
  const double* head = th.data() + p.head_offset();
  const double* bias = th.data() + p.bias_offset();
  const double* bigram = th.data() + p.bigram_offset() + uz(prev) * uz(V);
  for (int v = 0; v < V; ++v) {
    double z = bigram[v] + bias[v];
    const double* row = head + uz(v) * uz(D);
    for (int d = 0; d < D; ++d) z += row[d] * h[uz(d)];
    out[uz(v)] = z;
  }
}

}  // namespace

PolicyParams::PolicyParams(PolicyShape shape, std::uint64_t seed) : shape_(shape), seed_(seed) {
  check_shape(shape);
  theta_.assign(2 * uz(shape.vocab) * uz(shape.dim) + uz(shape.vocab) +
                    uz(shape.vocab) * uz(shape.vocab),
                0.0);
}

PolicyParams PolicyParams::uniform(PolicyShape shape, std::uint64_t seed) {
  PolicyParams p(shape, seed);
  for (std::size_t i = 0; i < p.head_offset(); ++i) p.theta_[i] = kEmbeddingScale * standard_normal(seed, i);
  return p;
}

bool PolicyParams::finite() const {
  return std::all_of(theta_.begin(), theta_.end(), [](double v) { return std::isfinite(v); });
}

void validate(const TokenSeq& seq, const PolicyShape& shape) {
  if (seq.split < 1 || seq.split > seq.tokens.size()) {
    throw DomainError(fmt::format("token sequence split {} outside [1, {}]", seq.split,
                                  seq.tokens.size()));
  }
  if (seq.tokens.size() > uz(shape.context)) {
    throw DomainError(fmt::format("token sequence of length {} exceeds context {}",
                                  seq.tokens.size(), shape.context));
  }
  for (int t : seq.tokens) {
    if (t < 0 || t >= shape.vocab) {
      throw DomainError(fmt::format("token id {} outside vocabulary of size {}", t, shape.vocab));
    }
  }
}

Trace trace(const PolicyParams& params, const TokenSeq& seq) {
  validate(seq, params.shape());
  const int V = params.shape().vocab;
  const int D = params.shape().dim;
  const double* emb = params.theta().data() + params.emb_offset();
  Trace tr;
  tr.from = seq.split;
  const std::size_t n = seq.target_count();
  tr.context.assign(n * uz(D), 0.0);
  tr.logp.assign(n * uz(V), 0.0);
  std::vector<double> sum(uz(D), 0.0);
  for (std::size_t t = 1; t < seq.tokens.size(); ++t) {
    const double* e = emb + uz(seq.tokens[t - 1]) * uz(D);
    for (int d = 0; d < D; ++d) sum[uz(d)] += e[d];
    if (t < seq.split) continue;
    const std::size_t i = t - seq.split;
    std::span<double> h(tr.context.data() + i * uz(D), uz(D));
    for (int d = 0; d < D; ++d) h[uz(d)] = sum[uz(d)] / static_cast<double>(t);
    std::span<double> z(tr.logp.data() + i * uz(V), uz(V));
    logits_into(params, seq.tokens[t - 1], h, z);
    log_softmax(z);
  }
  return tr;
}

void accumulate_grad(const PolicyParams& params, const TokenSeq& seq, const Trace& tr,
                     std::span<const double> dlogits, std::vector<double>& grad) {
  const int V = params.shape().vocab;
  const int D = params.shape().dim;
  const std::size_t L = seq.tokens.size();
  if (dlogits.size() != seq.target_count() * uz(V)) {
    throw DomainError("accumulate_grad: gradient rows do not match scored positions");
  }
  if (grad.size() != params.size()) grad.assign(params.size(), 0.0);
  const double* head = params.theta().data() + params.head_offset();
  double* g_emb = grad.data() + params.emb_offset();
  double* g_head = grad.data() + params.head_offset();
  double* g_bias = grad.data() + params.bias_offset();
  double* g_bigram = grad.data() + params.bigram_offset();

  // u[t] = d/dh_t scaled by 1/t; the embedding of x_j receives sum_{t>j} u[t]
  std::vector<double> u(L * uz(D), 0.0);
  for (std::size_t t = seq.split; t < L; ++t) {
    const std::size_t i = t - seq.split;
    const double* g = dlogits.data() + i * uz(V);
    const double* h = tr.context.data() + i * uz(D);
    double* bg = g_bigram + uz(seq.tokens[t - 1]) * uz(V);
    double* ut = u.data() + t * uz(D);
    for (int v = 0; v < V; ++v) {
      const double gv = g[v];
      if (gv == 0.0) continue;
      g_bias[v] += gv;
      bg[v] += gv;
      double* gh = g_head + uz(v) * uz(D);
      const double* hr = head + uz(v) * uz(D);
      for (int d = 0; d < D; ++d) {
        gh[d] += gv * h[d];
        ut[d] += gv * hr[d];
      }
    }
    for (int d = 0; d < D; ++d) ut[d] /= static_cast<double>(t);
  }
  std::vector<double> suffix(uz(D), 0.0);
  for (std::size_t j = L - 1; j-- > 0;) {
    const double* ut = u.data() + (j + 1) * uz(D);
    for (int d = 0; d < D; ++d) suffix[uz(d)] += ut[d];
    double* ge = g_emb + uz(seq.tokens[j]) * uz(D);
    for (int d = 0; d < D; ++d) ge[d] += suffix[uz(d)];
  }
}

double log_prob(const PolicyParams& params, const TokenSeq& seq) {
  const auto tr = trace(params, seq);
  const int V = params.shape().vocab;
  double total = 0.0;
  for (std::size_t t = seq.split; t < seq.tokens.size(); ++t) {
    total += tr.logp_at(t, V)[uz(seq.tokens[t])];
  }
  return total;
}

std::vector<double> next_token_logp(const PolicyParams& params, std::span<const int> prefix) {
  TokenSeq seq{std::vector<int>(prefix.begin(), prefix.end()), prefix.size()};
  seq.tokens.push_back(0);
  const auto tr = trace(params, seq);
  return tr.logp;
}

Sampled sample(const PolicyParams& params, std::span<const int> prompt, int max_new,
               double temperature, std::uint64_t seed, std::optional<int> stop_token) {
  if (temperature < 0.0) throw DomainError("sample: temperature must be >= 0");
  if (prompt.empty()) throw DomainError("sample: empty prompt");
  const int V = params.shape().vocab;
  Sampled out;
  out.seq.tokens.assign(prompt.begin(), prompt.end());
  out.seq.split = prompt.size();
  for (int k = 0; k < max_new; ++k) {
    if (out.seq.tokens.size() >= uz(params.shape().context)) break;
    const auto logp = next_token_logp(params, out.seq.tokens);
    int pick = 0;
    if (temperature == 0.0) {
      pick = static_cast<int>(std::max_element(logp.begin(), logp.end()) - logp.begin());
    } else {
      std::vector<double> w(uz(V));
      const double m = *std::max_element(logp.begin(), logp.end());
      double total = 0.0;
      for (int v = 0; v < V; ++v) total += w[uz(v)] = std::exp((logp[uz(v)] - m) / temperature);
      double r = unit_interval(derive_seed(seed, static_cast<std::uint64_t>(k))) * total;
      pick = V - 1;
      for (int v = 0; v < V; ++v) {
        if (r < w[uz(v)]) {
          pick = v;
          break;
        }
        r -= w[uz(v)];
      }
    }
    out.seq.tokens.push_back(pick);
    out.token_logp.push_back(logp[uz(pick)]);
    out.logp += logp[uz(pick)];
    if (stop_token && pick == *stop_token) break;
  }
  return out;
}

// ---- SFT --------------------------------------------------------------------

LossReport sft_loss_and_grad(const PolicyParams& params, std::span<const TokenSeq> batch,
                             std::vector<double>* grad) {
  if (batch.empty()) throw DomainError("sft_loss_and_grad: empty batch");
  const int V = params.shape().vocab;
  LossReport report;
  if (grad) grad->assign(params.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> dz;
  for (const auto& seq : batch) {
    const auto tr = trace(params, seq);
    dz.assign(tr.logp.size(), 0.0);
    for (std::size_t t = seq.split; t < seq.tokens.size(); ++t) {
      const auto lp = tr.logp_at(t, V);
      report.total_nll -= lp[uz(seq.tokens[t])];
      double* row = dz.data() + (t - seq.split) * uz(V);
      for (int v = 0; v < V; ++v) row[v] = scale * std::exp(lp[uz(v)]);
      row[seq.tokens[t]] -= scale;
    }
    report.token_count += seq.target_count();
    if (grad) accumulate_grad(params, seq, tr, dz, *grad);
  }
  report.loss = report.total_nll * scale;
  report.per_token_nll =
      report.token_count == 0 ? 0.0 : report.total_nll / static_cast<double>(report.token_count);
  if (grad) {
    double sq = 0.0;
    for (double g : *grad) sq += g * g;
    report.grad_norm = std::sqrt(sq);
  }
  return report;
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "sgd") return OptimizerKind::Sgd;
  if (text == "adam") return OptimizerKind::Adam;
  throw DomainError(fmt::format("unknown optimizer '{}'", text));
}

Optimizer::Optimizer(OptimizerKind kind, double lr, std::size_t size) : kind_(kind), lr_(lr) {
  if (lr < 0.0) throw DomainError("learning rate must be >= 0");
  if (kind == OptimizerKind::Adam) {
    m_.assign(size, 0.0);
    v_.assign(size, 0.0);
  }
}

void Optimizer::descend(std::vector<double>& theta, const std::vector<double>& grad) {
  if (lr_ == 0.0) return;
  if (kind_ == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr_ * grad[i];
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++step_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = b1 * m_[i] + (1 - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1 - b2) * grad[i] * grad[i];
    theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

SftResult train_sft(PolicyParams params, std::span<const TokenSeq> corpus, const SftConfig& config) {
  if (corpus.empty()) throw DomainError("train_sft: empty corpus");
  if (config.epochs < 0) throw DomainError("train_sft: epochs must be >= 0");
  if (config.batch_size < 1) throw DomainError("train_sft: batch_size must be >= 1");
  for (const auto& seq : corpus) validate(seq, params.shape());
  SftResult result;
  result.effective_batch_size = static_cast<int>(std::min<std::size_t>(uz(config.batch_size), corpus.size()));
  Optimizer opt(config.optimizer, config.lr, params.size());
  std::vector<std::size_t> order(corpus.size());
  std::vector<double> grad;
  std::vector<TokenSeq> batch;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    // Fisher-Yates over the splitmix stream
    const auto epoch_seed = derive_seed(config.seed, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(unit_interval(derive_seed(epoch_seed, i)) *
                                              static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    EpochLoss row{epoch, 0.0, 0.0};
    std::size_t steps = 0;
    std::size_t tokens = 0;
    double nll = 0.0;
    for (std::size_t start = 0; start < order.size(); start += uz(result.effective_batch_size)) {
      batch.clear();
      const auto end = std::min(order.size(), start + uz(result.effective_batch_size));
      for (std::size_t k = start; k < end; ++k) batch.push_back(corpus[order[k]]);
      const auto report = sft_loss_and_grad(params, batch, &grad);
      if (!std::isfinite(report.loss) || !std::isfinite(report.grad_norm)) {
        throw TrainingDiverged(fmt::format(
            "SFT diverged at epoch {} step {}: loss {} grad norm {} (lr {})", epoch, steps + 1,
            report.loss, report.grad_norm, config.lr));
      }
      opt.descend(params.theta(), grad);
      row.loss += report.loss;
      nll += report.total_nll;
      tokens += report.token_count;
      ++steps;
    }
    row.loss /= static_cast<double>(steps);
    row.per_token_nll = tokens == 0 ? 0.0 : nll / static_cast<double>(tokens);
    result.curve.push_back(row);
  }
  if (!params.finite()) throw TrainingDiverged("SFT produced non-finite parameters");
  result.params = std::move(params);
  return result;
}

std::string loss_curve_csv(const std::vector<EpochLoss>& curve) {
  std::string out = "epoch,loss,per_token_nll\n";
  for (const auto& r : curve) out += fmt::format("{},{:.10g},{:.10g}\n", r.epoch, r.loss, r.per_token_nll);
  return out;
}

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'D', 'D', 'T', 'P', 'O', 'L', 'Y'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DomainError("checkpoint truncated");
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const PolicyParams& params) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::int32_t>(out, params.shape().vocab);
  put<std::int32_t>(out, params.shape().dim);
  put<std::int32_t>(out, params.shape().context);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(kLayout.size()));
  out.write(kLayout.data(), static_cast<std::streamsize>(kLayout.size()));
  put<std::uint64_t>(out, params.seed());
  put<std::uint64_t>(out, params.size());
  out.write(reinterpret_cast<const char*>(params.theta().data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
}

PolicyParams read_checkpoint(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DomainError("not a policy checkpoint");
  }
  if (const auto v = get<std::uint32_t>(in); v != kCheckpointVersion) {
    throw DomainError(fmt::format("unsupported checkpoint version {}", v));
  }
  PolicyShape shape;
  shape.vocab = get<std::int32_t>(in);
  shape.dim = get<std::int32_t>(in);
  shape.context = get<std::int32_t>(in);
  const auto layout_size = get<std::uint32_t>(in);
  if (layout_size > 1024) throw DomainError("checkpoint layout header corrupt");
  std::string layout(layout_size, '\0');
  in.read(layout.data(), layout_size);
  if (layout != kLayout) throw DomainError("checkpoint layout '" + layout + "' not supported");
  const auto seed = get<std::uint64_t>(in);
  PolicyParams params(shape, seed);
  if (get<std::uint64_t>(in) != params.size()) throw DomainError("checkpoint size mismatch");
  in.read(reinterpret_cast<char*>(params.theta().data()),
          static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!in) throw DomainError("checkpoint truncated");
  if (!params.finite()) throw DomainError("checkpoint holds non-finite parameters");
  return params;
}

void save_checkpoint(const std::string& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_checkpoint(out, params);
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_checkpoint(in);
}

}  // namespace mddt::policy
