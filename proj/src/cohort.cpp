#include "mddt/cohort.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

#include "mddt/stats.hpp"

namespace mddt {

namespace {

const std::vector<std::string> kSatisfaction = {
    "very_satisfied", "moderately_satisfied", "moderately_unsatisfied",
    "very_unsatisfied"};

FeatureSpec continuous(std::string name, std::string unit, int decimals, double lo,
                       double hi, std::string description) {
  FeatureSpec spec;
  spec.name = std::move(name);
  spec.kind = FeatureKind::Continuous;
  spec.unit = std::move(unit);
  spec.decimals = decimals;
  spec.min_value = lo;
  spec.max_value = hi;
  spec.description = std::move(description);
  return spec;
}

FeatureSpec categorical(std::string name, std::vector<std::string> categories,
                        std::string description) {
  FeatureSpec spec;
  spec.name = std::move(name);
  spec.kind = FeatureKind::Categorical;
  spec.categories = std::move(categories);
  spec.description = std::move(description);
  return spec;
}

std::vector<FeatureSpec> build_registry() {
  return {
      continuous("age", "years", 0, 18, 100, "age at assessment"),
      categorical("sex", {"female", "male"}, "sex"),
      categorical("education",
                  {"none", "cses", "o_levels", "a_levels", "nvq_hnd_hnc",
                   "professional", "degree"},
                  "highest qualification; low = none, high = degree, "
                  "intermediate otherwise"),
      continuous("income", "GBP/year", 0, 0, 10'000'000,
                 "average total household income before tax"),
      categorical("employment", {"employed", "not_employed", "other"},
                  "current employment status"),
      continuous("working_week", "hours", 0, 0, 100,
                 "length of working week; absent when not employed"),
      continuous("bmi", "kg/m²", 1, 10, 80, "body mass index"),
      continuous("sleep_duration", "hours", 0, 1, 23, "sleep duration per night"),
      categorical("sleeplessness", {"usually", "sometimes", "never"},
                  "sleeplessness / insomnia"),
      categorical("alcohol_frequency",
                  {"daily", "three_four_weekly", "once_twice_weekly", "monthly",
                   "special_occasions", "never"},
                  "alcohol intake frequency; usually = daily or 3-4/week, "
                  "sometimes = weekly to special occasions"),
      categorical("self_harm", {"yes", "no", "prefer_not_to_answer"},
                  "ever self-harmed"),
      categorical("suicidal_thoughts", {"yes", "no"},
                  "ever thought that life was not worth living"),
      categorical("happiness",
                  {"very_happy", "moderately_happy", "moderately_unhappy",
                   "very_unhappy"},
                  "perceived general happiness"),
      categorical("work_satisfaction", kSatisfaction, "work/job satisfaction"),
      categorical("health_satisfaction", kSatisfaction, "health satisfaction"),
      categorical("family_satisfaction", kSatisfaction,
                  "family relationship satisfaction"),
      categorical("finance_satisfaction", kSatisfaction,
                  "financial situation satisfaction"),
      categorical("long_standing_illness", {"yes", "no"},
                  "long-standing illness, disability or infirmity"),
      continuous("hdl", "mmol/L", 2, 0.1, 10, "HDL cholesterol (raw units)"),
      continuous("ldl", "mmol/L", 2, 0.1, 15, "clinical LDL cholesterol (raw units)"),
      continuous("total_cholesterol", "mmol/L", 2, 0.5, 20,
                 "total cholesterol (raw units)"),
      continuous("triglycerides", "mmol/L", 2, 0.1, 20, "triglycerides (raw units)"),
  };
}

// Shifted log-normal X = shift + orient * exp(mu + orient * sigma * z) matched
// to three quartiles; falls back to a normal when the quartiles are symmetric.
class QuartileMatched {
 public:
  QuartileMatched(double q25, double q50, double q75) {
    constexpr double kZ75 = 0.6744897501960817;
    const double skew = q75 + q25 - 2.0 * q50;
    if (std::abs(skew) < 1e-9 * (q75 - q25)) {
      normal_ = true;
      mu_ = q50;
      sigma_ = (q75 - q25) / (2.0 * kZ75);
      return;
    }
    orient_ = skew > 0 ? 1.0 : -1.0;
    // Reflect left-skewed targets so the log-normal fit is always right-skewed.
    const double a = orient_ > 0 ? q25 : -q75;
    const double m = orient_ > 0 ? q50 : -q50;
    const double b = orient_ > 0 ? q75 : -q25;
    shift_ = (a * b - m * m) / (a + b - 2.0 * m);
    mu_ = std::log(m - shift_);
    sigma_ = std::log((b - shift_) / (m - shift_)) / kZ75;
  }

  double operator()(double z) const {
    if (normal_) return mu_ + sigma_ * z;
    return orient_ * (shift_ + std::exp(mu_ + sigma_ * z));
  }

 private:
  bool normal_ = false;
  double orient_ = 1.0;
  double shift_ = 0.0;
  double mu_ = 0.0;
  double sigma_ = 1.0;
};

struct ContinuousTarget {
  const char* name;
  double hc[3];
  double mdd[3];
  double missing_hc;
  double missing_mdd;
  double lo;
  double hi;
};

// Age, BMI and sleep duration follow the published baseline table. Lipids use
// typical raw mmol/L quartiles (the published standardized columns are not
// usable as quartiles). Working week is a declared default.
constexpr ContinuousTarget kContinuous[] = {
    {"age", {53, 61, 66}, {50, 56, 63}, 0.0, 0.0, 40, 69},
    {"bmi", {24.29, 26.36, 30.18}, {24.13, 25.97, 30.30}, 0.005, 0.005, 15, 60},
    {"sleep_duration", {6.2, 7.1, 7.9}, {5.9, 7.0, 8.1}, 0.005, 0.005, 3, 12},
    {"working_week", {30, 38, 45}, {28, 37, 44}, 0.0, 0.0, 4, 80},
    {"hdl", {1.17, 1.40, 1.68}, {1.16, 1.39, 1.68}, 0.04, 0.04, 0.3, 4.5},
    {"ldl", {2.93, 3.50, 4.09}, {2.92, 3.50, 4.08}, 0.04, 0.04, 0.5, 9.0},
    {"total_cholesterol", {4.91, 5.65, 6.41}, {4.90, 5.64, 6.40}, 0.04, 0.04, 2.0, 12.0},
    {"triglycerides", {1.06, 1.50, 2.16}, {1.06, 1.50, 2.15}, 0.04, 0.04, 0.3, 10.0},
};

struct CategoricalTarget {
  const char* name;
  // category proportions followed by the missing share, in percent
  std::vector<double> hc;
  std::vector<double> mdd;
};

std::vector<double> split(double total, std::initializer_list<double> shares) {
  std::vector<double> out;
  for (double s : shares) out.push_back(total * s);
  return out;
}

std::vector<double> concat(std::initializer_list<std::vector<double>> parts) {
  std::vector<double> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

const std::vector<CategoricalTarget>& categorical_targets() {
  // Education, alcohol: the published three-level groups are split into the
  // finer registry categories with fixed declared shares.
  static const std::vector<CategoricalTarget> targets = {
      {"sex", {53.61, 46.39, 0.0}, {59.83, 40.17, 0.0}},
      {"education",
       concat({{19.31}, split(45.08, {0.10, 0.40, 0.25, 0.15, 0.10}), {33.19, 2.42}}),
       concat({{18.08}, split(45.06, {0.10, 0.40, 0.25, 0.15, 0.10}), {34.68, 2.18}})},
      {"employment", {51.88, 44.96, 2.37, 0.79}, {49.36, 47.80, 2.01, 0.83}},
      {"sleeplessness", {27.96, 48.31, 23.40, 0.21}, {33.82, 47.83, 18.32, 0.03}},
      {"alcohol_frequency",
       concat({split(22.31, {0.45, 0.55}), split(67.50, {0.45, 0.25, 0.30}),
               {10.14, 0.05}}),
       concat({split(21.46, {0.45, 0.55}), split(68.71, {0.45, 0.25, 0.30}),
               {9.58, 0.25}})},
      {"self_harm", {1.49, 29.33, 0.12, 69.06}, {4.38, 59.03, 0.01, 36.58}},
      {"suicidal_thoughts", {8, 62, 30}, {40, 45, 15}},
      {"happiness", {30, 50, 6, 1, 13}, {12, 45, 20, 8, 15}},
      {"work_satisfaction", {25, 35, 5, 1, 34}, {15, 30, 12, 5, 38}},
      {"health_satisfaction", {20, 55, 10, 2, 13}, {10, 45, 22, 8, 15}},
      {"family_satisfaction", {40, 40, 5, 2, 13}, {25, 42, 13, 5, 15}},
      {"finance_satisfaction", {25, 50, 9, 3, 13}, {15, 45, 18, 7, 15}},
      {"long_standing_illness", {30, 68, 2}, {48, 50, 2}},
  };
  return targets;
}

// Household income bins: low < 18k, medium 18k-100k, high > 100k, missing.
constexpr double kIncomeHc[] = {17.24, 63.50, 4.89, 14.37};
constexpr double kIncomeMdd[] = {15.32, 62.95, 5.53, 16.31};

double round_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

std::size_t draw_index(std::mt19937_64& rng, const std::vector<double>& weights) {
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return dist(rng);
}

ParticipantRecord generate_one(std::size_t index, double prevalence,
                               std::uint64_t seed, const GeneratorOptions& options) {
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  ParticipantRecord record;
  record.id = fmt::format("P{:06d}", index + 1);
  record.label = unit(rng) < prevalence ? Label::MDD : Label::HC;
  const bool mdd = record.label == Label::MDD;

  for (const auto& target : categorical_targets()) {
    const auto& spec = feature_registry()[feature_index(target.name)];
    const std::size_t k = draw_index(rng, mdd ? target.mdd : target.hc);
    if (k < spec.categories.size()) record.set(target.name, spec.categories[k]);
  }

  for (const auto& target : kContinuous) {
    const auto& spec = feature_registry()[feature_index(target.name)];
    const double* q = mdd ? target.mdd : target.hc;
    const QuartileMatched dist(q[0], q[1], q[2]);
    const double z = normal(rng);
    const double missing_draw = unit(rng);
    if (missing_draw < (mdd ? target.missing_mdd : target.missing_hc)) continue;
    const double value = std::clamp(dist(z), target.lo, target.hi);
    record.set(target.name, round_to(value, spec.decimals));
  }
  // Working hours exist only for participants doing some kind of work.
  if (record.category("employment") != std::optional<std::string>("employed") &&
      record.category("employment") != std::optional<std::string>("other")) {
    record.set("working_week", std::nullopt);
  }

  const double* income = mdd ? kIncomeMdd : kIncomeHc;
  const std::size_t bin =
      draw_index(rng, std::vector<double>(income, income + 4));
  const std::pair<int, int> ranges[] = {{6, 17}, {18, 100}, {101, 250}};
  if (bin < 3) {
    std::uniform_int_distribution<int> thousands(ranges[bin].first,
                                                 ranges[bin].second);
    record.set("income", static_cast<double>(thousands(rng)) * 1000.0);
  }

  if (options.include_comorbid) record.comorbid = unit(rng) < options.comorbid_rate;
  return record;
}

}  // namespace

const std::vector<FeatureSpec>& feature_registry() {
  static const std::vector<FeatureSpec> registry = build_registry();
  return registry;
}

std::size_t feature_index(std::string_view name) {
  const auto& registry = feature_registry();
  for (std::size_t i = 0; i < registry.size(); ++i) {
    if (registry[i].name == name) return i;
  }
  throw DomainError(fmt::format("unknown feature '{}'", name));
}

const std::optional<FeatureValue>& ParticipantRecord::get(std::string_view name) const {
  return values[feature_index(name)];
}

void ParticipantRecord::set(std::string_view name, std::optional<FeatureValue> value) {
  values[feature_index(name)] = std::move(value);
}

std::optional<double> ParticipantRecord::number(std::string_view name) const {
  const auto& v = get(name);
  if (!v) return std::nullopt;
  if (const double* d = std::get_if<double>(&*v)) return *d;
  throw DomainError(fmt::format("feature '{}' is not continuous", name));
}

std::optional<std::string> ParticipantRecord::category(std::string_view name) const {
  const auto& v = get(name);
  if (!v) return std::nullopt;
  if (const std::string* s = std::get_if<std::string>(&*v)) return *s;
  throw DomainError(fmt::format("feature '{}' is not categorical", name));
}

std::size_t ParticipantRecord::missing_count() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](const auto& v) { return !v; }));
}

void validate(const ParticipantRecord& record) {
  const auto& registry = feature_registry();
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const auto& value = record.values[i];
    if (!value) continue;
    const auto& spec = registry[i];
    if (spec.kind == FeatureKind::Continuous) {
      const double* d = std::get_if<double>(&*value);
      if (d == nullptr) {
        throw DomainError(fmt::format("feature '{}' expects a number", spec.name));
      }
      if (!std::isfinite(*d) || *d < spec.min_value || *d > spec.max_value) {
        throw DomainError(fmt::format("feature '{}' value {} outside [{}, {}]",
                                      spec.name, *d, spec.min_value,
                                      spec.max_value));
      }
    } else {
      const std::string* s = std::get_if<std::string>(&*value);
      if (s == nullptr) {
        throw DomainError(fmt::format("feature '{}' expects a category", spec.name));
      }
      if (std::find(spec.categories.begin(), spec.categories.end(), *s) ==
          spec.categories.end()) {
        throw DomainError(
            fmt::format("feature '{}' has unknown category '{}'", spec.name, *s));
      }
    }
  }
}

std::vector<ParticipantRecord> generate_cohort(std::size_t n, double prevalence,
                                               std::uint64_t seed,
                                               const GeneratorOptions& options) {
  if (!(prevalence > 0.0 && prevalence < 1.0)) {
    throw DomainError(
        fmt::format("prevalence must lie in (0, 1), got {}", prevalence));
  }
  if (n < 100) {
    throw DomainError(fmt::format("cohort size must be at least 100, got {}", n));
  }
  std::vector<ParticipantRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    records.push_back(generate_one(i, prevalence, seed, options));
  }
  return records;
}

std::vector<ParticipantRecord> exclude_comorbid(
    std::span<const ParticipantRecord> records) {
  std::vector<ParticipantRecord> out;
  for (const auto& r : records) {
    if (!r.comorbid) out.push_back(r);
  }
  return out;
}

MissingFilterResult filter_missing(std::span<const ParticipantRecord> records,
                                   double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw DomainError(fmt::format("missing threshold must lie in (0, 1], got {}",
                                  threshold));
  }
  MissingFilterResult result;
  for (const auto& record : records) {
    // Compare counts rather than fractions so 0.30 * 22 boundaries are exact.
    const double limit = threshold * static_cast<double>(kFeatureCount);
    if (static_cast<double>(record.missing_count()) > limit + 1e-12) {
      result.excluded.push_back(record);
    } else {
      result.kept.push_back(record);
    }
  }
  return result;
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Quartiles quartiles(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return {quantile_sorted(values, 0.25), quantile_sorted(values, 0.5),
          quantile_sorted(values, 0.75)};
}

CohortSummary summarize(std::span<const ParticipantRecord> records) {
  CohortSummary summary;
  summary.n_total = records.size();
  for (const auto& r : records) {
    (r.label == Label::MDD ? summary.n_mdd : summary.n_hc) += 1;
  }
  const bool both_classes = summary.n_mdd > 0 && summary.n_hc > 0;
  const auto& registry = feature_registry();

  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    const auto& spec = registry[f];
    FeatureSummary fs;
    fs.name = spec.name;
    fs.kind = spec.kind;

    if (spec.kind == FeatureKind::Continuous) {
      fs.test = "rank_sum";
      std::vector<double> by_class[2];
      for (const auto& r : records) {
        if (r.values[f]) {
          by_class[r.label == Label::MDD].push_back(std::get<double>(*r.values[f]));
        }
      }
      auto fill = [](ClassFeatureSummary& out, const std::vector<double>& v,
                     std::size_t n) {
        out.observed = v.size();
        out.missing_fraction =
            n == 0 ? 0.0 : static_cast<double>(n - v.size()) / static_cast<double>(n);
        if (!v.empty()) out.quartiles = quartiles(v);
      };
      fill(fs.hc, by_class[0], summary.n_hc);
      fill(fs.mdd, by_class[1], summary.n_mdd);
      if (both_classes) {
        const auto test = stats::rank_sum_test(by_class[0], by_class[1]);
        fs.p_value = test.p_value;
        fs.degenerate = test.degenerate;
      }
    } else {
      fs.test = "chi_square";
      const std::size_t ncat = spec.categories.size();
      std::vector<std::vector<double>> table(2, std::vector<double>(ncat + 1, 0.0));
      for (const auto& r : records) {
        std::size_t col = ncat;
        if (r.values[f]) {
          const auto& s = std::get<std::string>(*r.values[f]);
          col = static_cast<std::size_t>(
              std::find(spec.categories.begin(), spec.categories.end(), s) -
              spec.categories.begin());
        }
        table[r.label == Label::MDD][col] += 1.0;
      }
      auto fill = [ncat](ClassFeatureSummary& out, const std::vector<double>& row,
                         std::size_t n) {
        out.proportions.assign(ncat + 1, 0.0);
        out.observed = n - static_cast<std::size_t>(row[ncat]);
        if (n == 0) return;
        for (std::size_t c = 0; c <= ncat; ++c) {
          out.proportions[c] = row[c] / static_cast<double>(n);
        }
        out.missing_fraction = out.proportions[ncat];
      };
      fill(fs.hc, table[0], summary.n_hc);
      fill(fs.mdd, table[1], summary.n_mdd);
      if (both_classes) {
        const auto test = stats::chi_square_test(table);
        fs.p_value = test.p_value;
        fs.degenerate = test.degenerate;
      }
    }
    summary.features.push_back(std::move(fs));
  }
  return summary;
}

std::string format_value(const FeatureSpec& spec, double value) {
  return fmt::format("{:.{}f}", value, spec.decimals);
}

std::string to_csv(std::span<const ParticipantRecord> records) {
  const auto& registry = feature_registry();
  std::string out = "id";
  for (const auto& spec : registry) out += "," + spec.name;
  out += ",label\n";
  for (const auto& r : records) {
    out += r.id;
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      out += ',';
      if (!r.values[f]) continue;
      if (registry[f].kind == FeatureKind::Continuous) {
        out += format_value(registry[f], std::get<double>(*r.values[f]));
      } else {
        out += std::get<std::string>(*r.values[f]);
      }
    }
    out += ',';
    out += to_string(r.label);
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace

std::vector<ParticipantRecord> from_csv(std::string_view text) {
  const auto& registry = feature_registry();
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw DomainError("cohort CSV is empty");
  const auto header = split_fields(line);
  if (header.size() != kFeatureCount + 2 || header.front() != "id" ||
      header.back() != "label") {
    throw DomainError("cohort CSV header does not match the feature registry");
  }
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    if (header[f + 1] != registry[f].name) {
      throw DomainError(fmt::format("cohort CSV column {} is '{}', expected '{}'",
                                    f + 2, header[f + 1], registry[f].name));
    }
  }
  std::vector<ParticipantRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw DomainError(fmt::format("cohort CSV line {}: expected {} fields, got {}",
                                    line_no, header.size(), fields.size()));
    }
    ParticipantRecord r;
    r.id = fields.front();
    const auto label = parse_label(fields.back());
    if (!label) {
      throw DomainError(fmt::format("cohort CSV line {}: bad label '{}'", line_no,
                                    fields.back()));
    }
    r.label = *label;
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      const std::string& field = fields[f + 1];
      if (field.empty()) continue;
      if (registry[f].kind == FeatureKind::Continuous) {
        double value = 0.0;
        const auto [ptr, ec] =
            std::from_chars(field.data(), field.data() + field.size(), value);
        if (ec != std::errc() || ptr != field.data() + field.size()) {
          throw DomainError(fmt::format("cohort CSV line {}: feature '{}' is not a number",
                                        line_no, registry[f].name));
        }
        r.values[f] = value;
      } else {
        r.values[f] = field;
      }
    }
    validate(r);
    records.push_back(std::move(r));
  }
  return records;
}

nlohmann::json data_dictionary() {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& spec : feature_registry()) {
    nlohmann::json item = {
        {"name", spec.name},
        {"kind", spec.kind == FeatureKind::Continuous ? "continuous" : "categorical"},
        {"unit", spec.unit},
        {"categories", spec.categories},
        {"description", spec.description},
    };
    if (spec.kind == FeatureKind::Continuous) {
      item["decimals"] = spec.decimals;
      item["domain"] = {spec.min_value, spec.max_value};
    }
    features.push_back(std::move(item));
  }
  return {
      {"version", "features-v1"},
      {"features", features},
      {"notes",
       {"lipid features are generated in raw mmol/L units; the published "
        "baseline table reports standardized lipid values whose quartiles are "
        "not ordered, so typical raw-unit quartiles are used instead",
        "working_week and the happiness/satisfaction/suicidal_thoughts "
        "marginals are declared defaults, not published values",
        "income is stored in GBP and drawn within the published low/medium/high "
        "bands"}},
  };
}

nlohmann::json to_json(const CohortSummary& summary) {
  auto class_json = [](const ClassFeatureSummary& c) {
    nlohmann::json j = {{"observed", c.observed},
                        {"missing_fraction", c.missing_fraction}};
    if (c.quartiles) {
      j["median"] = c.quartiles->median;
      j["iqr"] = {c.quartiles->q25, c.quartiles->q75};
    }
    if (!c.proportions.empty()) j["proportions"] = c.proportions;
    return j;
  };
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : summary.features) {
    nlohmann::json item = {
        {"name", f.name},
        {"kind", f.kind == FeatureKind::Continuous ? "continuous" : "categorical"},
        {"hc", class_json(f.hc)},
        {"mdd", class_json(f.mdd)},
        {"test", f.test},
        {"p_value", f.p_value ? nlohmann::json(*f.p_value) : nlohmann::json()},
        {"degenerate", f.degenerate},
    };
    const auto& spec = feature_registry()[feature_index(f.name)];
    if (!spec.categories.empty()) {
      auto labels = spec.categories;
      labels.push_back("missing");
      item["categories"] = labels;
    }
    features.push_back(std::move(item));
  }
  return {{"n_total", summary.n_total},
          {"n_mdd", summary.n_mdd},
          {"n_hc", summary.n_hc},
          {"features", features}};
}

}  // namespace mddt
