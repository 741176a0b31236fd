#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mddt/common.hpp"

namespace mddt {

enum class FeatureKind { Continuous, Categorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Continuous;
  std::vector<std::string> categories;  // categorical only
  std::string unit;
  int decimals = 0;  // display and storage precision, continuous only
  double min_value = 0.0;
  double max_value = 0.0;
  std::string description;
};

inline constexpr std::size_t kFeatureCount = 22;

/// The fixed 22-feature registry, in CSV column order.
const std::vector<FeatureSpec>& feature_registry();

/// Index of a feature in the registry. Throws DomainError for unknown names.
std::size_t feature_index(std::string_view name);

using FeatureValue = std::variant<double, std::string>;

struct ParticipantRecord {
  std::string id;
  std::array<std::optional<FeatureValue>, kFeatureCount> values{};
  Label label = Label::HC;
  // Generator-side flag for anxiety/bipolar comorbidity; not a feature and
  // not persisted.
  bool comorbid = false;

  const std::optional<FeatureValue>& get(std::string_view name) const;
  void set(std::string_view name, std::optional<FeatureValue> value);

  std::optional<double> number(std::string_view name) const;
  std::optional<std::string> category(std::string_view name) const;

  std::size_t missing_count() const;
  double missing_fraction() const {
    return static_cast<double>(missing_count()) / kFeatureCount;
  }

  bool operator==(const ParticipantRecord&) const = default;
};

/// Checks registry membership, finiteness, domain bounds and category
/// membership. Throws DomainError naming the offending feature.
void validate(const ParticipantRecord& record);

struct GeneratorOptions {
  // When set, a share of generated participants carry an anxiety/bipolar
  // comorbidity and are dropped by exclude_comorbid(). The default cohort
  // never contains them.
  bool include_comorbid = false;
  double comorbid_rate = 0.05;
};

/// Synthetic cohort whose per-class marginals follow the published baseline
/// table. Pure function of its arguments; record i draws from its own seed
/// stream so generation can be split across workers.
std::vector<ParticipantRecord> generate_cohort(std::size_t n, double prevalence,
                                               std::uint64_t seed,
                                               const GeneratorOptions& options = {});

std::vector<ParticipantRecord> exclude_comorbid(
    std::span<const ParticipantRecord> records);

struct MissingFilterResult {
  std::vector<ParticipantRecord> kept;
  std::vector<ParticipantRecord> excluded;
};

inline constexpr double kDefaultMissingThreshold = 0.30;

/// Excludes a record iff missing_count / 22 > threshold (strictly).
MissingFilterResult filter_missing(std::span<const ParticipantRecord> records,
                                   double threshold = kDefaultMissingThreshold);

// ---- summaries -------------------------------------------------------------

struct Quartiles {
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
};

/// Inclusive linear-interpolation quantile (h = (n - 1) p) over sorted data.
double quantile_sorted(std::span<const double> sorted, double p);
Quartiles quartiles(std::vector<double> values);

struct ClassFeatureSummary {
  std::size_t observed = 0;
  double missing_fraction = 0.0;
  std::optional<Quartiles> quartiles;  // continuous
  std::vector<double> proportions;     // categorical: categories..., missing
};

struct FeatureSummary {
  std::string name;
  FeatureKind kind = FeatureKind::Continuous;
  ClassFeatureSummary hc;
  ClassFeatureSummary mdd;
  std::string test;                // "rank_sum" or "chi_square"
  std::optional<double> p_value;   // nullopt when unavailable
  bool degenerate = false;         // no variation to test
};

struct CohortSummary {
  std::size_t n_total = 0;
  std::size_t n_mdd = 0;
  std::size_t n_hc = 0;
  std::vector<FeatureSummary> features;
};

CohortSummary summarize(std::span<const ParticipantRecord> records);

// ---- persistence -----------------------------------------------------------

/// CSV with an `id` column, the registry columns and `label`. Missing values
/// are empty fields.
std::string to_csv(std::span<const ParticipantRecord> records);
std::vector<ParticipantRecord> from_csv(std::string_view text);

nlohmann::json data_dictionary();
nlohmann::json to_json(const CohortSummary& summary);

/// Formats a continuous value at the feature's storage precision.
std::string format_value(const FeatureSpec& spec, double value);

}  // namespace mddt
