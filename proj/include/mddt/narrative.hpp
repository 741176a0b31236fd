#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mddt/cohort.hpp"
#include "mddt/common.hpp"

namespace mddt {

/// Versioned `key = value` text template. Lines starting with '#' are
/// comments.
class TemplateSet {
 public:
  static TemplateSet parse(std::string_view text);
  static const TemplateSet& builtin_narrative();
  static const TemplateSet& builtin_prompts();

  const std::string& at(std::string_view key) const;
  const std::string* find(std::string_view key) const;
  /// Values of `<prefix>.1`, `<prefix>.2`, ... up to the first gap.
  std::vector<std::string> sequence(std::string_view prefix) const;
  const std::string& version() const { return at("version"); }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
};

/// Byte range within NarrativeDoc::text.
struct Span {
  std::size_t begin = 0;
  std::size_t length = 0;
  bool operator==(const Span&) const = default;
};

struct NarrativeDoc {
  std::string text;
  std::map<std::string, Span, std::less<>> provenance;

  std::optional<std::string_view> span_text(std::string_view feature) const;
};

class NarrativeSerializer {
 public:
  explicit NarrativeSerializer(
      const TemplateSet& templates = TemplateSet::builtin_narrative());

  /// Deterministic rendering. Continuous provenance spans cover the formatted
  /// number; categorical spans cover the whole category phrase. Throws
  /// DomainError naming the feature for out-of-domain values.
  NarrativeDoc serialize(const ParticipantRecord& record) const;

  /// Reads a feature back from its provenance span, units stripped.
  std::optional<FeatureValue> extract(const NarrativeDoc& doc,
                                      std::string_view feature) const;

  const TemplateSet& templates() const { return templates_; }

 private:
  const TemplateSet& templates_;
};

NarrativeDoc serialize(const ParticipantRecord& record);

/// "six" for 6 and so on, for 0..24.
std::string number_word(int value);
std::optional<int> parse_number_word(std::string_view word);

// ---- prompts and question-answer pairs -------------------------------------

enum class PromptTier { Direct, SimpleCot, ComplexCot };

std::string_view to_string(PromptTier tier);
std::optional<PromptTier> parse_tier(std::string_view text);
inline constexpr std::array<PromptTier, 3> kAllTiers = {
    PromptTier::Direct, PromptTier::SimpleCot, PromptTier::ComplexCot};

struct PromptTemplate {
  PromptTier tier = PromptTier::Direct;
  std::string instruction_text;
  std::vector<std::string> step_scaffold;

  /// Instruction followed by one "Step k: ..." line per scaffold stage.
  std::string render() const;
};

PromptTemplate prompt_template(
    PromptTier tier, const TemplateSet& templates = TemplateSet::builtin_prompts());

/// Fixed diagnostic question appended to every narrative.
const std::string& task_instruction();

struct QaPair {
  std::string id;
  PromptTemplate prompt;
  NarrativeDoc narrative;  // provenance is empty for pairs loaded from JSONL
  std::string question;    // narrative text + task instruction
  Label answer = Label::HC;
};

QaPair make_qa(const ParticipantRecord& record, PromptTier tier);

/// JSONL record {id, tier, prompt, question, answer}.
nlohmann::json to_json(const QaPair& qa);
QaPair qa_from_json(const nlohmann::json& j);

// ---- clinical cues ---------------------------------------------------------

// Binary risk indicators shared by the mock oracles (which read them from the
// narrative text) and the toy policy task (which reads them from records).
inline constexpr std::size_t kCueCount = 8;
using CueVector = std::array<bool, kCueCount>;

const std::array<std::string_view, kCueCount>& cue_names();
CueVector cues_from_record(const ParticipantRecord& record);
CueVector cues_from_text(std::string_view narrative);

}  // namespace mddt
