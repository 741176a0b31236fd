#include "mddt/narrative.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

namespace mddt {

namespace detail {
extern const std::string_view kNarrativeTemplateText;
extern const std::string_view kPromptTemplateText;
}  // namespace detail

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

struct Rendered {
  std::string text;
  std::vector<std::pair<std::string, Span>> spans;
};

using SlotResolver = std::function<Rendered(std::string_view)>;

// Expands {slot} placeholders, carrying provenance spans of nested expansions
// through to the final text.
Rendered expand(std::string_view tmpl, const SlotResolver& resolve) {
  Rendered out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.text.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) {
      throw DomainError(fmt::format("unterminated slot in template '{}'", tmpl));
    }
    out.text.append(tmpl.substr(pos, open - pos));
    Rendered inner = resolve(tmpl.substr(open + 1, close - open - 1));
    const std::size_t offset = out.text.size();
    for (auto& [name, span] : inner.spans) {
      out.spans.emplace_back(name, Span{span.begin + offset, span.length});
    }
    out.text += inner.text;
    pos = close + 1;
  }
  return out;
}

Rendered plain(std::string text) { return Rendered{std::move(text), {}}; }

Rendered tagged(std::string text, std::string feature) {
  Rendered r;
  r.spans.emplace_back(std::move(feature), Span{0, text.size()});
  r.text = std::move(text);
  return r;
}

std::string group_thousands(long long value) {
  std::string digits = std::to_string(value < 0 ? -value : value);
  std::string out;
  const std::size_t n = digits.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && (n - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return value < 0 ? "-" + out : out;
}

constexpr std::array<std::string_view, 25> kNumberWords = {
    "zero",      "one",       "two",      "three",        "four",
    "five",      "six",       "seven",    "eight",        "nine",
    "ten",       "eleven",    "twelve",   "thirteen",     "fourteen",
    "fifteen",   "sixteen",   "seventeen", "eighteen",    "nineteen",
    "twenty",    "twenty-one", "twenty-two", "twenty-three", "twenty-four"};

struct Pronouns {
  std::string subj, Subj, poss, Poss;
};

Pronouns pronouns_for(const TemplateSet& t, const std::optional<std::string>& sex) {
  const std::string key = sex ? "pronoun." + *sex : std::string("pronoun.unknown");
  const std::string& forms = t.at(key);
  std::vector<std::string> parts;
  std::stringstream ss(forms);
  std::string part;
  while (std::getline(ss, part, '|')) parts.emplace_back(trim(part));
  if (parts.size() != 4) {
    throw DomainError(fmt::format("template key '{}' needs four pronoun forms", key));
  }
  return {parts[0], parts[1], parts[2], parts[3]};
}

// Formatted value of a continuous feature as it appears inside its phrase.
std::string render_number(const FeatureSpec& spec, double value) {
  if (spec.name == "sleep_duration") {
    return number_word(static_cast<int>(std::lround(value)));
  }
  if (spec.name == "income") {
    return group_thousands(std::llround(value));
  }
  return format_value(spec, value);
}

}  // namespace

// ---- TemplateSet -----------------------------------------------------------

TemplateSet TemplateSet::parse(std::string_view text) {
  TemplateSet set;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw DomainError(fmt::format("template line {}: expected 'key = value'", line_no));
    }
    const auto key = trim(body.substr(0, eq));
    const auto value = trim(body.substr(eq + 1));
    if (key.empty()) throw DomainError(fmt::format("template line {}: empty key", line_no));
    if (!set.entries_.emplace(std::string(key), std::string(value)).second) {
      throw DomainError(fmt::format("template line {}: duplicate key '{}'", line_no, key));
    }
  }
  if (set.find("version") == nullptr) throw DomainError("template has no version key");
  return set;
}

const TemplateSet& TemplateSet::builtin_narrative() {
  static const TemplateSet set = parse(detail::kNarrativeTemplateText);
  return set;
}

const TemplateSet& TemplateSet::builtin_prompts() {
  static const TemplateSet set = parse(detail::kPromptTemplateText);
  return set;
}

const std::string* TemplateSet::find(std::string_view key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

const std::string& TemplateSet::at(std::string_view key) const {
  if (const auto* v = find(key)) return *v;
  throw DomainError(fmt::format("template key '{}' is missing", key));
}

std::vector<std::string> TemplateSet::sequence(std::string_view prefix) const {
  std::vector<std::string> out;
  for (int k = 1;; ++k) {
    const auto* v = find(fmt::format("{}.{}", prefix, k));
    if (v == nullptr) break;
    out.push_back(*v);
  }
  return out;
}

// ---- numbers ---------------------------------------------------------------

std::string number_word(int value) {
  if (value < 0 || value >= static_cast<int>(kNumberWords.size())) {
    throw DomainError(fmt::format("no number word for {}", value));
  }
  return std::string(kNumberWords[static_cast<std::size_t>(value)]);
}

std::optional<int> parse_number_word(std::string_view word) {
  for (std::size_t i = 0; i < kNumberWords.size(); ++i) {
    if (kNumberWords[i] == word) return static_cast<int>(i);
  }
  return std::nullopt;
}

// ---- serializer ------------------------------------------------------------

std::optional<std::string_view> NarrativeDoc::span_text(std::string_view feature) const {
  const auto it = provenance.find(feature);
  if (it == provenance.end()) return std::nullopt;
  return std::string_view(text).substr(it->second.begin, it->second.length);
}

NarrativeSerializer::NarrativeSerializer(const TemplateSet& templates)
    : templates_(templates) {}

NarrativeDoc NarrativeSerializer::serialize(const ParticipantRecord& record) const {
  validate(record);
  const auto& t = templates_;
  const auto& registry = feature_registry();
  const Pronouns pron = pronouns_for(t, record.category("sex"));

  // Phrase for a single feature, with its provenance span.
  auto feature_phrase = [&](std::string_view name) -> Rendered {
    const auto& spec = registry[feature_index(name)];
    const auto& value = record.get(name);
    if (spec.kind == FeatureKind::Categorical) {
      if (!value) return plain(t.at(fmt::format("{}.missing", name)));
      const auto& category = std::get<std::string>(*value);
      return tagged(t.at(fmt::format("{}.{}", name, category)), spec.name);
    }
    if (!value) return plain(t.at(fmt::format("{}.missing", name)));
    const double number = std::get<double>(*value);
    std::string key = fmt::format("{}.present", name);
    if (name == "sleep_duration" && std::lround(number) == 1) key += "_one";
    if (name == "income" &&
        record.category("employment") != std::optional<std::string>("employed")) {
      key = "income.present_household";
    }
    const std::string formatted = render_number(spec, number);
    return expand(t.at(key), [&](std::string_view slot) -> Rendered {
      if (slot != "v") throw DomainError(fmt::format("unknown slot '{}' in '{}'", slot, key));
      return tagged(formatted, spec.name);
    });
  };

  SlotResolver resolve = [&](std::string_view slot) -> Rendered {
    if (slot == "Subj") return plain(pron.Subj);
    if (slot == "subj") return plain(pron.subj);
    if (slot == "Poss") return plain(pron.Poss);
    if (slot == "poss") return plain(pron.poss);
    if (slot == "age") {
      return tagged(format_value(registry[feature_index("age")], *record.number("age")),
                    "age");
    }
    if (slot == "sex") return feature_phrase("sex");
    if (slot == "age_sex") {
      const bool has_age = record.get("age").has_value();
      const bool has_sex = record.get("sex").has_value();
      const char* variant = has_age && has_sex ? "both"
                            : has_sex          ? "age_missing"
                            : has_age          ? "sex_missing"
                                               : "both_missing";
      return expand(t.at(fmt::format("age_sex.{}", variant)), resolve);
    }
    return feature_phrase(slot);
  };

  NarrativeDoc doc;
  auto append_sentence = [&](const std::string& skeleton) {
    Rendered sentence = expand(skeleton, resolve);
    if (!doc.text.empty()) doc.text.push_back(' ');
    const std::size_t offset = doc.text.size();
    for (auto& [name, span] : sentence.spans) {
      doc.provenance[name] = Span{span.begin + offset, span.length};
    }
    doc.text += sentence.text;
  };

  for (const auto& skeleton : t.sequence("sentence")) append_sentence(skeleton);
  for (const auto& skeleton : t.sequence("optional")) {
    // Emitted only when every feature slot in the sentence is recorded.
    bool recorded = true;
    for (const auto& spec : registry) {
      if (skeleton.find("{" + spec.name + "}") != std::string::npos &&
          !record.get(spec.name)) {
        recorded = false;
      }
    }
    if (recorded) append_sentence(skeleton);
  }
  return doc;
}

std::optional<FeatureValue> NarrativeSerializer::extract(const NarrativeDoc& doc,
                                                         std::string_view feature) const {
  const auto text = doc.span_text(feature);
  if (!text) return std::nullopt;
  const auto& spec = feature_registry()[feature_index(feature)];
  if (spec.kind == FeatureKind::Categorical) {
    for (const auto& category : spec.categories) {
      if (templates_.at(fmt::format("{}.{}", spec.name, category)) == *text) {
        return category;
      }
    }
    throw DomainError(fmt::format("span '{}' matches no category of '{}'", *text, feature));
  }
  if (const auto word = parse_number_word(*text)) return static_cast<double>(*word);
  std::string digits;
  for (char c : *text) {
    if (c != ',') digits.push_back(c);
  }
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) {
    throw DomainError(fmt::format("span '{}' of '{}' is not a number", *text, feature));
  }
  return value;
}

NarrativeDoc serialize(const ParticipantRecord& record) {
  static const NarrativeSerializer serializer;
  return serializer.serialize(record);
}

// ---- prompts ---------------------------------------------------------------

std::string_view to_string(PromptTier tier) {
  switch (tier) {
    case PromptTier::Direct:
      return "direct";
    case PromptTier::SimpleCot:
      return "simple_cot";
    case PromptTier::ComplexCot:
      break;
  }
  return "complex_cot";
}

std::optional<PromptTier> parse_tier(std::string_view text) {
  for (auto tier : kAllTiers) {
    if (to_string(tier) == text) return tier;
  }
  return std::nullopt;
}

std::string PromptTemplate::render() const {
  std::string out = instruction_text;
  for (std::size_t i = 0; i < step_scaffold.size(); ++i) {
    out += fmt::format("\nStep {}: {}.", i + 1, step_scaffold[i]);
  }
  return out;
}

PromptTemplate prompt_template(PromptTier tier, const TemplateSet& templates) {
  const std::string prefix(to_string(tier));
  PromptTemplate p;
  p.tier = tier;
  p.instruction_text = templates.at(prefix + ".instruction");
  p.step_scaffold = templates.sequence(prefix + ".stage");
  return p;
}

const std::string& task_instruction() {
  static const std::string text = TemplateSet::builtin_prompts().at("task");
  return text;
}

QaPair make_qa(const ParticipantRecord& record, PromptTier tier) {
  QaPair qa;
  qa.id = record.id;
  qa.prompt = prompt_template(tier);
  qa.narrative = serialize(record);
  qa.question = qa.narrative.text + "\n\n" + task_instruction();
  qa.answer = record.label;
  return qa;
}

nlohmann::json to_json(const QaPair& qa) {
  return {{"id", qa.id},
          {"tier", to_string(qa.prompt.tier)},
          {"prompt", qa.prompt.render()},
          {"question", qa.question},
          {"answer", to_string(qa.answer)}};
}

QaPair qa_from_json(const nlohmann::json& j) {
  QaPair qa;
  qa.id = j.at("id").get<std::string>();
  const auto tier = parse_tier(j.at("tier").get<std::string>());
  if (!tier) throw DomainError(fmt::format("qa '{}': unknown tier", qa.id));
  qa.prompt = prompt_template(*tier);
  if (qa.prompt.render() != j.at("prompt").get<std::string>()) {
    throw DomainError(fmt::format("qa '{}': prompt does not match template {}", qa.id,
                                  TemplateSet::builtin_prompts().version()));
  }
  qa.question = j.at("question").get<std::string>();
  const auto& task = task_instruction();
  if (qa.question.size() >= task.size() + 2 &&
      qa.question.compare(qa.question.size() - task.size(), task.size(), task) == 0) {
    qa.narrative.text = qa.question.substr(0, qa.question.size() - task.size() - 2);
  } else {
    qa.narrative.text = qa.question;
  }
  const auto answer = parse_label(j.at("answer").get<std::string>());
  if (!answer) throw DomainError(fmt::format("qa '{}': bad answer", qa.id));
  qa.answer = *answer;
  return qa;
}

// ---- cues ------------------------------------------------------------------

const std::array<std::string_view, kCueCount>& cue_names() {
  static const std::array<std::string_view, kCueCount> names = {
      "frequent_sleeplessness", "self_harm",         "suicidal_thoughts",
      "unhappy",                "poor_health_satisfaction", "younger_age",
      "long_standing_illness",  "not_employed"};
  return names;
}

namespace {

constexpr double kYoungerAgeCutoff = 55.0;

bool is_unsatisfied(const std::optional<std::string>& v) {
  return v == "moderately_unsatisfied" || v == "very_unsatisfied";
}

}  // namespace

CueVector cues_from_record(const ParticipantRecord& r) {
  const auto happiness = r.category("happiness");
  const auto age = r.number("age");
  return {r.category("sleeplessness") == "usually",
          r.category("self_harm") == "yes",
          r.category("suicidal_thoughts") == "yes",
          happiness == "moderately_unhappy" || happiness == "very_unhappy",
          is_unsatisfied(r.category("health_satisfaction")),
          age.has_value() && *age < kYoungerAgeCutoff,
          r.category("long_standing_illness") == "yes",
          r.category("employment") == "not_employed"};
}

CueVector cues_from_text(std::string_view text) {
  const auto& t = TemplateSet::builtin_narrative();
  auto contains = [&](std::string_view needle) {
    return text.find(needle) != std::string_view::npos;
  };
  bool poor_health = false;
  for (const char* level : {"moderately_unsatisfied", "very_unsatisfied"}) {
    const auto& phrase = t.at(fmt::format("health_satisfaction.{}", level));
    for (const char* poss : {"her", "his", "their"}) {
      poor_health = poor_health || contains(fmt::format("being {} with {} health", phrase, poss));
    }
  }
  bool younger = false;
  if (const auto pos = text.find("-year-old"); pos != std::string_view::npos) {
    auto start = pos;
    while (start > 0 && std::isdigit(static_cast<unsigned char>(text[start - 1]))) --start;
    int age = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + start, text.data() + pos, age);
    younger = ec == std::errc() && ptr == text.data() + pos && start < pos &&
              age < kYoungerAgeCutoff;
  }
  return {contains(t.at("sleeplessness.usually")),
          contains(t.at("self_harm.yes")),
          contains(t.at("suicidal_thoughts.yes")),
          contains("general happiness as " + t.at("happiness.moderately_unhappy")) ||
              contains("general happiness as " + t.at("happiness.very_unhappy")),
          poor_health,
          younger,
          contains(t.at("long_standing_illness.yes")),
          contains(t.at("employment.not_employed"))};
}

}  // namespace mddt
