#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mddt {

/// Ground-truth diagnosis of a participant.
enum class Label { HC, MDD };

/// An answer extracted from free text. Unparseable when neither label can be
/// recovered.
enum class Answer { HC, MDD, Unparseable };

std::string_view to_string(Label label);
std::string_view to_string(Answer answer);
std::optional<Label> parse_label(std::string_view text);

inline Answer to_answer(Label label) {
  return label == Label::MDD ? Answer::MDD : Answer::HC;
}

inline bool matches(Answer answer, Label label) {
  return answer == to_answer(label);
}

/// Raised when an input violates a documented domain or precondition.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Seed derivation. Every stage draws from a child stream derived from the
// root seed and a stable label so that adding or reordering stages does not
// shift the random numbers any other stage sees.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

/// Uniform double in [0, 1) from a hash value.
double unit_interval(std::uint64_t bits);

std::string sha256_hex(std::string_view data);

}  // namespace mddt
