#pragma once

#include <array>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "impact_gate/gateway.hpp"

namespace impact_gate {

/// Execution decisions ordered from most to least permissive.
enum class DecisionKind { auto_execute = 0, confirm_with_summary = 1, defer_to_human = 2 };

std::string_view to_string(DecisionKind kind);
std::optional<DecisionKind> parse_decision_kind(std::string_view text);

/// The stricter of two decisions.
DecisionKind stricter(DecisionKind a, DecisionKind b);

struct Decision {
  DecisionKind kind = DecisionKind::defer_to_human;
  std::string rationale;
  std::string summary_text; // only for confirm_with_summary

  friend bool operator==(const Decision &, const Decision &) = default;
};

struct Rule {
  enum class Match { contains_option, equals_level, category_invalid };
  enum class Effect { force_decision, raise_minimum_level };

  Match match = Match::contains_option;
  std::string category_id; // contains_option, category_invalid
  std::string option_id;   // contains_option
  ImpactLevel level = ImpactLevel::minimum; // equals_level

  Effect effect = Effect::raise_minimum_level;
  DecisionKind forced = DecisionKind::defer_to_human;
  ImpactLevel raise_to = ImpactLevel::significant;

  [[nodiscard]] bool matches(const Prediction &prediction) const;
  [[nodiscard]] std::string describe() const;
};

struct Policy {
  std::array<DecisionKind, 3> default_mapping = {DecisionKind::auto_execute,
                                                 DecisionKind::confirm_with_summary,
                                                 DecisionKind::defer_to_human};
  bool allow_downgrades = false;
  std::vector<Rule> rules;

  [[nodiscard]] DecisionKind mapped(ImpactLevel level) const {
    return default_mapping[static_cast<std::size_t>(level)];
  }
};

/// Throws Error(policy_error) for references to unknown categories or options,
/// and for relaxing policies (a non-monotone default mapping or a forced
/// auto_execute) unless allow_downgrades is set.
void validate_policy(const Policy &policy, const Taxonomy &taxonomy);

Policy policy_from_json(const Json &value);
Json to_json(const Policy &policy);
Policy load_policy_file(const std::filesystem::path &path, const Taxonomy &taxonomy);

/// First matching rule wins, otherwise the default mapping. Invalid answers and
/// predictions without a level defer to a human. Without allow_downgrades the
/// result is also never more permissive than the result for any lower level.
Decision apply_policy(const Outcome &outcome, const Policy &policy);

/// Template summary of the action and the final screen's salient elements.
std::string summarize_action(const Trace &trace);

struct Assessment {
  Decision decision;
  Outcome outcome;
};

/// Prompt, classify, apply the policy. Any failure along the way yields
/// defer_to_human with an InvalidAnswer outcome.
Assessment assess(const Trace &trace, Strategy strategy, Backend &backend, const Taxonomy &taxonomy,
                  const Policy &policy, const ExemplarBank *bank = nullptr);

Json to_json(const Decision &decision);
Json to_json(const Assessment &assessment);

} // namespace impact_gate
