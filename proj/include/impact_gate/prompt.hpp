#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "impact_gate/records.hpp"
#include "impact_gate/trace.hpp"

namespace impact_gate {

enum class Strategy { zero_shot, kap, icl, cot };

inline constexpr std::array<Strategy, 4> kStrategies = {Strategy::zero_shot, Strategy::kap,
                                                        Strategy::icl, Strategy::cot};

std::string_view to_string(Strategy strategy);
std::optional<Strategy> parse_strategy(std::string_view text);

/// A worked example used by the icl and cot prompts.
struct Exemplar {
  std::string trace_id;
  std::string action;
  LabelMap labels;
  // Verbatim answer text per category; falls back to the option display names.
  std::map<std::string, std::string> label_text;
  ImpactLevel impact_level = ImpactLevel::minimum;
  std::string justification;

  struct Reasoning {
    std::map<std::string, std::string> label_text;
    std::string narrative;
    ImpactLevel impact_level = ImpactLevel::minimum;
    std::string justification;
  };
  std::optional<Reasoning> reasoning; // only exemplars with a narrative appear in cot prompts
};

struct ExemplarBank {
  std::string version;
  std::vector<Exemplar> exemplars;
};

const ExemplarBank &default_exemplar_bank();
/// Every exemplar's labels are validated against `taxonomy`.
ExemplarBank load_exemplar_bank(std::string_view document, const Taxonomy &taxonomy);
ExemplarBank load_exemplar_bank_file(const std::filesystem::path &path, const Taxonomy &taxonomy);
Json to_json(const ExemplarBank &bank);
std::string bank_hash(const ExemplarBank &bank);

/// One line per category: "<name>: <question> (<option>, <option>, ...)".
std::string knowledge_block(const Taxonomy &taxonomy);

/// Raw template text before substitution, as bundled.
std::string_view prompt_template(Strategy strategy);
std::string template_hash(Strategy strategy);

struct ContentPart {
  enum class Kind { screen_html, screen_image, text };
  Kind kind = Kind::text;
  std::string text;       // markup for screen_html, prose for text
  std::string image_ref;  // screen_image only
  std::string html;       // screen_image only: markup for text-only dispatch
  std::size_t screen_index = 0;
};

struct PromptBundle {
  std::string trace_id;
  Strategy strategy = Strategy::zero_shot;
  std::string system_text;
  std::vector<ContentPart> content_parts; // screens in order, then the action description
  std::vector<std::string> expected_fields; // category ids plus "impact_level"
};

struct PromptOptions {
  bool screens_as_images = false;
  // 0 keeps every screen. Otherwise middle screens are elided symmetrically
  // until at most this many remain; first and last are always kept.
  std::size_t max_screens = 0;
};

/// Throws Error(missing_bank) for icl/cot without exemplars and
/// Error(empty_trace) for traces without screens.
PromptBundle build_prompt(Strategy strategy, const Trace &trace, const Taxonomy &taxonomy,
                          const ExemplarBank *bank = nullptr, const PromptOptions &options = {});

/// Only the system text, for golden comparisons.
std::string render_system_text(Strategy strategy, const Taxonomy &taxonomy,
                               const ExemplarBank *bank);

/// Collapses whitespace runs to single spaces and trims both ends.
std::string normalize_whitespace(std::string_view text);

} // namespace impact_gate
