#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "impact_gate/json_util.hpp"

namespace impact_gate {

/// Ordinal severity of an action. The ordering minimum < moderate < significant
/// is the enum's declaration order.
enum class ImpactLevel { minimum = 0, moderate = 1, significant = 2 };

inline constexpr std::array<ImpactLevel, 3> kImpactLevels = {
    ImpactLevel::minimum, ImpactLevel::moderate, ImpactLevel::significant};

std::string_view to_string(ImpactLevel level);
std::string_view display_name(ImpactLevel level); // "Minimum", "Moderate", ...

/// Accepts "minimum", "minimal", "moderate", "significant" in any case with
/// surrounding whitespace.
std::optional<ImpactLevel> parse_impact_level(std::string_view text);

struct SubOptionDef {
  std::string id;
  std::string display_name;
};

struct OptionDef {
  std::string id;
  std::string display_name;
  std::vector<SubOptionDef> sub_options;
};

struct Category {
  std::string id;
  std::string display_name;
  std::string question; // rendered in the taxonomy knowledge block
  std::vector<OptionDef> options;
  bool multi_label = false;
  bool evaluated_by_default = true;

  [[nodiscard]] const OptionDef *find_option(std::string_view option_id) const;
};

/// Labels chosen for one category. An empty option set is an explicit
/// "no impact / not applicable" answer.
struct LabelSet {
  std::string category_id;
  std::set<std::string> options;
  // Recorded when provided, ignored by evaluation.
  std::set<std::string> sub_options;
  // Marks a time-limited answer such as "Multiple Steps Required Timely".
  bool time_bound = false;

  friend bool operator==(const LabelSet &, const LabelSet &) = default;
};

class Taxonomy {
public:
  Taxonomy() = default;
  Taxonomy(std::string version, std::vector<Category> categories);

  [[nodiscard]] const std::string &version() const { return version_; }
  [[nodiscard]] const std::vector<Category> &categories() const { return categories_; }
  [[nodiscard]] std::size_t option_count() const;

  [[nodiscard]] const Category *find(std::string_view category_id) const;
  // Throws Error(unknown_category).
  [[nodiscard]] const Category &at(std::string_view category_id) const;

  [[nodiscard]] std::vector<std::string> evaluated_category_ids() const;

private:
  std::string version_;
  std::vector<Category> categories_;
};

/// The built-in ten-category taxonomy, parsed once from the bundled document.
const Taxonomy &default_taxonomy();

/// Structural validation of a label set. Throws Error with unknown_category,
/// unknown_option or cardinality_violation.
void validate_labels(const Taxonomy &taxonomy, const LabelSet &labels);

bool is_multi_label(const Taxonomy &taxonomy, std::string_view category_id);

/// Loads a taxonomy document. An empty or whitespace-only document yields the
/// default taxonomy. A document whose categories differ from the default is
/// tagged with version "custom" unless it declares its own non-default version.
Taxonomy load_taxonomy(std::string_view document);
Taxonomy load_taxonomy_file(const std::filesystem::path &path);

Json to_json(const Taxonomy &taxonomy);

/// A label set is serialized as a plain array of option ids unless it carries
/// sub-options or a time-bound flag, in which case an object is used.
Json to_json(const LabelSet &labels);
LabelSet label_set_from_json(std::string_view category_id, const Json &value);

} // namespace impact_gate
