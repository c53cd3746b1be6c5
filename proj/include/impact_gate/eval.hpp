#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "impact_gate/gateway.hpp"

namespace impact_gate {

/// |P ∩ G| / |P ∪ G|. Two empty sets agree on "no impact" and score 1.
double jaccard(const std::set<std::string> &predicted, const std::set<std::string> &gold);

/// Step function with a strict threshold: 1 iff score > theta.
int indicator(double score, double theta);

enum class InvalidPolicy { exclude, score_zero };

std::string_view to_string(InvalidPolicy policy);
std::optional<InvalidPolicy> parse_invalid_policy(std::string_view text);

struct EvalConfig {
  double theta = 0.5;
  InvalidPolicy invalid_policy = InvalidPolicy::exclude;
  std::vector<std::string> categories; // empty = taxonomy's evaluated_by_default set
  double validity_floor = kDefaultValidityFloor;
};

EvalConfig eval_config_from_json(const Json &value);
Json to_json(const EvalConfig &config);

/// Throws Error(config_error) when theta or the floor fall outside [0, 1].
void validate(const EvalConfig &config);

struct LabeledPair {
  std::size_t item = 0;
  std::string category_id;
  std::optional<LabelSet> predicted; // nullopt: no usable prediction
  LabelSet gold;
};

struct CategoryAccuracy {
  std::string category_id;
  std::size_t n = 0;       // scored items
  std::size_t hits = 0;
  std::size_t invalid = 0; // items without a usable prediction
  std::size_t total = 0;   // all items offered, valid or not
  double accuracy = 0.0;   // hits / n, 0 when n == 0
  bool redacted = false;

  friend bool operator==(const CategoryAccuracy &, const CategoryAccuracy &) = default;
};

/// Throws Error(empty_input) for no pairs and Error(validation_error) when the
/// pairs mix categories.
CategoryAccuracy category_accuracy(std::span<const LabeledPair> pairs, const EvalConfig &config);

struct ConfusionMatrix {
  // cells[gold][predicted], indexed by ImpactLevel.
  std::array<std::array<std::size_t, 3>, 3> cells{};
  // Invalid predictions per gold row.
  std::array<std::size_t, 3> invalid{};

  [[nodiscard]] std::size_t row_sum(ImpactLevel gold) const;
  [[nodiscard]] std::size_t total() const;
  [[nodiscard]] std::size_t diagonal() const;

  friend bool operator==(const ConfusionMatrix &, const ConfusionMatrix &) = default;
};

struct ImpactAccuracy {
  std::size_t items = 0;   // outcomes matched to a gold record
  std::size_t correct = 0;
  std::size_t invalid = 0; // invalid answers or predictions without a level
  double accuracy = 0.0;   // correct / items; invalid answers count as misses
  double accuracy_valid_only = 0.0; // correct / (items - invalid)
  ConfusionMatrix matrix;

  friend bool operator==(const ImpactAccuracy &, const ImpactAccuracy &) = default;
};

/// Exact-level accuracy. Every outcome must match a gold record by trace id
/// (Error(unmatched_prediction) otherwise).
ImpactAccuracy impact_accuracy(std::span<const Outcome> outcomes,
                               const std::map<std::string, GoldRecord> &golds);

struct ItemResult {
  GoldRecord gold;
  Outcome outcome;
};

struct RunReport {
  std::string backend;
  Capability capability = Capability::text_only;
  Json backend_settings; // descriptor as configured, recorded in run_meta.json
  Strategy strategy = Strategy::zero_shot;
  EvalConfig config;
  std::string taxonomy_version;
  std::string template_hash;
  std::string exemplar_bank_hash; // empty for strategies without exemplars
  std::size_t gold_count = 0;
  std::size_t scored_items = 0;
  std::vector<std::string> warnings;
  ImpactAccuracy impact;
  std::vector<CategoryAccuracy> categories; // empty for zero_shot
  std::map<std::string, std::size_t> invalid_by_reason;
  std::vector<ItemResult> items;
};

/// Metrics over already collected outcomes. Only items whose trace has a gold
/// record are scored.
RunReport score_items(std::vector<ItemResult> items, const Taxonomy &taxonomy,
                      Strategy strategy, const EvalConfig &config);

/// build_prompt -> classify -> metrics for every gold-labeled trace.
RunReport evaluate_run(const std::vector<Trace> &traces, const std::vector<GoldRecord> &golds,
                       Backend &backend, Strategy strategy, const Taxonomy &taxonomy,
                       const ExemplarBank *bank, const EvalConfig &config,
                       const PromptOptions &prompt_options = {});

/// Writes summary.json, category_accuracy.csv, impact_confusion.csv,
/// per_item.jsonl and run_meta.json. Output bytes depend only on the report.
void write_run_report(const RunReport &report, const std::filesystem::path &dir);

Json summary_json(const RunReport &report);
Json run_meta_json(const RunReport &report);

/// Rebuilds a report from per_item.jsonl and run_meta.json alone.
RunReport recompute_run_report(const std::filesystem::path &dir, const Taxonomy &taxonomy);

/// Combined tables over several runs: impact accuracy as strategy x backend,
/// and category accuracy as category x backend/strategy.
std::string combined_impact_csv(std::span<const RunReport> reports);
std::string combined_category_csv(std::span<const RunReport> reports, const Taxonomy &taxonomy);

std::string confusion_csv(const ConfusionMatrix &matrix);

struct SourceDistribution {
  std::string source;
  std::size_t items = 0;
  std::size_t skipped = 0;
  std::array<std::size_t, 3> level_counts{};
  std::array<double, 3> level_percent{};
  double at_least_moderate_percent = 0.0;
  std::map<std::string, std::size_t> task_domains;
};

struct DistributionReport {
  std::vector<SourceDistribution> rows;
  std::vector<std::string> warnings;
};

std::map<std::string, std::vector<GoldRecord>> group_by_source(const std::vector<GoldRecord> &golds);

/// Per-source level percentages and task-domain counts. Sources without gold
/// items are omitted and reported as warnings.
DistributionReport distribution_report(const std::map<std::string, std::vector<GoldRecord>> &by_source,
                                       const std::map<std::string, std::size_t> &skipped = {});

std::string distribution_csv(const DistributionReport &report);

} // namespace impact_gate
