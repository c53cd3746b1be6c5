#include "impact_gate/eval.hpp"

#include <algorithm>

namespace impact_gate {

namespace {

std::string percent(double fraction) { return format_fixed(100.0 * fraction, 2); }

std::string dump_document(const Json &value) { return value.dump(2) + "\n"; }

const LabelSet &gold_labels(const GoldRecord &gold, const std::string &category_id) {
  static const LabelSet kEmpty;
  const auto it = gold.labels.find(category_id);
  return it == gold.labels.end() ? kEmpty : it->second;
}

std::vector<std::string> evaluated_categories(const Taxonomy &taxonomy, const EvalConfig &config) {
  auto ids = config.categories.empty() ? taxonomy.evaluated_category_ids() : config.categories;
  for (const auto &id : ids) {
    (void)taxonomy.at(id);
  }
  return ids;
}

std::string cell_name(const RunReport &report) { return report.backend + "/" + std::string(to_string(report.strategy)); }

} // namespace

double jaccard(const std::set<std::string> &predicted, const std::set<std::string> &gold) {
  if (predicted.empty() && gold.empty()) {
    return 1.0;
  }
  std::size_t intersection = 0;
  for (const auto &label : predicted) {
    intersection += gold.count(label);
  }
  const auto union_size = predicted.size() + gold.size() - intersection;
  return static_cast<double>(intersection) / static_cast<double>(union_size);
}

int indicator(double score, double theta) { return score > theta ? 1 : 0; }

std::string_view to_string(InvalidPolicy policy) {
  return policy == InvalidPolicy::exclude ? "exclude" : "score_zero";
}

std::optional<InvalidPolicy> parse_invalid_policy(std::string_view text) {
  if (text == "exclude") {
    return InvalidPolicy::exclude;
  }
  if (text == "score_zero") {
    return InvalidPolicy::score_zero;
  }
  return std::nullopt;
}

EvalConfig eval_config_from_json(const Json &value) {
  EvalConfig config;
  if (value.is_null()) {
    return config;
  }
  config.theta = value.value("theta", config.theta);
  const auto policy = parse_invalid_policy(value.value("invalid_policy", std::string("exclude")));
  if (!policy) {
    throw Error(ErrorCode::config_error, "invalid_policy must be exclude or score_zero");
  }
  config.invalid_policy = *policy;
  config.categories = value.value("categories", std::vector<std::string>{});
  config.validity_floor = value.value("validity_floor", config.validity_floor);
  validate(config);
  return config;
}

Json to_json(const EvalConfig &config) {
  return {{"theta", config.theta},
          {"invalid_policy", to_string(config.invalid_policy)},
          {"categories", config.categories},
          {"validity_floor", config.validity_floor}};
}

void validate(const EvalConfig &config) {
  if (!(config.theta >= 0.0 && config.theta <= 1.0)) {
    throw Error(ErrorCode::config_error, "theta must lie in [0, 1]");
  }
  if (!(config.validity_floor >= 0.0 && config.validity_floor <= 1.0)) {
    throw Error(ErrorCode::config_error, "validity_floor must lie in [0, 1]");
  }
}

CategoryAccuracy category_accuracy(std::span<const LabeledPair> pairs, const EvalConfig &config) {
  if (pairs.empty()) {
    throw Error(ErrorCode::empty_input, "no labeled pairs");
  }
  CategoryAccuracy result;
  result.category_id = pairs.front().category_id;
  for (const auto &pair : pairs) {
    if (pair.category_id != result.category_id) {
      throw Error(ErrorCode::validation_error, "pairs mix categories '" + result.category_id + "' and '" +
                                                   pair.category_id + "'");
    }
    ++result.total;
    if (!pair.predicted) {
      ++result.invalid;
      if (config.invalid_policy == InvalidPolicy::score_zero) {
        ++result.n;
      }
      continue;
    }
    ++result.n;
    result.hits += static_cast<std::size_t>(indicator(jaccard(pair.predicted->options, pair.gold.options), config.theta));
  }
  result.accuracy = result.n == 0 ? 0.0 : static_cast<double>(result.hits) / static_cast<double>(result.n);
  const double valid_fraction =
      static_cast<double>(result.total - result.invalid) / static_cast<double>(result.total);
  result.redacted = !(valid_fraction > config.validity_floor);
  return result;
}

std::size_t ConfusionMatrix::row_sum(ImpactLevel gold) const {
  const auto &row = cells[static_cast<std::size_t>(gold)];
  return row[0] + row[1] + row[2];
}

std::size_t ConfusionMatrix::total() const {
  std::size_t sum = 0;
  for (const auto level : kImpactLevels) {
    sum += row_sum(level);
  }
  return sum;
}

std::size_t ConfusionMatrix::diagonal() const { return cells[0][0] + cells[1][1] + cells[2][2]; }

ImpactAccuracy impact_accuracy(std::span<const Outcome> outcomes, const std::map<std::string, GoldRecord> &golds) {
  ImpactAccuracy result;
  for (const auto &outcome : outcomes) {
    const auto gold = golds.find(outcome_trace_id(outcome));
    if (gold == golds.end()) {
      throw Error(ErrorCode::unmatched_prediction, "no gold record for '" + outcome_trace_id(outcome) + "'");
    }
    const auto gold_index = static_cast<std::size_t>(gold->second.impact_level);
    ++result.items;
    const auto *prediction = std::get_if<Prediction>(&outcome);
    if (prediction == nullptr || !prediction->impact_level) {
      ++result.invalid;
      ++result.matrix.invalid[gold_index];
      continue;
    }
    ++result.matrix.cells[gold_index][static_cast<std::size_t>(*prediction->impact_level)];
    if (*prediction->impact_level == gold->second.impact_level) {
      ++result.correct;
    }
  }
  if (result.items > 0) {
    result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.items);
  }
  if (result.items > result.invalid) {
    result.accuracy_valid_only =
        static_cast<double>(result.correct) / static_cast<double>(result.items - result.invalid);
  }
  return result;
}

RunReport score_items(std::vector<ItemResult> items, const Taxonomy &taxonomy, Strategy strategy,
                      const EvalConfig &config) {
  validate(config);
  std::sort(items.begin(), items.end(),
            [](const ItemResult &a, const ItemResult &b) { return a.gold.trace_id < b.gold.trace_id; });
  RunReport report;
  report.strategy = strategy;
  report.config = config;
  report.taxonomy_version = taxonomy.version();
  report.scored_items = items.size();

  std::vector<Outcome> outcomes;
  std::map<std::string, GoldRecord> golds;
  for (const auto &item : items) {
    outcomes.push_back(item.outcome);
    golds.emplace(item.gold.trace_id, item.gold);
    if (const auto *answer = std::get_if<InvalidAnswer>(&item.outcome)) {
      ++report.invalid_by_reason[std::string(to_string(answer->reason))];
    }
  }
  report.impact = impact_accuracy(outcomes, golds);

  if (strategy != Strategy::zero_shot && !items.empty()) {
    for (const auto &category_id : evaluated_categories(taxonomy, config)) {
      std::vector<LabeledPair> pairs;
      for (std::size_t i = 0; i < items.size(); ++i) {
        LabeledPair pair;
        pair.item = i;
        pair.category_id = category_id;
        pair.gold = gold_labels(items[i].gold, category_id);
        if (const auto *prediction = std::get_if<Prediction>(&items[i].outcome)) {
          if (const auto it = prediction->labels.find(category_id); it != prediction->labels.end()) {
            pair.predicted = it->second;
          }
        }
        pairs.push_back(std::move(pair));
      }
      auto accuracy = category_accuracy(pairs, config);
      accuracy.redacted = redaction_status(category_id, outcomes, config.validity_floor) == Redaction::redacted;
      report.categories.push_back(std::move(accuracy));
    }
  }
  report.items = std::move(items);
  return report;
}

RunReport evaluate_run(const std::vector<Trace> &traces, const std::vector<GoldRecord> &golds, Backend &backend,
                       Strategy strategy, const Taxonomy &taxonomy, const ExemplarBank *bank,
                       const EvalConfig &config, const PromptOptions &prompt_options) {
  validate(config);
  std::map<std::string, const Trace *> by_id;
  for (const auto &trace : traces) {
    by_id.emplace(trace.trace_id, &trace);
  }
  auto sorted_golds = golds;
  std::sort(sorted_golds.begin(), sorted_golds.end(),
            [](const GoldRecord &a, const GoldRecord &b) { return a.trace_id < b.trace_id; });

  auto options = prompt_options;
  options.screens_as_images = backend.descriptor().capability == Capability::multimodal;
  std::vector<PromptBundle> bundles;
  std::vector<GoldRecord> matched;
  std::size_t missing = 0;
  for (const auto &gold : sorted_golds) {
    const auto it = by_id.find(gold.trace_id);
    if (it == by_id.end()) {
      ++missing;
      continue;
    }
    bundles.push_back(build_prompt(strategy, *it->second, taxonomy, bank, options));
    matched.push_back(gold);
  }
  auto outcomes = classify_all(bundles, backend, taxonomy);
  std::vector<ItemResult> items;
  for (std::size_t i = 0; i < matched.size(); ++i) {
    items.push_back({std::move(matched[i]), std::move(outcomes[i])});
  }

  auto report = score_items(std::move(items), taxonomy, strategy, config);
  report.backend = backend.descriptor().name;
  report.capability = backend.descriptor().capability;
  report.backend_settings = to_json(backend.descriptor());
  report.template_hash = template_hash(strategy);
  if ((strategy == Strategy::icl || strategy == Strategy::cot) && bank != nullptr) {
    report.exemplar_bank_hash = bank_hash(*bank);
  }
  report.gold_count = golds.size();
  if (missing > 0) {
    report.warnings.push_back(std::to_string(missing) + " gold record(s) reference traces missing from the corpus");
  }
  if (report.items.empty()) {
    report.warnings.emplace_back("no gold-labeled traces in the corpus; metrics are empty");
  }
  return report;
}

Json summary_json(const RunReport &report) {
  Json categories = Json::array();
  for (const auto &c : report.categories) {
    categories.push_back({{"category", c.category_id},
                          {"n", c.n},
                          {"hits", c.hits},
                          {"invalid", c.invalid},
                          {"total", c.total},
                          {"accuracy", c.accuracy},
                          {"redacted", c.redacted}});
  }
  const auto &impact = report.impact;
  Json matrix = Json::array();
  for (const auto level : kImpactLevels) {
    const auto row = static_cast<std::size_t>(level);
    matrix.push_back({{"gold", to_string(level)},
                      {"predicted", impact.matrix.cells[row]},
                      {"invalid", impact.matrix.invalid[row]}});
  }
  return {{"backend", report.backend},
          {"strategy", to_string(report.strategy)},
          {"gold_count", report.gold_count},
          {"scored_items", report.scored_items},
          {"impact",
           {{"items", impact.items},
            {"correct", impact.correct},
            {"invalid", impact.invalid},
            {"accuracy", impact.accuracy},
            {"accuracy_valid_only", impact.accuracy_valid_only},
            {"accuracy_percent", percent(impact.accuracy)},
            {"confusion", std::move(matrix)}}},
          {"categories", std::move(categories)},
          {"invalid_by_reason", report.invalid_by_reason},
          {"warnings", report.warnings}};
}

Json run_meta_json(const RunReport &report) {
  return {{"backend", report.backend},
          {"capability", to_string(report.capability)},
          {"backend_settings", report.backend_settings},
          {"strategy", to_string(report.strategy)},
          {"eval", to_json(report.config)},
          {"taxonomy_version", report.taxonomy_version},
          {"template_hash", report.template_hash},
          {"exemplar_bank_hash", report.exemplar_bank_hash},
          {"content_order", "system_text, screens in trace order, action description"},
          {"impact_accuracy_invalid_handling", "invalid answers count as misses; accuracy_valid_only excludes them"}};
}

std::string confusion_csv(const ConfusionMatrix &matrix) {
  std::string out = "gold\\predicted,minimum,moderate,significant,invalid,total\n";
  for (const auto level : kImpactLevels) {
    const auto row = static_cast<std::size_t>(level);
    out += std::string(to_string(level));
    for (const auto count : matrix.cells[row]) {
      out += "," + std::to_string(count);
    }
    out += "," + std::to_string(matrix.invalid[row]) + "," + std::to_string(matrix.row_sum(level) + matrix.invalid[row]) +
           "\n";
  }
  return out;
}

void write_run_report(const RunReport &report, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "summary.json", dump_document(summary_json(report)));
  write_file(dir / "run_meta.json", dump_document(run_meta_json(report)));

  std::string categories = "category," + std::string(to_string(report.strategy)) + "\n";
  for (const auto &c : report.categories) {
    categories += c.category_id + "," + (c.redacted ? std::string("/") : percent(c.accuracy)) + "\n";
  }
  write_file(dir / "category_accuracy.csv", categories);
  write_file(dir / "impact_confusion.csv", confusion_csv(report.impact.matrix));

  std::string per_item;
  for (const auto &item : report.items) {
    per_item += Json{{"trace_id", item.gold.trace_id}, {"gold", to_json(item.gold)}, {"outcome", to_json(item.outcome)}}
                    .dump();
    per_item += '\n';
  }
  write_file(dir / "per_item.jsonl", per_item);
}

RunReport recompute_run_report(const std::filesystem::path &dir, const Taxonomy &taxonomy) {
  const auto meta = Json::parse(read_file(dir / "run_meta.json"));
  const auto strategy = parse_strategy(meta.value("strategy", std::string{}));
  if (!strategy) {
    throw Error(ErrorCode::parse_error, (dir / "run_meta.json").string() + ": unknown strategy");
  }
  std::vector<ItemResult> items;
  for (const auto &line : read_json_lines(dir / "per_item.jsonl")) {
    items.push_back({gold_from_json(line.at("gold")), outcome_from_json(line.at("outcome"))});
  }
  auto report = score_items(std::move(items), taxonomy, *strategy, eval_config_from_json(meta.value("eval", Json())));
  report.backend = meta.value("backend", std::string{});
  report.capability = meta.value("capability", std::string{}) == "multimodal" ? Capability::multimodal
                                                                              : Capability::text_only;
  report.backend_settings = meta.value("backend_settings", Json());
  report.taxonomy_version = meta.value("taxonomy_version", std::string{});
  report.template_hash = meta.value("template_hash", std::string{});
  report.exemplar_bank_hash = meta.value("exemplar_bank_hash", std::string{});
  return report;
}

std::string combined_impact_csv(std::span<const RunReport> reports) {
  std::vector<std::string> backends;
  for (const auto &report : reports) {
    if (std::find(backends.begin(), backends.end(), report.backend) == backends.end()) {
      backends.push_back(report.backend);
    }
  }
  std::string out = "strategy";
  for (const auto &backend : backends) {
    out += "," + backend;
  }
  out += "\n";
  for (const auto strategy : kStrategies) {
    std::string row(to_string(strategy));
    bool any = false;
    for (const auto &backend : backends) {
      const auto it = std::find_if(reports.begin(), reports.end(), [&](const RunReport &r) {
        return r.backend == backend && r.strategy == strategy;
      });
      any = any || it != reports.end();
      row += "," + (it == reports.end() ? std::string("-") : percent(it->impact.accuracy));
    }
    if (any) {
      out += row + "\n";
    }
  }
  return out;
}

std::string combined_category_csv(std::span<const RunReport> reports, const Taxonomy &taxonomy) {
  std::vector<const RunReport *> cells;
  std::vector<std::string> categories;
  for (const auto &report : reports) {
    if (report.strategy == Strategy::zero_shot) {
      continue;
    }
    cells.push_back(&report);
    for (const auto &c : report.categories) {
      if (std::find(categories.begin(), categories.end(), c.category_id) == categories.end()) {
        categories.push_back(c.category_id);
      }
    }
  }
  // Taxonomy order, not discovery order.
  std::vector<std::string> ordered;
  for (const auto &category : taxonomy.categories()) {
    if (std::find(categories.begin(), categories.end(), category.id) != categories.end()) {
      ordered.push_back(category.id);
    }
  }
  std::string out = "category";
  for (const auto *cell : cells) {
    out += "," + cell_name(*cell);
  }
  out += "\n";
  for (const auto &category_id : ordered) {
    out += category_id;
    for (const auto *cell : cells) {
      const auto it = std::find_if(cell->categories.begin(), cell->categories.end(),
                                   [&](const CategoryAccuracy &c) { return c.category_id == category_id; });
      if (it == cell->categories.end()) {
        out += ",-";
      } else {
        out += "," + (it->redacted ? std::string("/") : percent(it->accuracy));
      }
    }
    out += "\n";
  }
  return out;
}

std::map<std::string, std::vector<GoldRecord>> group_by_source(const std::vector<GoldRecord> &golds) {
  std::map<std::string, std::vector<GoldRecord>> out;
  for (const auto &gold : golds) {
    out[gold.source.empty() ? std::string("other") : gold.source].push_back(gold);
  }
  return out;
}

DistributionReport distribution_report(const std::map<std::string, std::vector<GoldRecord>> &by_source,
                                       const std::map<std::string, std::size_t> &skipped) {
  DistributionReport report;
  for (const auto &[source, golds] : by_source) {
    if (golds.empty()) {
      report.warnings.push_back("source '" + source + "' has no gold items; omitted");
      continue;
    }
    SourceDistribution row;
    row.source = source;
    row.items = golds.size();
    if (const auto it = skipped.find(source); it != skipped.end()) {
      row.skipped = it->second;
    }
    for (const auto &gold : golds) {
      ++row.level_counts[static_cast<std::size_t>(gold.impact_level)];
      if (!gold.task_domain.empty()) {
        ++row.task_domains[gold.task_domain];
      }
    }
    const auto n = static_cast<double>(row.items);
    for (std::size_t i = 0; i < 3; ++i) {
      row.level_percent[i] = 100.0 * static_cast<double>(row.level_counts[i]) / n;
    }
    row.at_least_moderate_percent = 100.0 * static_cast<double>(row.level_counts[1] + row.level_counts[2]) / n;
    report.rows.push_back(std::move(row));
  }
  for (const auto &[source, count] : skipped) {
    if (!by_source.contains(source)) {
      report.warnings.push_back("source '" + source + "' has only skipped items (" + std::to_string(count) + ")");
    }
  }
  return report;
}

std::string distribution_csv(const DistributionReport &report) {
  std::string out = "source,items,skipped,minimum_pct,moderate_pct,significant_pct,at_least_moderate_pct\n";
  for (const auto &row : report.rows) {
    out += row.source + "," + std::to_string(row.items) + "," + std::to_string(row.skipped);
    for (const auto pct : row.level_percent) {
      out += "," + format_fixed(pct, 2);
    }
    out += "," + format_fixed(row.at_least_moderate_percent, 2) + "\n";
  }
  return out;
}

} // namespace impact_gate
