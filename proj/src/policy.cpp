#include "impact_gate/policy.hpp"

#include <algorithm>

namespace impact_gate {

namespace {

ImpactLevel level_from(const Json &value, std::string_view field) {
  const auto level = parse_impact_level(value.get<std::string>());
  if (!level) {
    throw Error(ErrorCode::policy_error, std::string(field) + ": unknown impact level '" + value.get<std::string>() + "'");
  }
  return *level;
}

DecisionKind decision_from(const Json &value, std::string_view field) {
  const auto kind = parse_decision_kind(value.get<std::string>());
  if (!kind) {
    throw Error(ErrorCode::policy_error, std::string(field) + ": unknown decision '" + value.get<std::string>() + "'");
  }
  return *kind;
}

Rule rule_from_json(const Json &value, std::size_t index) {
  const auto where = "rules[" + std::to_string(index) + "]";
  const auto &condition = value.at("if");
  const auto &effect = value.at("then");
  Rule rule;
  if (condition.contains("contains")) {
    rule.match = Rule::Match::contains_option;
    rule.category_id = condition.at("category").get<std::string>();
    rule.option_id = condition.at("contains").get<std::string>();
  } else if (condition.contains("equals_level")) {
    rule.match = Rule::Match::equals_level;
    rule.level = level_from(condition.at("equals_level"), where + ".if.equals_level");
  } else if (condition.value("invalid", false)) {
    rule.match = Rule::Match::category_invalid;
    rule.category_id = condition.at("category").get<std::string>();
  } else {
    throw Error(ErrorCode::policy_error, where + ": 'if' needs contains, equals_level or invalid");
  }
  if (effect.contains("force")) {
    rule.effect = Rule::Effect::force_decision;
    rule.forced = decision_from(effect.at("force"), where + ".then.force");
  } else if (effect.contains("raise_to")) {
    rule.effect = Rule::Effect::raise_minimum_level;
    rule.raise_to = level_from(effect.at("raise_to"), where + ".then.raise_to");
  } else {
    throw Error(ErrorCode::policy_error, where + ": 'then' needs force or raise_to");
  }
  return rule;
}

Json rule_to_json(const Rule &rule) {
  Json condition;
  switch (rule.match) {
  case Rule::Match::contains_option:
    condition = {{"category", rule.category_id}, {"contains", rule.option_id}};
    break;
  case Rule::Match::equals_level:
    condition = {{"equals_level", to_string(rule.level)}};
    break;
  case Rule::Match::category_invalid:
    condition = {{"category", rule.category_id}, {"invalid", true}};
    break;
  }
  Json effect = rule.effect == Rule::Effect::force_decision ? Json{{"force", to_string(rule.forced)}}
                                                            : Json{{"raise_to", to_string(rule.raise_to)}};
  return {{"if", std::move(condition)}, {"then", std::move(effect)}};
}

struct Evaluated {
  DecisionKind kind;
  std::string rationale;
};

Evaluated evaluate_at(const Prediction &prediction, ImpactLevel level, const Policy &policy) {
  auto probe = prediction;
  probe.impact_level = level;
  for (std::size_t i = 0; i < policy.rules.size(); ++i) {
    const auto &rule = policy.rules[i];
    if (!rule.matches(probe)) {
      continue;
    }
    const auto label = "rule " + std::to_string(i) + " (" + rule.describe() + ")";
    if (rule.effect == Rule::Effect::force_decision) {
      const auto kind = policy.allow_downgrades ? rule.forced : stricter(rule.forced, policy.mapped(level));
      return {kind, label};
    }
    const auto raised = std::max(level, rule.raise_to);
    return {policy.mapped(raised), label + ": level " + std::string(to_string(raised))};
  }
  return {policy.mapped(level), "default mapping for " + std::string(to_string(level))};
}

} // namespace

std::string_view to_string(DecisionKind kind) {
  switch (kind) {
  case DecisionKind::auto_execute: return "auto_execute";
  case DecisionKind::confirm_with_summary: return "confirm_with_summary";
  case DecisionKind::defer_to_human: return "defer_to_human";
  }
  return "defer_to_human";
}

std::optional<DecisionKind> parse_decision_kind(std::string_view text) {
  for (const auto kind : {DecisionKind::auto_execute, DecisionKind::confirm_with_summary, DecisionKind::defer_to_human}) {
    if (to_string(kind) == text) {
      return kind;
    }
  }
  return std::nullopt;
}

DecisionKind stricter(DecisionKind a, DecisionKind b) { return std::max(a, b); }

bool Rule::matches(const Prediction &prediction) const {
  switch (match) {
  case Match::contains_option: {
    const auto it = prediction.labels.find(category_id);
    return it != prediction.labels.end() &&
           (it->second.options.contains(option_id) || it->second.sub_options.contains(option_id));
  }
  case Match::equals_level:
    return prediction.impact_level == level;
  case Match::category_invalid:
    return !prediction.labels.contains(category_id);
  }
  return false;
}

std::string Rule::describe() const {
  std::string out;
  switch (match) {
  case Match::contains_option: out = category_id + " contains " + option_id; break;
  case Match::equals_level: out = "level is " + std::string(to_string(level)); break;
  case Match::category_invalid: out = category_id + " has no usable answer"; break;
  }
  if (effect == Effect::force_decision) {
    out += " -> " + std::string(to_string(forced));
  } else {
    out += " -> at least " + std::string(to_string(raise_to));
  }
  return out;
}

void validate_policy(const Policy &policy, const Taxonomy &taxonomy) {
  for (std::size_t i = 0; i < policy.rules.size(); ++i) {
    const auto &rule = policy.rules[i];
    const auto where = "rules[" + std::to_string(i) + "]";
    if (rule.match == Rule::Match::contains_option || rule.match == Rule::Match::category_invalid) {
      const auto *category = taxonomy.find(rule.category_id);
      if (category == nullptr) {
        throw Error(ErrorCode::policy_error, where + ": unknown category '" + rule.category_id + "'");
      }
      if (rule.match == Rule::Match::contains_option && category->find_option(rule.option_id) == nullptr) {
        bool sub_option = false;
        for (const auto &option : category->options) {
          for (const auto &sub : option.sub_options) {
            sub_option = sub_option || sub.id == rule.option_id;
          }
        }
        if (!sub_option) {
          throw Error(ErrorCode::policy_error,
                      where + ": unknown option '" + rule.option_id + "' in '" + rule.category_id + "'");
        }
      }
    }
    if (!policy.allow_downgrades && rule.effect == Rule::Effect::force_decision &&
        rule.forced == DecisionKind::auto_execute) {
      throw Error(ErrorCode::policy_error, where + ": forcing auto_execute needs allow_downgrades");
    }
  }
  if (!policy.allow_downgrades &&
      !std::is_sorted(policy.default_mapping.begin(), policy.default_mapping.end())) {
    throw Error(ErrorCode::policy_error, "default mapping relaxes a higher level; set allow_downgrades to permit it");
  }
}

Policy policy_from_json(const Json &value) {
  try {
    Policy policy;
    policy.allow_downgrades = value.value("allow_downgrades", false);
    if (const auto mapping = value.find("default_mapping"); mapping != value.end()) {
      for (const auto level : kImpactLevels) {
        if (!mapping->contains(std::string(to_string(level)))) {
          throw Error(ErrorCode::policy_error, "default_mapping has no entry for " + std::string(to_string(level)));
        }
      }
      for (const auto &[level_name, decision] : mapping->items()) {
        const auto level = parse_impact_level(level_name);
        if (!level) {
          throw Error(ErrorCode::policy_error, "default_mapping: unknown level '" + level_name + "'");
        }
        policy.default_mapping[static_cast<std::size_t>(*level)] = decision_from(decision, "default_mapping");
      }
    }
    const auto rules = value.value("rules", Json::array());
    for (std::size_t i = 0; i < rules.size(); ++i) {
      policy.rules.push_back(rule_from_json(rules[i], i));
    }
    return policy;
  } catch (const Json::exception &e) {
    throw Error(ErrorCode::policy_error, std::string("policy: ") + e.what());
  }
}

Json to_json(const Policy &policy) {
  Json mapping = Json::object();
  for (const auto level : kImpactLevels) {
    mapping[std::string(to_string(level))] = to_string(policy.mapped(level));
  }
  Json rules = Json::array();
  for (const auto &rule : policy.rules) {
    rules.push_back(rule_to_json(rule));
  }
  return {{"default_mapping", std::move(mapping)},
          {"allow_downgrades", policy.allow_downgrades},
          {"rules", std::move(rules)}};
}

Policy load_policy_file(const std::filesystem::path &path, const Taxonomy &taxonomy) {
  Json document;
  try {
    document = Json::parse(read_file(path));
  } catch (const Json::exception &e) {
    throw Error(ErrorCode::policy_error, path.string() + ": " + e.what());
  }
  auto policy = policy_from_json(document);
  validate_policy(policy, taxonomy);
  return policy;
}

Decision apply_policy(const Outcome &outcome, const Policy &policy) {
  if (const auto *answer = std::get_if<InvalidAnswer>(&outcome)) {
    return {DecisionKind::defer_to_human,
            "invalid answer (" + std::string(to_string(answer->reason)) + "): " + answer->detail, ""};
  }
  const auto &prediction = std::get<Prediction>(outcome);
  if (!prediction.impact_level) {
    return {DecisionKind::defer_to_human, "prediction has no impact level", ""};
  }
  const auto level = *prediction.impact_level;
  auto result = evaluate_at(prediction, level, policy);
  if (!policy.allow_downgrades) {
    for (const auto lower : kImpactLevels) {
      if (lower >= level) {
        break;
      }
      auto candidate = evaluate_at(prediction, lower, policy);
      if (candidate.kind > result.kind) {
        result = {candidate.kind, candidate.rationale + " (carried up from " + std::string(to_string(lower)) + ")"};
      }
    }
  }
  return {result.kind, std::move(result.rationale), ""};
}

std::string summarize_action(const Trace &trace) {
  std::string out = "Action: " + trace.action_description;
  if (!trace.app_name.empty()) {
    out += " in " + trace.app_name;
  }
  out += ".";
  if (trace.screens.empty()) {
    return out;
  }
  const auto &final_screen = trace.screens.back();
  std::vector<std::string> salient;
  for (const auto &element : final_screen.elements) {
    if (element.clickable && !element.text.empty()) {
      salient.push_back(element.text);
    }
    if (salient.size() == 5) {
      break;
    }
  }
  out += " Final screen (" + std::to_string(trace.screens.size()) + " of " + std::to_string(trace.screens.size()) + ")";
  if (salient.empty()) {
    out += " has no labeled controls.";
    return out;
  }
  out += " offers:";
  for (std::size_t i = 0; i < salient.size(); ++i) {
    out += (i == 0 ? " \"" : ", \"") + salient[i] + "\"";
  }
  out += ".";
  return out;
}

Assessment assess(const Trace &trace, Strategy strategy, Backend &backend, const Taxonomy &taxonomy,
                  const Policy &policy, const ExemplarBank *bank) {
  Outcome outcome;
  try {
    PromptOptions options;
    options.screens_as_images = backend.descriptor().capability == Capability::multimodal;
    outcome = classify(build_prompt(strategy, trace, taxonomy, bank, options), backend, taxonomy);
  } catch (const Error &e) {
    InvalidAnswer answer;
    answer.trace_id = trace.trace_id;
    answer.strategy = strategy;
    answer.backend = backend.descriptor().name;
    answer.reason = e.code() == ErrorCode::transport_failure ? InvalidReason::transport_failure
                                                              : InvalidReason::unparseable;
    answer.detail = e.what();
    outcome = std::move(answer);
  }
  auto decision = apply_policy(outcome, policy);
  if (decision.kind == DecisionKind::confirm_with_summary) {
    decision.summary_text = summarize_action(trace);
  }
  return {std::move(decision), std::move(outcome)};
}

Json to_json(const Decision &decision) {
  Json out = {{"decision", to_string(decision.kind)}, {"rationale", decision.rationale}};
  if (decision.kind == DecisionKind::confirm_with_summary) {
    out["summary_text"] = decision.summary_text;
  }
  return out;
}

Json to_json(const Assessment &assessment) {
  auto out = to_json(assessment.decision);
  out["outcome"] = to_json(assessment.outcome);
  return out;
}

} // namespace impact_gate
