#include "impact_gate/prompt.hpp"

#include <cctype>

#include "impact_gate/error.hpp"
#include "impact_gate/resources.hpp"

namespace impact_gate {

namespace {

constexpr std::string_view kKnowledgeSlot = "{{taxonomy_knowledge}}";
constexpr std::string_view kExemplarSlot = "{{exemplars}}";
constexpr std::string_view kContractSlot = "{{response_contract}}";

void replace_all(std::string &text, std::string_view slot, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(slot, pos)) != std::string::npos) {
    text.replace(pos, slot.size(), value);
    pos += value.size();
  }
}

std::string render_label(const Category &category, const LabelSet *labels,
                         const std::map<std::string, std::string> &overrides) {
  if (const auto it = overrides.find(category.id); it != overrides.end()) {
    return it->second;
  }
  if (labels == nullptr || labels->options.empty()) {
    return "No Impact";
  }
  std::string out;
  for (const auto &option : category.options) {
    if (labels->options.contains(option.id)) {
      if (!out.empty()) {
        out += ", ";
      }
      out += option.display_name;
    }
  }
  if (labels->time_bound) {
    out += " Timely";
  }
  return out;
}

std::string render_label_lines(const Taxonomy &taxonomy, const Exemplar &exemplar,
                               const std::map<std::string, std::string> &overrides) {
  std::string out;
  for (const auto &category : taxonomy.categories()) {
    const auto it = exemplar.labels.find(category.id);
    out += category.display_name + ": " +
           render_label(category, it == exemplar.labels.end() ? nullptr : &it->second, overrides) + "\n";
  }
  return out;
}

std::string render_icl_exemplars(const Taxonomy &taxonomy, const ExemplarBank &bank) {
  std::string out;
  for (std::size_t i = 0; i < bank.exemplars.size(); ++i) {
    const auto &exemplar = bank.exemplars[i];
    if (i > 0) {
      out += "\n\n";
    }
    out += "Example " + std::to_string(i + 1) + ":\n\nAction: " + exemplar.action + "\n";
    out += render_label_lines(taxonomy, exemplar, exemplar.label_text);
    out += "Impact Level: " + std::string(display_name(exemplar.impact_level)) + "\n";
    out += "Justification: " + exemplar.justification;
  }
  return out;
}

std::string render_cot_exemplars(const Taxonomy &taxonomy, const ExemplarBank &bank) {
  std::string out;
  for (const auto &exemplar : bank.exemplars) {
    if (!exemplar.reasoning) {
      continue;
    }
    const auto &reasoning = *exemplar.reasoning;
    if (!out.empty()) {
      out += "\n\n";
    }
    out += "Example Action: " + exemplar.action + "\n\n";
    out += render_label_lines(taxonomy, exemplar, reasoning.label_text);
    out += "Impact Level: " + std::string(display_name(exemplar.impact_level)) + "\n";
    out += "Justification: " + exemplar.justification + "\n\n";
    out += "Reasoning: " + reasoning.narrative + "\n";
    out += "Impact Level: " + std::string(display_name(reasoning.impact_level)) + "\n";
    out += "Justification: " + reasoning.justification;
  }
  return out;
}

ImpactLevel level_field(const Json &value, const std::string &where) {
  const auto level = parse_impact_level(value.get<std::string>());
  if (!level) {
    throw Error(ErrorCode::parse_error, where + ": unknown impact level");
  }
  return *level;
}

std::map<std::string, std::string> label_text_from_json(const Json &value, const Taxonomy &taxonomy) {
  std::map<std::string, std::string> out;
  for (const auto &[category_id, text] : value.items()) {
    (void)taxonomy.at(category_id); // throws for unknown ids
    out.emplace(category_id, text.get<std::string>());
  }
  return out;
}

ExemplarBank parse_bank(const Json &doc, const Taxonomy &taxonomy) {
  if (!doc.is_object() || !doc.contains("exemplars") || !doc["exemplars"].is_array()) {
    throw Error(ErrorCode::parse_error, "exemplar bank needs an 'exemplars' array");
  }
  ExemplarBank bank;
  bank.version = doc.value("version", std::string{});
  for (const auto &raw : doc["exemplars"]) {
    Exemplar exemplar;
    exemplar.trace_id = raw.value("trace_id", std::string{});
    exemplar.action = raw.at("action").get<std::string>();
    exemplar.labels = labels_from_json(raw.value("labels", Json::object()));
    for (const auto &[category_id, labels] : exemplar.labels) {
      validate_labels(taxonomy, labels);
    }
    exemplar.label_text = label_text_from_json(raw.value("label_text", Json::object()), taxonomy);
    exemplar.impact_level = level_field(raw.at("impact_level"), exemplar.trace_id);
    exemplar.justification = raw.value("justification", std::string{});
    if (const auto cot = raw.find("cot"); cot != raw.end()) {
      Exemplar::Reasoning reasoning;
      reasoning.label_text = label_text_from_json(cot->value("label_text", Json::object()), taxonomy);
      reasoning.narrative = cot->at("reasoning").get<std::string>();
      reasoning.impact_level = level_field(cot->at("impact_level"), exemplar.trace_id);
      reasoning.justification = cot->value("justification", std::string{});
      exemplar.reasoning = std::move(reasoning);
    }
    bank.exemplars.push_back(std::move(exemplar));
  }
  return bank;
}

} // namespace

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
  case Strategy::zero_shot: return "zero_shot";
  case Strategy::kap: return "kap";
  case Strategy::icl: return "icl";
  case Strategy::cot: return "cot";
  }
  return "zero_shot";
}

std::optional<Strategy> parse_strategy(std::string_view text) {
  for (const auto strategy : kStrategies) {
    if (to_string(strategy) == text) {
      return strategy;
    }
  }
  return std::nullopt;
}

const ExemplarBank &default_exemplar_bank() {
  static const ExemplarBank bank =
      parse_bank(Json::parse(resources::get("exemplars_default.json")), default_taxonomy());
  return bank;
}

ExemplarBank load_exemplar_bank(std::string_view document, const Taxonomy &taxonomy) {
  try {
    return parse_bank(Json::parse(document), taxonomy);
  } catch (const Json::exception &e) {
    throw Error(ErrorCode::parse_error, std::string("exemplar bank: ") + e.what());
  }
}

ExemplarBank load_exemplar_bank_file(const std::filesystem::path &path, const Taxonomy &taxonomy) {
  return load_exemplar_bank(read_file(path), taxonomy);
}

Json to_json(const ExemplarBank &bank) {
  Json exemplars = Json::array();
  for (const auto &exemplar : bank.exemplars) {
    Json entry = {{"trace_id", exemplar.trace_id},
                  {"action", exemplar.action},
                  {"labels", labels_to_json(exemplar.labels)},
                  {"label_text", exemplar.label_text},
                  {"impact_level", to_string(exemplar.impact_level)},
                  {"justification", exemplar.justification}};
    if (exemplar.reasoning) {
      entry["cot"] = {{"label_text", exemplar.reasoning->label_text},
                      {"reasoning", exemplar.reasoning->narrative},
                      {"impact_level", to_string(exemplar.reasoning->impact_level)},
                      {"justification", exemplar.reasoning->justification}};
    }
    exemplars.push_back(std::move(entry));
  }
  return {{"version", bank.version}, {"exemplars", std::move(exemplars)}};
}

std::string bank_hash(const ExemplarBank &bank) { return fnv1a64_hex(to_json(bank).dump()); }

std::string knowledge_block(const Taxonomy &taxonomy) {
  std::string out;
  for (const auto &category : taxonomy.categories()) {
    if (!out.empty()) {
      out += '\n';
    }
    out += category.display_name + ":";
    if (!category.question.empty()) {
      out += " " + category.question;
    }
    out += " (";
    for (std::size_t i = 0; i < category.options.size(); ++i) {
      if (i > 0) {
        out += ", ";
      }
      out += category.options[i].display_name;
    }
    out += ")";
  }
  return out;
}

std::string_view prompt_template(Strategy strategy) {
  switch (strategy) {
  case Strategy::zero_shot: return resources::get("prompts/zero_shot.txt");
  case Strategy::kap: return resources::get("prompts/kap.txt");
  case Strategy::icl: return resources::get("prompts/icl.txt");
  case Strategy::cot: return resources::get("prompts/cot.txt");
  }
  return resources::get("prompts/zero_shot.txt");
}

std::string template_hash(Strategy strategy) {
  std::string material(prompt_template(strategy));
  material += resources::get("prompts/response_contract.txt");
  return fnv1a64_hex(material);
}

std::string render_system_text(Strategy strategy, const Taxonomy &taxonomy, const ExemplarBank *bank) {
  const bool needs_bank = strategy == Strategy::icl || strategy == Strategy::cot;
  if (needs_bank && (bank == nullptr || bank->exemplars.empty())) {
    throw Error(ErrorCode::missing_bank, std::string(to_string(strategy)) + " needs a non-empty exemplar bank");
  }
  std::string text(prompt_template(strategy));
  if (strategy == Strategy::zero_shot) {
    return text;
  }
  std::string exemplars;
  if (strategy == Strategy::icl) {
    exemplars = render_icl_exemplars(taxonomy, *bank);
  } else if (strategy == Strategy::cot) {
    exemplars = render_cot_exemplars(taxonomy, *bank);
    if (exemplars.empty()) {
      throw Error(ErrorCode::missing_bank, "cot needs at least one exemplar with a reasoning narrative");
    }
  }
  replace_all(text, kKnowledgeSlot, knowledge_block(taxonomy));
  replace_all(text, kExemplarSlot, exemplars);
  replace_all(text, kContractSlot, trim(resources::get("prompts/response_contract.txt")));
  return text;
}

PromptBundle build_prompt(Strategy strategy, const Trace &trace, const Taxonomy &taxonomy,
                          const ExemplarBank *bank, const PromptOptions &options) {
  if (trace.screens.empty()) {
    throw Error(ErrorCode::empty_trace, trace.trace_id + " has no screens");
  }
  PromptBundle bundle;
  bundle.trace_id = trace.trace_id;
  bundle.strategy = strategy;
  bundle.system_text = render_system_text(strategy, taxonomy, bank);

  const auto count = trace.screens.size();
  std::size_t keep_front = count;
  std::size_t keep_back = 0;
  if (options.max_screens > 0 && count > options.max_screens) {
    const auto budget = std::max<std::size_t>(options.max_screens, 2);
    keep_back = budget / 2;
    keep_front = budget - keep_back;
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (i == keep_front && keep_back > 0) {
      ContentPart note;
      note.text = "[" + std::to_string(count - keep_front - keep_back) + " intermediate screens omitted]";
      bundle.content_parts.push_back(std::move(note));
    }
    if (i >= keep_front && i < count - keep_back) {
      continue;
    }
    const auto &screen = trace.screens[i];
    ContentPart part;
    part.screen_index = screen.index;
    if (options.screens_as_images) {
      part.kind = ContentPart::Kind::screen_image;
      part.image_ref = screen.image_ref;
      part.html = serialize_screen_html(screen);
    } else {
      part.kind = ContentPart::Kind::screen_html;
      part.text = serialize_screen_html(screen);
    }
    bundle.content_parts.push_back(std::move(part));
  }
  ContentPart description;
  description.text = "Action: " + trace.action_description;
  bundle.content_parts.push_back(std::move(description));

  if (strategy != Strategy::zero_shot) {
    for (const auto &category : taxonomy.categories()) {
      bundle.expected_fields.push_back(category.id);
    }
  }
  bundle.expected_fields.emplace_back("impact_level");
  return bundle;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (const char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += c;
  }
  return out;
}

} // namespace impact_gate
