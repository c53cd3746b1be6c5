#include "impact_gate/taxonomy.hpp"

#include <set>

#include "impact_gate/error.hpp"
#include "impact_gate/resources.hpp"

namespace impact_gate {

namespace {

constexpr std::string_view kDefaultResource = "taxonomy_default.json";

std::string require_string(const Json &object, const char *key, const std::string &where) {
  const auto it = object.find(key);
  if (it == object.end() || !it->is_string()) {
    throw Error(ErrorCode::parse_error, where + ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

bool optional_bool(const Json &object, const char *key, bool fallback) {
  const auto it = object.find(key);
  if (it == object.end()) {
    return fallback;
  }
  if (!it->is_boolean()) {
    throw Error(ErrorCode::parse_error, std::string("field '") + key + "' must be a boolean");
  }
  return it->get<bool>();
}

Taxonomy parse_taxonomy(const Json &doc) {
  if (!doc.is_object() || !doc.contains("categories") || !doc["categories"].is_array()) {
    throw Error(ErrorCode::parse_error, "taxonomy document needs a 'categories' array");
  }
  std::vector<Category> categories;
  std::set<std::string> category_ids;
  for (const auto &entry : doc["categories"]) {
    if (!entry.is_object()) {
      throw Error(ErrorCode::parse_error, "category entries must be objects");
    }
    Category category;
    category.id = require_string(entry, "id", "category");
    category.display_name = require_string(entry, "display_name", category.id);
    category.question = entry.value("question", std::string{});
    category.multi_label = optional_bool(entry, "multi_label", false);
    category.evaluated_by_default = optional_bool(entry, "evaluated_by_default", true);
    if (!category_ids.insert(category.id).second) {
      throw Error(ErrorCode::duplicate_identifier, "category '" + category.id + "' appears twice");
    }
    const auto options = entry.find("options");
    if (options == entry.end() || !options->is_array() || options->empty()) {
      throw Error(ErrorCode::empty_category, "category '" + category.id + "' has no options");
    }
    std::set<std::string> option_ids;
    for (const auto &raw_option : *options) {
      OptionDef option;
      option.id = require_string(raw_option, "id", category.id);
      option.display_name = require_string(raw_option, "display_name", category.id + "." + option.id);
      if (!option_ids.insert(option.id).second) {
        throw Error(ErrorCode::duplicate_identifier,
                    "option '" + option.id + "' appears twice in '" + category.id + "'");
      }
      if (const auto subs = raw_option.find("sub_options"); subs != raw_option.end()) {
        std::set<std::string> sub_ids;
        for (const auto &raw_sub : *subs) {
          SubOptionDef sub{require_string(raw_sub, "id", option.id),
                           require_string(raw_sub, "display_name", option.id)};
          if (!sub_ids.insert(sub.id).second) {
            throw Error(ErrorCode::duplicate_identifier,
                        "sub-option '" + sub.id + "' appears twice in '" + option.id + "'");
          }
          option.sub_options.push_back(std::move(sub));
        }
      }
      category.options.push_back(std::move(option));
    }
    categories.push_back(std::move(category));
  }
  if (categories.empty()) {
    throw Error(ErrorCode::parse_error, "taxonomy has no categories");
  }
  return Taxonomy(doc.value("version", std::string{}), std::move(categories));
}

} // namespace

std::string_view to_string(ImpactLevel level) {
  switch (level) {
  case ImpactLevel::minimum: return "minimum";
  case ImpactLevel::moderate: return "moderate";
  case ImpactLevel::significant: return "significant";
  }
  return "minimum";
}

std::string_view display_name(ImpactLevel level) {
  switch (level) {
  case ImpactLevel::minimum: return "Minimum";
  case ImpactLevel::moderate: return "Moderate";
  case ImpactLevel::significant: return "Significant";
  }
  return "Minimum";
}

std::optional<ImpactLevel> parse_impact_level(std::string_view text) {
  const auto key = normalize_key(text);
  if (key == "minimum" || key == "minimal") {
    return ImpactLevel::minimum;
  }
  if (key == "moderate") {
    return ImpactLevel::moderate;
  }
  if (key == "significant") {
    return ImpactLevel::significant;
  }
  return std::nullopt;
}

const OptionDef *Category::find_option(std::string_view option_id) const {
  for (const auto &option : options) {
    if (option.id == option_id) {
      return &option;
    }
  }
  return nullptr;
}

Taxonomy::Taxonomy(std::string version, std::vector<Category> categories)
    : version_(std::move(version)), categories_(std::move(categories)) {}

std::size_t Taxonomy::option_count() const {
  std::size_t count = 0;
  for (const auto &category : categories_) {
    count += category.options.size();
  }
  return count;
}

const Category *Taxonomy::find(std::string_view category_id) const {
  for (const auto &category : categories_) {
    if (category.id == category_id) {
      return &category;
    }
  }
  return nullptr;
}

const Category &Taxonomy::at(std::string_view category_id) const {
  if (const auto *category = find(category_id)) {
    return *category;
  }
  throw Error(ErrorCode::unknown_category, std::string(category_id));
}

std::vector<std::string> Taxonomy::evaluated_category_ids() const {
  std::vector<std::string> ids;
  for (const auto &category : categories_) {
    if (category.evaluated_by_default) {
      ids.push_back(category.id);
    }
  }
  return ids;
}

const Taxonomy &default_taxonomy() {
  static const Taxonomy taxonomy = parse_taxonomy(Json::parse(resources::get(kDefaultResource)));
  return taxonomy;
}

void validate_labels(const Taxonomy &taxonomy, const LabelSet &labels) {
  const auto &category = taxonomy.at(labels.category_id);
  for (const auto &option_id : labels.options) {
    if (category.find_option(option_id) == nullptr) {
      throw Error(ErrorCode::unknown_option, category.id + "." + option_id);
    }
  }
  if (!category.multi_label && labels.options.size() > 1) {
    throw Error(ErrorCode::cardinality_violation,
                "'" + category.id + "' takes at most one option, got " + std::to_string(labels.options.size()));
  }
  for (const auto &sub_id : labels.sub_options) {
    bool found = false;
    for (const auto &option_id : labels.options) {
      for (const auto &sub : category.find_option(option_id)->sub_options) {
        found = found || sub.id == sub_id;
      }
    }
    if (!found) {
      throw Error(ErrorCode::unknown_option, category.id + " sub-option " + sub_id);
    }
  }
}

bool is_multi_label(const Taxonomy &taxonomy, std::string_view category_id) {
  return taxonomy.at(category_id).multi_label;
}

Taxonomy load_taxonomy(std::string_view document) {
  if (trim(document).empty()) {
    return default_taxonomy();
  }
  Json doc;
  try {
    doc = Json::parse(document);
  } catch (const Json::exception &e) {
    throw Error(ErrorCode::parse_error, e.what());
  }
  auto taxonomy = parse_taxonomy(doc);
  const auto &fallback = default_taxonomy();
  const bool same_as_default = to_json(taxonomy)["categories"] == to_json(fallback)["categories"];
  if (!same_as_default && (taxonomy.version().empty() || taxonomy.version() == fallback.version())) {
    return Taxonomy("custom", taxonomy.categories());
  }
  if (taxonomy.version().empty()) {
    return Taxonomy(fallback.version(), taxonomy.categories());
  }
  return taxonomy;
}

Taxonomy load_taxonomy_file(const std::filesystem::path &path) {
  return load_taxonomy(read_file(path));
}

Json to_json(const Taxonomy &taxonomy) {
  Json categories = Json::array();
  for (const auto &category : taxonomy.categories()) {
    Json options = Json::array();
    for (const auto &option : category.options) {
      Json entry = {{"id", option.id}, {"display_name", option.display_name}};
      if (!option.sub_options.empty()) {
        Json subs = Json::array();
        for (const auto &sub : option.sub_options) {
          subs.push_back({{"id", sub.id}, {"display_name", sub.display_name}});
        }
        entry["sub_options"] = std::move(subs);
      }
      options.push_back(std::move(entry));
    }
    categories.push_back({{"id", category.id},
                          {"display_name", category.display_name},
                          {"question", category.question},
                          {"multi_label", category.multi_label},
                          {"evaluated_by_default", category.evaluated_by_default},
                          {"options", std::move(options)}});
  }
  return {{"version", taxonomy.version()}, {"categories", std::move(categories)}};
}

Json to_json(const LabelSet &labels) {
  Json options(labels.options);
  if (labels.sub_options.empty() && !labels.time_bound) {
    return options;
  }
  Json out = {{"options", std::move(options)}};
  if (!labels.sub_options.empty()) {
    out["sub_options"] = labels.sub_options;
  }
  if (labels.time_bound) {
    out["time_bound"] = true;
  }
  return out;
}

LabelSet label_set_from_json(std::string_view category_id, const Json &value) {
  LabelSet labels;
  labels.category_id = std::string(category_id);
  const auto read_ids = [&](const Json &array, std::set<std::string> &into) {
    if (!array.is_array()) {
      throw Error(ErrorCode::parse_error, "labels for '" + labels.category_id + "' must be an array");
    }
    for (const auto &id : array) {
      if (!id.is_string()) {
        throw Error(ErrorCode::parse_error, "label ids must be strings");
      }
      into.insert(id.get<std::string>());
    }
  };
  if (value.is_object()) {
    read_ids(value.value("options", Json::array()), labels.options);
    read_ids(value.value("sub_options", Json::array()), labels.sub_options);
    labels.time_bound = value.value("time_bound", false);
  } else {
    read_ids(value, labels.options);
  }
  return labels;
}

} // namespace impact_gate
