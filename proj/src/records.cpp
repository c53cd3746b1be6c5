#include "impact_gate/records.hpp"

#include "impact_gate/error.hpp"

namespace impact_gate {

namespace {

ImpactLevel require_level(const Json &value, const std::string &where) {
  if (!value.is_string()) {
    throw Error(ErrorCode::parse_error, where + ": impact_level must be a string");
  }
  const auto level = parse_impact_level(value.get<std::string>());
  if (!level) {
    throw Error(ErrorCode::parse_error, where + ": unknown impact level '" + value.get<std::string>() + "'");
  }
  return *level;
}

std::string require_string(const Json &value, const char *key) {
  const auto it = value.find(key);
  if (it == value.end() || !it->is_string()) {
    throw Error(ErrorCode::parse_error, std::string("missing string field '") + key + "'");
  }
  return it->get<std::string>();
}

void validate_label_map(const Taxonomy &taxonomy, const LabelMap &labels, const std::string &trace_id) {
  for (const auto &[category_id, label_set] : labels) {
    if (label_set.category_id != category_id) {
      throw Error(ErrorCode::validation_error, trace_id + ": label set keyed under the wrong category");
    }
    try {
      validate_labels(taxonomy, label_set);
    } catch (const Error &e) {
      throw Error(ErrorCode::validation_error, trace_id + ": " + e.what());
    }
  }
  for (const auto &category : taxonomy.categories()) {
    if (!labels.contains(category.id)) {
      throw Error(ErrorCode::validation_error, trace_id + ": no answer for '" + category.id + "'");
    }
  }
}

} // namespace

std::string_view to_string(GoldProvenance provenance) {
  return provenance == GoldProvenance::agreement ? "agreement" : "adjudicated";
}

void validate_record(const Taxonomy &taxonomy, const AnnotationRecord &record) {
  if (record.trace_id.empty() || record.annotator_id.empty()) {
    throw Error(ErrorCode::validation_error, "record needs trace_id and annotator_id");
  }
  if (record.skipped) {
    if (!record.labels.empty() || record.impact_level) {
      throw Error(ErrorCode::validation_error, record.trace_id + ": skipped records carry no labels");
    }
    return;
  }
  if (!record.impact_level) {
    throw Error(ErrorCode::validation_error, record.trace_id + ": missing impact level");
  }
  validate_label_map(taxonomy, record.labels, record.trace_id);
}

void validate_gold(const Taxonomy &taxonomy, const GoldRecord &gold) {
  validate_label_map(taxonomy, gold.labels, gold.trace_id);
}

Json labels_to_json(const LabelMap &labels) {
  Json out = Json::object();
  for (const auto &[category_id, label_set] : labels) {
    out[category_id] = to_json(label_set);
  }
  return out;
}

LabelMap labels_from_json(const Json &value) {
  if (!value.is_object()) {
    throw Error(ErrorCode::parse_error, "labels must be an object keyed by category id");
  }
  LabelMap labels;
  for (const auto &[category_id, entry] : value.items()) {
    labels.emplace(category_id, label_set_from_json(category_id, entry));
  }
  return labels;
}

Json to_json(const AnnotationRecord &record) {
  Json out = {{"trace_id", record.trace_id}, {"annotator_id", record.annotator_id}};
  if (record.skipped) {
    out["skipped"] = true;
    out["skip_reason"] = record.skip_reason;
    return out;
  }
  out["labels"] = labels_to_json(record.labels);
  if (record.impact_level) {
    out["impact_level"] = to_string(*record.impact_level);
  }
  out["justification"] = record.justification;
  return out;
}

AnnotationRecord annotation_from_json(const Json &value) {
  if (!value.is_object()) {
    throw Error(ErrorCode::parse_error, "annotation record must be an object");
  }
  AnnotationRecord record;
  record.trace_id = require_string(value, "trace_id");
  record.annotator_id = require_string(value, "annotator_id");
  record.skipped = value.value("skipped", false);
  record.skip_reason = value.value("skip_reason", std::string{});
  if (const auto labels = value.find("labels"); labels != value.end()) {
    record.labels = labels_from_json(*labels);
  }
  if (const auto level = value.find("impact_level"); level != value.end() && !level->is_null()) {
    record.impact_level = require_level(*level, record.trace_id);
  }
  record.justification = value.value("justification", std::string{});
  return record;
}

Json to_json(const GoldRecord &gold) {
  Json out = {{"trace_id", gold.trace_id},
              {"labels", labels_to_json(gold.labels)},
              {"impact_level", to_string(gold.impact_level)},
              {"justification", gold.justification},
              {"provenance", to_string(gold.provenance)},
              {"annotators", gold.annotators}};
  if (!gold.source.empty()) {
    out["source"] = gold.source;
  }
  if (!gold.task_domain.empty()) {
    out["task_domain"] = gold.task_domain;
  }
  return out;
}

GoldRecord gold_from_json(const Json &value) {
  if (!value.is_object()) {
    throw Error(ErrorCode::parse_error, "gold record must be an object");
  }
  GoldRecord gold;
  gold.trace_id = require_string(value, "trace_id");
  gold.labels = labels_from_json(value.value("labels", Json::object()));
  gold.impact_level = require_level(value.value("impact_level", Json()), gold.trace_id);
  gold.justification = value.value("justification", std::string{});
  const auto provenance = value.value("provenance", std::string("agreement"));
  if (provenance == "agreement") {
    gold.provenance = GoldProvenance::agreement;
  } else if (provenance == "adjudicated") {
    gold.provenance = GoldProvenance::adjudicated;
  } else {
    throw Error(ErrorCode::parse_error, gold.trace_id + ": unknown provenance '" + provenance + "'");
  }
  gold.annotators = value.value("annotators", std::vector<std::string>{});
  gold.source = value.value("source", std::string{});
  gold.task_domain = value.value("task_domain", std::string{});
  return gold;
}

std::vector<GoldRecord> read_gold_file(const std::filesystem::path &path) {
  std::vector<GoldRecord> golds;
  for (const auto &line : read_json_lines(path)) {
    golds.push_back(gold_from_json(line));
  }
  return golds;
}

} // namespace impact_gate
