#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "impact_gate/taxonomy.hpp"

namespace impact_gate {

using LabelMap = std::map<std::string, LabelSet>;

/// One annotator's answer for one trace.
struct AnnotationRecord {
  std::string trace_id;
  std::string annotator_id;
  LabelMap labels;
  std::optional<ImpactLevel> impact_level;
  std::string justification;
  bool skipped = false;
  std::string skip_reason;

  friend bool operator==(const AnnotationRecord &, const AnnotationRecord &) = default;
};

enum class GoldProvenance { agreement, adjudicated };

std::string_view to_string(GoldProvenance provenance);

struct GoldRecord {
  std::string trace_id;
  std::string source; // copied from the trace when known
  std::string task_domain;
  LabelMap labels;
  ImpactLevel impact_level = ImpactLevel::minimum;
  std::string justification;
  GoldProvenance provenance = GoldProvenance::agreement;
  std::vector<std::string> annotators;

  friend bool operator==(const GoldRecord &, const GoldRecord &) = default;
};

/// Annotation records must either be skips without labels or cover every
/// category of the taxonomy with valid labels and carry an impact level.
/// Throws Error(validation_error).
void validate_record(const Taxonomy &taxonomy, const AnnotationRecord &record);
void validate_gold(const Taxonomy &taxonomy, const GoldRecord &gold);

Json labels_to_json(const LabelMap &labels);
LabelMap labels_from_json(const Json &value);

Json to_json(const AnnotationRecord &record);
AnnotationRecord annotation_from_json(const Json &value);

Json to_json(const GoldRecord &gold);
GoldRecord gold_from_json(const Json &value);

std::vector<GoldRecord> read_gold_file(const std::filesystem::path &path);

} // namespace impact_gate
