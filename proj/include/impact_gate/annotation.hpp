#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "impact_gate/trace.hpp"

namespace impact_gate {

enum class AnnotatorRole { annotator, adjudicator, both };

std::string_view to_string(AnnotatorRole role);
std::optional<AnnotatorRole> parse_annotator_role(std::string_view text);

enum class TaskStateKind {
  unassigned,
  single_annotated,
  dual_annotated,
  needs_adjudication,
  gold_ready,
  skipped_incomplete,
};

std::string_view to_string(TaskStateKind kind);

struct TaskState {
  std::string trace_id;
  TaskStateKind state = TaskStateKind::unassigned;
  std::vector<std::string> assigned;       // primary annotators, at most two
  std::vector<AnnotationRecord> submitted; // in submission order
  std::vector<std::string> differing_fields;
  std::optional<AnnotationRecord> adjudication;

  friend bool operator==(const TaskState &, const TaskState &) = default;
};

Json to_json(const TaskState &state);

struct Disagreement {
  bool agree = true;
  std::vector<std::string> fields; // category ids, then "impact_level"
};

/// Set comparison per category plus the impact level. Both records must be
/// non-skipped and for the same trace (Error(trace_mismatch) otherwise).
Disagreement detect_disagreement(const AnnotationRecord &a, const AnnotationRecord &b);

/// Three-record merge: an option is kept iff at least two records chose it.
/// Single-label categories vote over "option or none" and fall back to the
/// adjudicator's answer without a two-vote majority. The level is the median.
GoldRecord merge_adjudicated(const Taxonomy &taxonomy, const AnnotationRecord &first,
                             const AnnotationRecord &second, const AnnotationRecord &adjudicator);

struct GoldFilter {
  std::optional<TraceSource> source;
};

/// Dual-annotation workflow over a fixed corpus, persisted as an append-only
/// JSON Lines event log. State is always derived by replaying events, so a
/// restart over the same log reproduces it exactly. A trailing partial line
/// left by an interrupted write is discarded on load.
///
/// All public members are safe to call concurrently.
class AnnotationStore {
public:
  AnnotationStore(Taxonomy taxonomy, std::vector<Trace> corpus,
                  std::optional<std::filesystem::path> log_path = std::nullopt);

  void register_annotator(const std::string &annotator_id, AnnotatorRole role);

  /// Hands out a trace this annotator has never been assigned, preferring
  /// traces with the fewest completed annotations. An annotator with an open
  /// assignment gets that assignment back.
  std::optional<std::string> next_task(const std::string &annotator_id);

  TaskState submit_annotation(const AnnotationRecord &record);
  GoldRecord submit_adjudication(const std::string &trace_id, const AnnotationRecord &record);

  [[nodiscard]] std::vector<TaskState> pending_adjudications() const;
  [[nodiscard]] std::vector<GoldRecord> export_gold(const GoldFilter &filter = {}) const;
  [[nodiscard]] Json export_summary(const GoldFilter &filter = {}) const;
  [[nodiscard]] TaskState state(const std::string &trace_id) const;
  [[nodiscard]] std::optional<Trace> trace(const std::string &trace_id) const;
  [[nodiscard]] const Taxonomy &taxonomy() const { return taxonomy_; }

  /// Complete derived state, for equality checks across restarts.
  [[nodiscard]] Json snapshot() const;
  [[nodiscard]] std::size_t event_count() const;

  void flush();

private:
  struct Annotator {
    AnnotatorRole role = AnnotatorRole::annotator;
    std::set<std::string> ever_assigned;
  };

  void append_and_apply(Json event);
  void apply(const Json &event);
  void finish_dual(TaskState &task);
  TaskState &task_for(const std::string &trace_id);
  [[nodiscard]] const TaskState &task_for(const std::string &trace_id) const;
  [[nodiscard]] bool matches(const GoldFilter &filter, const std::string &trace_id) const;

  Taxonomy taxonomy_;
  std::vector<Trace> corpus_;
  std::map<std::string, std::size_t> trace_index_;
  std::map<std::string, Annotator> annotators_;
  std::vector<TaskState> tasks_; // parallel to corpus_
  std::map<std::string, GoldRecord> gold_;
  std::size_t events_ = 0;

  std::optional<std::filesystem::path> log_path_;
  std::ofstream log_;
  mutable std::mutex mutex_;
};

} // namespace impact_gate
