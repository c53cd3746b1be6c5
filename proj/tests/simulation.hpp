#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <string>

#include "impact_gate/annotation.hpp"
#include "support.hpp"

namespace impact_gate::testing {

/// Per-trace plan from annotation_script.jsonl, keyed by trace id.
inline std::map<std::string, Json> load_annotation_script() {
  std::map<std::string, Json> script;
  for (auto &entry : read_json_lines(fixture("annotation_script.jsonl"))) {
    const auto id = entry["trace_id"].get<std::string>();
    script.emplace(id, std::move(entry));
  }
  return script;
}

/// Plays annotators a1 and a2 through the script, with "adj" resolving each
/// disagreement as soon as it appears. The next move depends only on the
/// store's state (open adjudications first, then whichever annotator has
/// submitted less, a1 on ties), so a run resumed from a replayed log makes the
/// same moves as an uninterrupted one. Returns after `max_submissions`
/// submissions or when no work is left; the result is the number made.
inline std::size_t drive_annotation(AnnotationStore &store, const std::map<std::string, Json> &script,
                                    std::size_t max_submissions = std::numeric_limits<std::size_t>::max()) {
  const auto snapshot = store.snapshot();
  for (const auto &[id, role] : {std::pair{"a1", AnnotatorRole::annotator}, std::pair{"a2", AnnotatorRole::annotator},
                                 std::pair{"adj", AnnotatorRole::adjudicator}}) {
    if (!snapshot["annotators"].contains(id)) {
      store.register_annotator(id, role);
    }
  }
  std::map<std::string, std::size_t> done{{"a1", 0}, {"a2", 0}};
  for (const auto &task : snapshot["tasks"]) {
    for (const auto &record : task["submitted"]) {
      ++done[record["annotator_id"].get<std::string>()];
    }
  }
  std::size_t submissions = 0;
  while (submissions < max_submissions) {
    if (const auto pending = store.pending_adjudications(); !pending.empty()) {
      const auto &trace_id = pending.front().trace_id;
      (void)store.submit_adjudication(trace_id, annotation_from_json(script.at(trace_id)["adjudication"]));
      ++submissions;
      continue;
    }
    const std::string first = done["a1"] <= done["a2"] ? "a1" : "a2";
    const std::string second = first == "a1" ? "a2" : "a1";
    bool progressed = false;
    for (const auto &annotator : {first, second}) {
      if (const auto trace_id = store.next_task(annotator)) {
        (void)store.submit_annotation(annotation_from_json(script.at(*trace_id)["records"][annotator]));
        ++done[annotator];
        ++submissions;
        progressed = true;
        break;
      }
    }
    if (!progressed) {
      break;
    }
  }
  return submissions;
}

} // namespace impact_gate::testing
