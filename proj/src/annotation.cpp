#include "impact_gate/annotation.hpp"

#include "impact_gate/error.hpp"

#include <algorithm>
#include <tuple>

namespace impact_gate {

namespace {

bool retired(TaskStateKind kind) {
  return kind == TaskStateKind::gold_ready || kind == TaskStateKind::skipped_incomplete;
}

bool contains(const std::vector<std::string> &ids, const std::string &id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

bool has_submitted(const TaskState &task, const std::string &annotator_id) {
  return std::any_of(task.submitted.begin(), task.submitted.end(),
                     [&](const AnnotationRecord &r) { return r.annotator_id == annotator_id; });
}

const LabelSet &labels_of(const AnnotationRecord &record, const std::string &category_id) {
  static const LabelSet kEmpty;
  const auto it = record.labels.find(category_id);
  return it == record.labels.end() ? kEmpty : it->second;
}

template <typename Pick>
std::set<std::string> majority(const std::array<const LabelSet *, 3> &sets, Pick pick) {
  std::map<std::string, int> votes;
  for (const auto *set : sets) {
    for (const auto &id : pick(*set)) {
      ++votes[id];
    }
  }
  std::set<std::string> out;
  for (const auto &[id, count] : votes) {
    if (count >= 2) {
      out.insert(id);
    }
  }
  return out;
}

LabelSet merge_category(const Category &category, const std::array<const LabelSet *, 3> &sets) {
  LabelSet merged;
  merged.category_id = category.id;
  if (category.multi_label) {
    merged.options = majority(sets, [](const LabelSet &s) { return s.options; });
  } else {
    // Vote over "this option or none"; the adjudicator (last) breaks a three-way split.
    std::map<std::set<std::string>, int> votes;
    for (const auto *set : sets) {
      ++votes[set->options];
    }
    merged.options = sets[2]->options;
    for (const auto &[choice, count] : votes) {
      if (count >= 2) {
        merged.options = choice;
      }
    }
  }
  for (const auto &sub_id : majority(sets, [](const LabelSet &s) { return s.sub_options; })) {
    for (const auto &option_id : merged.options) {
      for (const auto &sub : category.find_option(option_id)->sub_options) {
        if (sub.id == sub_id) {
          merged.sub_options.insert(sub_id);
        }
      }
    }
  }
  const int time_votes = static_cast<int>(sets[0]->time_bound) + static_cast<int>(sets[1]->time_bound) +
                         static_cast<int>(sets[2]->time_bound);
  merged.time_bound = !merged.options.empty() && time_votes >= 2;
  return merged;
}

Json event(std::string_view type) { return Json{{"type", type}}; }

} // namespace

std::string_view to_string(AnnotatorRole role) {
  switch (role) {
  case AnnotatorRole::annotator: return "annotator";
  case AnnotatorRole::adjudicator: return "adjudicator";
  case AnnotatorRole::both: return "both";
  }
  return "annotator";
}

std::optional<AnnotatorRole> parse_annotator_role(std::string_view text) {
  for (const auto role : {AnnotatorRole::annotator, AnnotatorRole::adjudicator, AnnotatorRole::both}) {
    if (to_string(role) == text) {
      return role;
    }
  }
  return std::nullopt;
}

std::string_view to_string(TaskStateKind kind) {
  switch (kind) {
  case TaskStateKind::unassigned: return "unassigned";
  case TaskStateKind::single_annotated: return "single_annotated";
  case TaskStateKind::dual_annotated: return "dual_annotated";
  case TaskStateKind::needs_adjudication: return "needs_adjudication";
  case TaskStateKind::gold_ready: return "gold_ready";
  case TaskStateKind::skipped_incomplete: return "skipped_incomplete";
  }
  return "unassigned";
}

Json to_json(const TaskState &state) {
  Json submitted = Json::array();
  for (const auto &record : state.submitted) {
    submitted.push_back(to_json(record));
  }
  Json out = {{"trace_id", state.trace_id},
              {"state", to_string(state.state)},
              {"assigned", state.assigned},
              {"submitted", std::move(submitted)},
              {"differing_fields", state.differing_fields}};
  if (state.adjudication) {
    out["adjudication"] = to_json(*state.adjudication);
  }
  return out;
}

Disagreement detect_disagreement(const AnnotationRecord &a, const AnnotationRecord &b) {
  if (a.trace_id != b.trace_id) {
    throw Error(ErrorCode::trace_mismatch, "records for '" + a.trace_id + "' and '" + b.trace_id + "'");
  }
  if (a.skipped || b.skipped) {
    throw Error(ErrorCode::validation_error, a.trace_id + ": cannot compare skipped records");
  }
  Disagreement result;
  std::set<std::string> categories;
  for (const auto &[id, labels] : a.labels) {
    categories.insert(id);
  }
  for (const auto &[id, labels] : b.labels) {
    categories.insert(id);
  }
  for (const auto &id : categories) {
    const auto &left = labels_of(a, id);
    const auto &right = labels_of(b, id);
    if (left.options != right.options || left.sub_options != right.sub_options || left.time_bound != right.time_bound) {
      result.fields.push_back(id);
    }
  }
  if (a.impact_level != b.impact_level) {
    result.fields.emplace_back("impact_level");
  }
  result.agree = result.fields.empty();
  return result;
}

GoldRecord merge_adjudicated(const Taxonomy &taxonomy, const AnnotationRecord &first,
                             const AnnotationRecord &second, const AnnotationRecord &adjudicator) {
  for (const auto *record : {&first, &second, &adjudicator}) {
    if (record->skipped || !record->impact_level) {
      throw Error(ErrorCode::validation_error, record->trace_id + ": merge needs three complete records");
    }
    if (record->trace_id != first.trace_id) {
      throw Error(ErrorCode::trace_mismatch, "records for '" + first.trace_id + "' and '" + record->trace_id + "'");
    }
  }
  GoldRecord gold;
  gold.trace_id = first.trace_id;
  for (const auto &category : taxonomy.categories()) {
    gold.labels.emplace(category.id,
                        merge_category(category, {&labels_of(first, category.id), &labels_of(second, category.id),
                                                  &labels_of(adjudicator, category.id)}));
  }
  std::array<ImpactLevel, 3> levels = {*first.impact_level, *second.impact_level, *adjudicator.impact_level};
  std::sort(levels.begin(), levels.end());
  gold.impact_level = levels[1];
  gold.justification = adjudicator.justification;
  gold.provenance = GoldProvenance::adjudicated;
  gold.annotators = {first.annotator_id, second.annotator_id, adjudicator.annotator_id};
  return gold;
}

AnnotationStore::AnnotationStore(Taxonomy taxonomy, std::vector<Trace> corpus,
                                 std::optional<std::filesystem::path> log_path)
    : taxonomy_(std::move(taxonomy)), corpus_(std::move(corpus)), log_path_(std::move(log_path)) {
  for (std::size_t i = 0; i < corpus_.size(); ++i) {
    if (!trace_index_.emplace(corpus_[i].trace_id, i).second) {
      throw Error(ErrorCode::duplicate_identifier, "trace '" + corpus_[i].trace_id + "' appears twice");
    }
    TaskState task;
    task.trace_id = corpus_[i].trace_id;
    tasks_.push_back(std::move(task));
  }
  if (!log_path_) {
    return;
  }
  std::string text;
  if (std::filesystem::exists(*log_path_)) {
    text = read_file(*log_path_);
  } else if (log_path_->has_parent_path()) {
    std::filesystem::create_directories(log_path_->parent_path());
  }
  // An unterminated final line is a torn write; drop it and truncate the file.
  std::size_t good_end = text.size();
  if (!text.empty() && text.back() != '\n') {
    const auto last_newline = text.rfind('\n');
    good_end = last_newline == std::string::npos ? 0 : last_newline + 1;
  }
  std::vector<JsonLinesError> errors;
  const auto lines = parse_json_lines(std::string_view(text).substr(0, good_end), &errors);
  if (!errors.empty()) {
    throw Error(ErrorCode::io_error, log_path_->string() + ":" + std::to_string(errors.front().line_number) +
                                         ": corrupt event: " + errors.front().message);
  }
  for (const auto &line : lines) {
    try {
      apply(line.value);
    } catch (const std::exception &e) {
      throw Error(ErrorCode::io_error, log_path_->string() + ":" + std::to_string(line.line_number) +
                                           ": event does not replay: " + e.what());
    }
  }
  if (good_end != text.size()) {
    std::filesystem::resize_file(*log_path_, good_end);
  }
  log_.open(*log_path_, std::ios::app | std::ios::binary);
  if (!log_) {
    throw Error(ErrorCode::io_error, "cannot open event log " + log_path_->string());
  }
}

void AnnotationStore::register_annotator(const std::string &annotator_id, AnnotatorRole role) {
  std::lock_guard lock(mutex_);
  auto e = event("register");
  e["annotator"] = annotator_id;
  e["role"] = to_string(role);
  append_and_apply(std::move(e));
}

std::optional<std::string> AnnotationStore::next_task(const std::string &annotator_id) {
  std::lock_guard lock(mutex_);
  const auto annotator = annotators_.find(annotator_id);
  if (annotator == annotators_.end()) {
    throw Error(ErrorCode::unknown_annotator, annotator_id);
  }
  if (annotator->second.role == AnnotatorRole::adjudicator) {
    return std::nullopt;
  }
  for (const auto &task : tasks_) {
    if (!retired(task.state) && contains(task.assigned, annotator_id) && !has_submitted(task, annotator_id)) {
      return task.trace_id;
    }
  }
  const TaskState *best = nullptr;
  std::size_t best_index = 0;
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const auto &task = tasks_[i];
    if (retired(task.state) || task.assigned.size() >= 2 || annotator->second.ever_assigned.contains(task.trace_id)) {
      continue;
    }
    if (best == nullptr || std::make_tuple(task.submitted.size(), task.assigned.size(), i) <
                               std::make_tuple(best->submitted.size(), best->assigned.size(), best_index)) {
      best = &task;
      best_index = i;
    }
  }
  if (best == nullptr) {
    return std::nullopt;
  }
  const auto trace_id = best->trace_id;
  auto e = event("assign");
  e["annotator"] = annotator_id;
  e["trace_id"] = trace_id;
  append_and_apply(std::move(e));
  return trace_id;
}

TaskState AnnotationStore::submit_annotation(const AnnotationRecord &record) {
  std::lock_guard lock(mutex_);
  auto e = event("annotation");
  e["record"] = to_json(record);
  append_and_apply(std::move(e));
  return task_for(record.trace_id);
}

GoldRecord AnnotationStore::submit_adjudication(const std::string &trace_id, const AnnotationRecord &record) {
  std::lock_guard lock(mutex_);
  auto e = event("adjudication");
  e["trace_id"] = trace_id;
  e["record"] = to_json(record);
  append_and_apply(std::move(e));
  return gold_.at(trace_id);
}

std::vector<TaskState> AnnotationStore::pending_adjudications() const {
  std::lock_guard lock(mutex_);
  std::vector<TaskState> out;
  for (const auto &task : tasks_) {
    if (task.state == TaskStateKind::needs_adjudication) {
      out.push_back(task);
    }
  }
  std::sort(out.begin(), out.end(), [](const TaskState &a, const TaskState &b) { return a.trace_id < b.trace_id; });
  return out;
}

std::vector<GoldRecord> AnnotationStore::export_gold(const GoldFilter &filter) const {
  std::lock_guard lock(mutex_);
  std::vector<GoldRecord> out;
  for (const auto &[trace_id, gold] : gold_) {
    if (matches(filter, trace_id)) {
      out.push_back(gold);
    }
  }
  return out;
}

Json AnnotationStore::export_summary(const GoldFilter &filter) const {
  std::lock_guard lock(mutex_);
  std::map<std::string, std::size_t> by_state;
  for (const auto kind : {TaskStateKind::unassigned, TaskStateKind::single_annotated, TaskStateKind::dual_annotated,
                          TaskStateKind::needs_adjudication, TaskStateKind::gold_ready,
                          TaskStateKind::skipped_incomplete}) {
    by_state[std::string(to_string(kind))] = 0;
  }
  std::map<std::string, std::size_t> gold_by_source;
  std::map<std::string, std::size_t> skipped_by_source;
  std::size_t traces = 0;
  std::size_t agreement = 0;
  std::size_t adjudicated = 0;
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const auto &task = tasks_[i];
    if (!matches(filter, task.trace_id)) {
      continue;
    }
    ++traces;
    ++by_state[std::string(to_string(task.state))];
    const std::string source(to_string(corpus_[i].source));
    if (task.state == TaskStateKind::skipped_incomplete) {
      ++skipped_by_source[source];
    } else if (task.state == TaskStateKind::gold_ready) {
      ++gold_by_source[source];
      if (gold_.at(task.trace_id).provenance == GoldProvenance::agreement) {
        ++agreement;
      } else {
        ++adjudicated;
      }
    }
  }
  return {{"traces", traces},
          {"gold", by_state["gold_ready"]},
          {"skipped", by_state["skipped_incomplete"]},
          {"agreement", agreement},
          {"adjudicated", adjudicated},
          {"by_state", by_state},
          {"gold_by_source", gold_by_source},
          {"skipped_by_source", skipped_by_source}};
}

TaskState AnnotationStore::state(const std::string &trace_id) const {
  std::lock_guard lock(mutex_);
  return task_for(trace_id);
}

std::optional<Trace> AnnotationStore::trace(const std::string &trace_id) const {
  std::lock_guard lock(mutex_);
  const auto it = trace_index_.find(trace_id);
  if (it == trace_index_.end()) {
    return std::nullopt;
  }
  return corpus_[it->second];
}

Json AnnotationStore::snapshot() const {
  std::lock_guard lock(mutex_);
  Json annotators = Json::object();
  for (const auto &[id, annotator] : annotators_) {
    annotators[id] = {{"role", to_string(annotator.role)}, {"ever_assigned", annotator.ever_assigned}};
  }
  Json tasks = Json::array();
  for (const auto &task : tasks_) {
    tasks.push_back(to_json(task));
  }
  Json gold = Json::array();
  for (const auto &[trace_id, record] : gold_) {
    gold.push_back(to_json(record));
  }
  return {{"annotators", std::move(annotators)},
          {"tasks", std::move(tasks)},
          {"gold", std::move(gold)},
          {"events", events_}};
}

std::size_t AnnotationStore::event_count() const {
  std::lock_guard lock(mutex_);
  return events_;
}

void AnnotationStore::flush() {
  std::lock_guard lock(mutex_);
  if (log_.is_open()) {
    log_.flush();
  }
}

void AnnotationStore::append_and_apply(Json e) {
  apply(e);
  if (log_.is_open()) {
    log_ << e.dump() << '\n';
    log_.flush();
    if (!log_) {
      throw Error(ErrorCode::io_error, "cannot append to event log " + log_path_->string());
    }
  }
}

void AnnotationStore::apply(const Json &e) {
  const auto type = e.at("type").get<std::string>();
  if (type == "register") {
    const auto id = e.at("annotator").get<std::string>();
    const auto role = parse_annotator_role(e.at("role").get<std::string>());
    if (id.empty() || !role) {
      throw Error(ErrorCode::validation_error, "annotator needs an id and a known role");
    }
    if (annotators_.contains(id)) {
      throw Error(ErrorCode::duplicate_id, "annotator '" + id + "' already registered");
    }
    annotators_[id].role = *role;
  } else if (type == "assign") {
    const auto id = e.at("annotator").get<std::string>();
    const auto trace_id = e.at("trace_id").get<std::string>();
    const auto found = annotators_.find(id);
    if (found == annotators_.end()) {
      throw Error(ErrorCode::unknown_annotator, id);
    }
    auto &annotator = found->second;
    auto &task = task_for(trace_id);
    if (retired(task.state) || task.assigned.size() >= 2 || annotator.ever_assigned.contains(trace_id)) {
      throw Error(ErrorCode::wrong_state, trace_id + " cannot be assigned to " + id);
    }
    task.assigned.push_back(id);
    annotator.ever_assigned.insert(trace_id);
  } else if (type == "annotation") {
    const auto record = annotation_from_json(e.at("record"));
    validate_record(taxonomy_, record);
    if (!annotators_.contains(record.annotator_id)) {
      throw Error(ErrorCode::unknown_annotator, record.annotator_id);
    }
    auto &task = task_for(record.trace_id);
    if (has_submitted(task, record.annotator_id)) {
      throw Error(ErrorCode::duplicate_submission, record.annotator_id + " already submitted " + record.trace_id);
    }
    if (!contains(task.assigned, record.annotator_id)) {
      throw Error(ErrorCode::not_assigned, record.trace_id + " is not assigned to " + record.annotator_id);
    }
    if (task.state != TaskStateKind::unassigned && task.state != TaskStateKind::single_annotated) {
      throw Error(ErrorCode::wrong_state,
                  record.trace_id + " is " + std::string(to_string(task.state)) + " and takes no annotations");
    }
    task.submitted.push_back(record);
    if (record.skipped) {
      task.state = TaskStateKind::skipped_incomplete;
    } else if (task.submitted.size() == 1) {
      task.state = TaskStateKind::single_annotated;
    } else {
      task.state = TaskStateKind::dual_annotated;
      finish_dual(task);
    }
  } else if (type == "adjudication") {
    const auto trace_id = e.at("trace_id").get<std::string>();
    auto record = annotation_from_json(e.at("record"));
    if (record.trace_id.empty()) {
      record.trace_id = trace_id;
    }
    if (record.trace_id != trace_id) {
      throw Error(ErrorCode::trace_mismatch, "adjudication for '" + trace_id + "' names '" + record.trace_id + "'");
    }
    auto &task = task_for(trace_id);
    if (task.state != TaskStateKind::needs_adjudication) {
      throw Error(ErrorCode::wrong_state, trace_id + " is " + std::string(to_string(task.state)));
    }
    const auto annotator = annotators_.find(record.annotator_id);
    if (annotator == annotators_.end()) {
      throw Error(ErrorCode::unknown_annotator, record.annotator_id);
    }
    if (annotator->second.role == AnnotatorRole::annotator || contains(task.assigned, record.annotator_id)) {
      throw Error(ErrorCode::adjudicator_conflict,
                  record.annotator_id + " cannot adjudicate " + trace_id + " (role or prior annotation)");
    }
    if (record.skipped) {
      throw Error(ErrorCode::validation_error, trace_id + ": adjudication cannot be a skip");
    }
    validate_record(taxonomy_, record);
    auto gold = merge_adjudicated(taxonomy_, task.submitted[0], task.submitted[1], record);
    const auto &trace = corpus_[trace_index_.at(trace_id)];
    gold.source = std::string(to_string(trace.source));
    gold.task_domain = trace.task_domain;
    task.adjudication = record;
    task.state = TaskStateKind::gold_ready;
    gold_[trace_id] = std::move(gold);
  } else {
    throw Error(ErrorCode::parse_error, "unknown event type '" + type + "'");
  }
  ++events_;
}

void AnnotationStore::finish_dual(TaskState &task) {
  const auto &first = task.submitted[0];
  const auto &second = task.submitted[1];
  const auto result = detect_disagreement(first, second);
  if (!result.agree) {
    task.differing_fields = result.fields;
    task.state = TaskStateKind::needs_adjudication;
    return;
  }
  const auto &trace = corpus_[trace_index_.at(task.trace_id)];
  GoldRecord gold;
  gold.trace_id = task.trace_id;
  gold.source = std::string(to_string(trace.source));
  gold.task_domain = trace.task_domain;
  gold.labels = first.labels;
  gold.impact_level = *first.impact_level;
  gold.justification = first.justification;
  gold.provenance = GoldProvenance::agreement;
  gold.annotators = {first.annotator_id, second.annotator_id};
  gold_[task.trace_id] = std::move(gold);
  task.state = TaskStateKind::gold_ready;
}

TaskState &AnnotationStore::task_for(const std::string &trace_id) {
  const auto it = trace_index_.find(trace_id);
  if (it == trace_index_.end()) {
    throw Error(ErrorCode::unknown_trace, trace_id);
  }
  return tasks_[it->second];
}

const TaskState &AnnotationStore::task_for(const std::string &trace_id) const {
  const auto it = trace_index_.find(trace_id);
  if (it == trace_index_.end()) {
    throw Error(ErrorCode::unknown_trace, trace_id);
  }
  return tasks_[it->second];
}

bool AnnotationStore::matches(const GoldFilter &filter, const std::string &trace_id) const {
  if (!filter.source) {
    return true;
  }
  return corpus_[trace_index_.at(trace_id)].source == *filter.source;
}

} // namespace impact_gate
