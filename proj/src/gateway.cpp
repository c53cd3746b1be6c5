#include "impact_gate/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <thread>

namespace impact_gate {

namespace {

struct MatchFailure {
  InvalidReason reason;
  std::string detail;
};

// Answers that mean "this category does not apply".
bool is_empty_marker(const std::string &normalized) {
  static const char *const kMarkers[] = {"", "n/a", "na", "none", "no impact", "not applicable",
                                         "no significant ui change", "no ui change", "no change",
                                         "no effect", "no impact on other users"};
  for (const auto *marker : kMarkers) {
    if (normalized == marker) {
      return true;
    }
  }
  return false;
}

std::string normalized_id(std::string_view id) { return normalize_key(id); }

const OptionDef *exact_option(const Category &category, const std::string &normalized) {
  for (const auto &option : category.options) {
    if (normalize_key(option.display_name) == normalized || normalized_id(option.id) == normalized) {
      return &option;
    }
  }
  return nullptr;
}

// Options whose display name occurs inside the answer. Shorter names that are
// themselves contained in a longer match are dropped.
std::vector<const OptionDef *> contained_options(const Category &category, const std::string &normalized) {
  std::vector<const OptionDef *> found;
  for (const auto &option : category.options) {
    if (normalized.find(normalize_key(option.display_name)) != std::string::npos) {
      found.push_back(&option);
    }
  }
  std::vector<const OptionDef *> maximal;
  for (const auto *candidate : found) {
    const auto name = normalize_key(candidate->display_name);
    const bool dominated = std::any_of(found.begin(), found.end(), [&](const OptionDef *other) {
      const auto other_name = normalize_key(other->display_name);
      return other != candidate && other_name.size() > name.size() && other_name.find(name) != std::string::npos;
    });
    if (!dominated) {
      maximal.push_back(candidate);
    }
  }
  return maximal;
}

void add_option(LabelSet &labels, const OptionDef &option, const std::string &normalized) {
  labels.options.insert(option.id);
  for (const auto &sub : option.sub_options) {
    if (normalized.find(normalize_key(sub.display_name)) != std::string::npos) {
      labels.sub_options.insert(sub.id);
    }
  }
}

std::vector<std::string> split_list(const std::string &text) {
  std::vector<std::string> pieces;
  std::string current;
  for (const char c : text) {
    if (c == ',' || c == ';') {
      pieces.push_back(current);
      current.clear();
    } else {
      current += c;
    }
  }
  pieces.push_back(current);
  return pieces;
}

// Matches one free-text answer; returns false when nothing in the taxonomy fits.
bool match_text(const Category &category, const std::string &raw, LabelSet &labels) {
  const auto normalized = normalize_key(raw);
  if (is_empty_marker(normalized) || normalized.rfind("no impact", 0) == 0 || normalized.rfind("n/a", 0) == 0) {
    return true;
  }
  if (normalized.find("timely") != std::string::npos) {
    labels.time_bound = true;
  }
  if (const auto *option = exact_option(category, normalized)) {
    add_option(labels, *option, normalized);
    return true;
  }
  if (category.multi_label && (raw.find(',') != std::string::npos || raw.find(';') != std::string::npos)) {
    LabelSet attempt = labels;
    bool all = true;
    for (const auto &piece : split_list(raw)) {
      if (trim(piece).empty()) {
        continue;
      }
      all = all && match_text(category, piece, attempt);
    }
    if (all) {
      labels = std::move(attempt);
      return true;
    }
  }
  const auto contained = contained_options(category, normalized);
  if (contained.size() == 1) {
    add_option(labels, *contained.front(), normalized);
    return true;
  }
  return false;
}

std::optional<MatchFailure> match_value(const Category &category, const Json &value, LabelSet &labels) {
  if (value.is_string()) {
    if (!match_text(category, value.get<std::string>(), labels)) {
      return MatchFailure{InvalidReason::unknown_label,
                          category.id + ": '" + value.get<std::string>() + "' is not an option"};
    }
    return std::nullopt;
  }
  if (value.is_array()) {
    for (const auto &entry : value) {
      if (auto failure = match_value(category, entry, labels)) {
        return failure;
      }
    }
    return std::nullopt;
  }
  if (value.is_object()) {
    static const char *const kValueKeys[] = {"option", "options", "label", "labels", "value",
                                             "selection", "answer", "category"};
    for (const auto *key : kValueKeys) {
      if (const auto it = value.find(key); it != value.end()) {
        return match_value(category, *it, labels);
      }
    }
  }
  return MatchFailure{InvalidReason::unknown_label, category.id + ": unsupported answer shape"};
}

std::optional<ImpactLevel> match_level(const Json &value) {
  if (!value.is_string()) {
    return std::nullopt;
  }
  const auto text = value.get<std::string>();
  if (auto level = parse_impact_level(text)) {
    return level;
  }
  const auto normalized = normalize_key(text);
  std::optional<ImpactLevel> found;
  int hits = 0;
  for (const auto &[word, level] : {std::pair{"minimum", ImpactLevel::minimum},
                                    std::pair{"minimal", ImpactLevel::minimum},
                                    std::pair{"moderate", ImpactLevel::moderate},
                                    std::pair{"significant", ImpactLevel::significant}}) {
    if (normalized.find(word) != std::string::npos && found != level) {
      found = level;
      ++hits;
    }
  }
  return hits == 1 ? found : std::nullopt;
}

bool is_level_key(const std::string &key) {
  return key == "impact level" || key == "overall impact level" || key == "impact" || key == "level" ||
         key == "final impact level";
}

const Category *match_category(const Taxonomy &taxonomy, const std::string &key) {
  for (const auto &category : taxonomy.categories()) {
    if (normalize_key(category.display_name) == key || normalized_id(category.id) == key) {
      return &category;
    }
  }
  return nullptr;
}

InvalidAnswer invalid(InvalidReason reason, std::string detail, std::string_view raw) {
  InvalidAnswer answer;
  answer.reason = reason;
  answer.detail = std::move(detail);
  answer.raw_response = std::string(raw);
  return answer;
}

std::string render_answer(const Category &category, const LabelSet &labels, const OptionDef &option) {
  std::string text = option.display_name;
  if (labels.time_bound) {
    text += " Timely";
  }
  std::string subs;
  for (const auto &sub : option.sub_options) {
    if (labels.sub_options.contains(sub.id)) {
      subs += (subs.empty() ? "" : "; ") + sub.display_name;
    }
  }
  if (!subs.empty()) {
    text += " (" + subs + ")";
  }
  (void)category;
  return text;
}

void set_identity(Outcome &outcome, const PromptBundle &bundle, const std::string &backend) {
  std::visit(
      [&](auto &value) {
        value.trace_id = bundle.trace_id;
        value.strategy = bundle.strategy;
        value.backend = backend;
      },
      outcome);
}

} // namespace

std::string_view to_string(Capability capability) {
  return capability == Capability::text_only ? "text_only" : "multimodal";
}

std::string_view to_string(BackendKind kind) { return kind == BackendKind::replay ? "replay" : "http_endpoint"; }

std::string_view to_string(InvalidReason reason) {
  switch (reason) {
  case InvalidReason::unparseable: return "unparseable";
  case InvalidReason::unknown_label: return "unknown_label";
  case InvalidReason::missing_field: return "missing_field";
  case InvalidReason::transport_failure: return "transport_failure";
  }
  return "unparseable";
}

std::optional<InvalidReason> parse_invalid_reason(std::string_view text) {
  for (const auto reason : {InvalidReason::unparseable, InvalidReason::unknown_label, InvalidReason::missing_field,
                            InvalidReason::transport_failure}) {
    if (to_string(reason) == text) {
      return reason;
    }
  }
  return std::nullopt;
}

BackendDescriptor backend_from_json(const Json &value, const std::filesystem::path &base_dir) {
  if (!value.is_object() || !value.contains("name") || !value["name"].is_string()) {
    throw Error(ErrorCode::config_error, "backend entries need a 'name'");
  }
  BackendDescriptor d;
  d.name = value["name"].get<std::string>();
  const auto capability = value.value("capability", std::string("text_only"));
  if (capability == "text_only") {
    d.capability = Capability::text_only;
  } else if (capability == "multimodal") {
    d.capability = Capability::multimodal;
  } else {
    throw Error(ErrorCode::config_error, d.name + ": unknown capability '" + capability + "'");
  }
  const auto kind = value.value("kind", std::string("replay"));
  if (kind == "replay") {
    d.kind = BackendKind::replay;
    const auto path = value.value("replay_path", std::string{});
    if (path.empty()) {
      throw Error(ErrorCode::config_error, d.name + ": replay backends need replay_path");
    }
    d.replay_path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base_dir / path;
  } else if (kind == "http_endpoint") {
    d.kind = BackendKind::http_endpoint;
    d.url = value.value("url", std::string{});
    d.model = value.value("model", std::string{});
    if (d.url.empty()) {
      throw Error(ErrorCode::config_error, d.name + ": http_endpoint backends need a url");
    }
  } else {
    throw Error(ErrorCode::config_error, d.name + ": unknown kind '" + kind + "'");
  }
  d.max_parallel = std::max<std::size_t>(1, value.value("max_parallel", std::size_t{1}));
  d.timeout_s = value.value("timeout_s", 60.0);
  d.retries = value.value("retries", std::size_t{2});
  if (value.contains("temperature") && value["temperature"].is_number()) {
    d.temperature = value["temperature"].get<double>();
  }
  return d;
}

Json to_json(const BackendDescriptor &d) {
  Json out = {{"name", d.name},
              {"capability", to_string(d.capability)},
              {"kind", to_string(d.kind)},
              {"max_parallel", d.max_parallel},
              {"timeout_s", d.timeout_s},
              {"retries", d.retries}};
  if (d.kind == BackendKind::replay) {
    out["replay_path"] = d.replay_path.filename().string();
  } else {
    out["url"] = d.url;
    out["model"] = d.model;
  }
  out["temperature"] = d.temperature ? Json(*d.temperature) : Json(0.0);
  return out;
}

std::vector<BackendDescriptor> load_backend_config(const std::filesystem::path &path) {
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const Json::exception &e) {
    throw Error(ErrorCode::config_error, path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  std::vector<BackendDescriptor> out;
  const Json &list = doc.is_object() && doc.contains("backends") ? doc["backends"] : doc;
  if (list.is_array()) {
    for (const auto &entry : list) {
      out.push_back(backend_from_json(entry, base));
    }
  } else {
    out.push_back(backend_from_json(list, base));
  }
  return out;
}

std::string api_key_env_var(std::string_view backend_name) {
  std::string out = "IMPACT_GATE_API_KEY_";
  for (const unsigned char c : backend_name) {
    out += std::isalnum(c) ? static_cast<char>(std::toupper(c)) : '_';
  }
  return out;
}

const std::string &outcome_trace_id(const Outcome &outcome) {
  return std::visit([](const auto &value) -> const std::string & { return value.trace_id; }, outcome);
}

Json to_json(const Outcome &outcome) {
  if (const auto *p = std::get_if<Prediction>(&outcome)) {
    Json out = {{"kind", "prediction"},
                {"trace_id", p->trace_id},
                {"strategy", to_string(p->strategy)},
                {"backend", p->backend},
                {"impact_level", p->impact_level ? Json(to_string(*p->impact_level)) : Json()},
                {"labels", labels_to_json(p->labels)},
                {"raw_response", p->raw_response}};
    if (p->reasoning_text) {
      out["reasoning_text"] = *p->reasoning_text;
    }
    return out;
  }
  const auto &a = std::get<InvalidAnswer>(outcome);
  return {{"kind", "invalid"},
          {"trace_id", a.trace_id},
          {"strategy", to_string(a.strategy)},
          {"backend", a.backend},
          {"reason", to_string(a.reason)},
          {"detail", a.detail},
          {"raw_response", a.raw_response}};
}

Outcome outcome_from_json(const Json &value) {
  const auto strategy = parse_strategy(value.value("strategy", std::string{}));
  if (!strategy) {
    throw Error(ErrorCode::parse_error, "outcome has no valid strategy");
  }
  if (value.value("kind", std::string{}) == "prediction") {
    Prediction p;
    p.trace_id = value.at("trace_id").get<std::string>();
    p.strategy = *strategy;
    p.backend = value.value("backend", std::string{});
    if (const auto &level = value.at("impact_level"); !level.is_null()) {
      p.impact_level = parse_impact_level(level.get<std::string>());
    }
    p.labels = labels_from_json(value.value("labels", Json::object()));
    if (value.contains("reasoning_text")) {
      p.reasoning_text = value["reasoning_text"].get<std::string>();
    }
    p.raw_response = value.value("raw_response", std::string{});
    return p;
  }
  InvalidAnswer a;
  a.trace_id = value.at("trace_id").get<std::string>();
  a.strategy = *strategy;
  a.backend = value.value("backend", std::string{});
  const auto reason = parse_invalid_reason(value.value("reason", std::string{}));
  if (!reason) {
    throw Error(ErrorCode::parse_error, "outcome has no valid invalid-answer reason");
  }
  a.reason = *reason;
  a.detail = value.value("detail", std::string{});
  a.raw_response = value.value("raw_response", std::string{});
  return a;
}

std::optional<Json> extract_first_json_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}' && --depth == 0) {
        try {
          auto parsed = Json::parse(text.substr(start, i - start + 1));
          if (parsed.is_object()) {
            return parsed;
          }
        } catch (const Json::exception &) {
        }
        break;
      }
    }
  }
  return std::nullopt;
}

Outcome parse_response(std::string_view raw_text, Strategy strategy, const Taxonomy &taxonomy) {
  const auto object = extract_first_json_object(raw_text);
  if (!object) {
    return invalid(InvalidReason::unparseable, "no JSON object in response", raw_text);
  }
  Prediction prediction;
  prediction.strategy = strategy;
  prediction.raw_response = std::string(raw_text);
  bool level_seen = false;
  for (const auto &[raw_key, value] : object->items()) {
    const auto key = normalize_key(raw_key);
    if (is_level_key(key)) {
      level_seen = true;
      prediction.impact_level = match_level(value);
      if (!prediction.impact_level) {
        return invalid(InvalidReason::unknown_label, "impact level '" + value.dump() + "' is not a level", raw_text);
      }
      continue;
    }
    if (key == "justification" || key == "reasoning" || key == "reason") {
      if (value.is_string()) {
        prediction.reasoning_text =
            prediction.reasoning_text ? *prediction.reasoning_text + "\n" + value.get<std::string>()
                                      : value.get<std::string>();
      }
      continue;
    }
    if (strategy == Strategy::zero_shot) {
      continue;
    }
    const auto *category = match_category(taxonomy, key);
    if (category == nullptr || value.is_null()) {
      continue;
    }
    LabelSet labels;
    labels.category_id = category->id;
    if (auto failure = match_value(*category, value, labels)) {
      return invalid(failure->reason, failure->detail, raw_text);
    }
    if (!category->multi_label && labels.options.size() > 1) {
      return invalid(InvalidReason::unknown_label, category->id + ": several options for a single-label category",
                     raw_text);
    }
    prediction.labels[category->id] = std::move(labels);
  }
  if (!level_seen) {
    return invalid(InvalidReason::missing_field, "no impact level", raw_text);
  }
  return prediction;
}

std::string serialize_prediction(const Prediction &prediction, const Taxonomy &taxonomy) {
  Json out = Json::object();
  if (prediction.impact_level) {
    out["impact level"] = to_string(*prediction.impact_level);
  }
  for (const auto &category : taxonomy.categories()) {
    const auto it = prediction.labels.find(category.id);
    if (it == prediction.labels.end()) {
      continue;
    }
    const auto &labels = it->second;
    Json answers = Json::array();
    for (const auto &option : category.options) {
      if (labels.options.contains(option.id)) {
        answers.push_back(render_answer(category, labels, option));
      }
    }
    if (answers.empty()) {
      out[category.display_name] = "No Impact";
    } else if (category.multi_label) {
      out[category.display_name] = std::move(answers);
    } else {
      out[category.display_name] = answers.front();
    }
  }
  if (prediction.reasoning_text) {
    out["justification"] = *prediction.reasoning_text;
  }
  return out.dump();
}

ReplayBackend::ReplayBackend(BackendDescriptor descriptor) : Backend(std::move(descriptor)) {
  load(read_file(this->descriptor().replay_path));
}

ReplayBackend::ReplayBackend(BackendDescriptor descriptor, std::string_view json_lines)
    : Backend(std::move(descriptor)) {
  load(json_lines);
}

void ReplayBackend::load(std::string_view json_lines) {
  std::vector<JsonLinesError> errors;
  for (const auto &line : parse_json_lines(json_lines, &errors)) {
    const auto &entry = line.value;
    const auto backend = entry.value("backend", std::string{});
    if (!backend.empty() && backend != descriptor().name) {
      continue;
    }
    const auto strategy = parse_strategy(entry.value("strategy", std::string{}));
    if (!strategy || !entry.contains("trace_id") || !entry.contains("raw_response")) {
      throw Error(ErrorCode::parse_error, "replay line " + std::to_string(line.line_number) +
                                              " needs trace_id, strategy and raw_response");
    }
    responses_[{entry["trace_id"].get<std::string>(), *strategy}] = entry["raw_response"].get<std::string>();
  }
  if (!errors.empty()) {
    throw Error(ErrorCode::parse_error, "replay line " + std::to_string(errors.front().line_number) + ": " +
                                            errors.front().message);
  }
}

std::string ReplayBackend::complete(const PromptBundle &bundle) {
  const auto it = responses_.find({bundle.trace_id, bundle.strategy});
  if (it == responses_.end()) {
    throw TransportError("no stored response for " + bundle.trace_id + "/" + std::string(to_string(bundle.strategy)));
  }
  return it->second;
}

std::unique_ptr<Backend> make_backend(const BackendDescriptor &descriptor) {
  if (descriptor.kind == BackendKind::replay) {
    return std::make_unique<ReplayBackend>(descriptor);
  }
  return std::make_unique<HttpBackend>(descriptor);
}

PromptBundle prepare_for_dispatch(const PromptBundle &bundle, Capability capability) {
  if (capability == Capability::multimodal) {
    return bundle;
  }
  PromptBundle out = bundle;
  for (auto &part : out.content_parts) {
    if (part.kind == ContentPart::Kind::screen_image) {
      part.kind = ContentPart::Kind::screen_html;
      part.text = part.html;
      part.image_ref.clear();
      part.html.clear();
    }
  }
  return out;
}

Outcome classify(const PromptBundle &bundle, Backend &backend, const Taxonomy &taxonomy) {
  const auto &descriptor = backend.descriptor();
  const auto dispatched = prepare_for_dispatch(bundle, descriptor.capability);
  std::string last_error;
  for (std::size_t attempt = 0; attempt <= descriptor.retries; ++attempt) {
    std::string raw;
    try {
      raw = backend.complete(dispatched);
    } catch (const TransportError &e) {
      last_error = e.what();
      continue;
    }
    auto outcome = parse_response(raw, bundle.strategy, taxonomy);
    set_identity(outcome, bundle, descriptor.name);
    return outcome;
  }
  Outcome failure = invalid(InvalidReason::transport_failure,
                            "gave up after " + std::to_string(descriptor.retries + 1) + " attempts: " + last_error,
                            "");
  set_identity(failure, bundle, descriptor.name);
  return failure;
}

std::vector<Outcome> classify_all(std::span<const PromptBundle> bundles, Backend &backend,
                                  const Taxonomy &taxonomy) {
  std::vector<std::optional<Outcome>> slots(bundles.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (auto i = next.fetch_add(1); i < bundles.size(); i = next.fetch_add(1)) {
      slots[i] = classify(bundles[i], backend, taxonomy);
    }
  };
  const auto workers = std::min(backend.descriptor().max_parallel, bundles.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t i = 0; i < workers; ++i) {
      threads.emplace_back(worker);
    }
  }
  std::vector<Outcome> out;
  out.reserve(slots.size());
  for (auto &slot : slots) {
    out.push_back(std::move(*slot));
  }
  return out;
}

bool has_usable_label(const Outcome &outcome, std::string_view category_id) {
  const auto *prediction = std::get_if<Prediction>(&outcome);
  return prediction != nullptr && prediction->labels.contains(std::string(category_id));
}

Redaction redaction_status(std::string_view category_id, std::span<const Outcome> outcomes,
                           double validity_floor) {
  if (outcomes.empty()) {
    return Redaction::redacted;
  }
  const auto usable = static_cast<std::size_t>(std::count_if(
      outcomes.begin(), outcomes.end(), [&](const Outcome &o) { return has_usable_label(o, category_id); }));
  const double fraction = static_cast<double>(usable) / static_cast<double>(outcomes.size());
  return fraction > validity_floor ? Redaction::reported : Redaction::redacted;
}

} // namespace impact_gate
