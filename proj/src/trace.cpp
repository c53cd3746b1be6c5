#include "impact_gate/trace.hpp"

#include <algorithm>
#include <map>

#include "impact_gate/error.hpp"

namespace impact_gate {

namespace {

std::int64_t require_int(const Json &object, const char *key, const std::string &where) {
  const auto it = object.find(key);
  if (it == object.end() || !it->is_number_integer()) {
    throw Error(ErrorCode::parse_error, where + ": '" + key + "' must be an integer");
  }
  return it->get<std::int64_t>();
}

std::string id_string(const Json &value) {
  if (value.is_string()) {
    return value.get<std::string>();
  }
  if (value.is_number_integer()) {
    return std::to_string(value.get<std::int64_t>());
  }
  throw Error(ErrorCode::parse_error, "element id must be a string or integer");
}

UIElement parse_element(const Json &raw, const Screen &screen, std::size_t position, const std::string &where) {
  if (!raw.is_object()) {
    throw Error(ErrorCode::parse_error, where + ": elements must be objects");
  }
  UIElement element;
  element.id = raw.contains("id") ? id_string(raw["id"]) : std::to_string(position);
  element.kind = parse_element_kind(raw.value("kind", std::string("other"))).value_or(ElementKind::other);
  element.text = raw.value("text", std::string{});
  element.clickable = raw.value("clickable", false);
  const auto bounds = raw.find("bounds");
  if (bounds == raw.end() || !bounds->is_array() || bounds->size() != 4) {
    throw Error(ErrorCode::parse_error, where + ": element '" + element.id + "' needs bounds [x, y, w, h]");
  }
  for (const auto &v : *bounds) {
    if (!v.is_number_integer()) {
      throw Error(ErrorCode::parse_error, where + ": bounds must be integers");
    }
  }
  element.bounds = {(*bounds)[0].get<std::int64_t>(), (*bounds)[1].get<std::int64_t>(),
                    (*bounds)[2].get<std::int64_t>(), (*bounds)[3].get<std::int64_t>()};
  const auto &b = element.bounds;
  if (b.width <= 0 || b.height <= 0 || b.x < 0 || b.y < 0 || b.x + b.width > screen.width ||
      b.y + b.height > screen.height) {
    throw Error(ErrorCode::bounds_out_of_range,
                where + ": element '" + element.id + "' bounds [" + std::to_string(b.x) + "," +
                    std::to_string(b.y) + "," + std::to_string(b.width) + "," + std::to_string(b.height) +
                    "] outside " + std::to_string(screen.width) + "x" + std::to_string(screen.height));
  }
  return element;
}

void escape_into(std::string &out, std::string_view text) {
  for (const char c : text) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
}

std::string fingerprint(const UIElement &element) {
  const auto bucket = [](std::int64_t v) { return std::to_string(v / kBoundsBucketPixels); };
  std::string out(to_string(element.kind));
  out += '\x1f';
  out += element.text;
  out += '\x1f';
  out += bucket(element.bounds.x) + "," + bucket(element.bounds.y) + "," + bucket(element.bounds.width) + "," +
         bucket(element.bounds.height);
  return out;
}

ElementKind kind_from_class(std::string_view class_name) {
  const auto name = to_lower(class_name);
  const auto has = [&](std::string_view needle) { return name.find(needle) != std::string::npos; };
  if (has("checkbox") || has("radiobutton")) {
    return ElementKind::checkbox;
  }
  if (has("switch") || has("toggle")) {
    return ElementKind::toggle;
  }
  if (has("button")) {
    return ElementKind::button;
  }
  if (has("edittext") || has("textfield") || has("input")) {
    return ElementKind::input;
  }
  if (has("textview") || name == "text") {
    return ElementKind::text;
  }
  if (has("icon")) {
    return ElementKind::icon;
  }
  if (has("image")) {
    return ElementKind::image;
  }
  if (has("layout") || has("group") || has("recyclerview") || has("listview") || has("scrollview")) {
    return ElementKind::container;
  }
  return ElementKind::other;
}

// Clamps a corner-style rectangle into the screen; nullopt when nothing is left.
std::optional<Json> clamp_rect(std::int64_t x1, std::int64_t y1, std::int64_t x2, std::int64_t y2,
                               std::int64_t width, std::int64_t height) {
  x1 = std::clamp<std::int64_t>(x1, 0, width);
  x2 = std::clamp<std::int64_t>(x2, 0, width);
  y1 = std::clamp<std::int64_t>(y1, 0, height);
  y2 = std::clamp<std::int64_t>(y2, 0, height);
  if (x2 <= x1 || y2 <= y1) {
    return std::nullopt;
  }
  return Json::array({x1, y1, x2 - x1, y2 - y1});
}

Json adapted_element(const std::string &id, std::string_view class_name, std::string text,
                     const std::string &description, bool clickable, const Json &bounds) {
  if (text.empty()) {
    text = description;
  }
  return {{"id", id},
          {"kind", to_string(kind_from_class(class_name))},
          {"text", std::move(text)},
          {"bounds", bounds},
          {"clickable", clickable}};
}

Json adapt_motif(const Json &record) {
  Json out = {{"trace_id", record.contains("trace_id") ? record["trace_id"] : record.value("episode_id", Json())},
              {"app_name", record.value("app_name", record.value("app", std::string{}))},
              {"action_description",
               record.value("action_description", record.value("goal", record.value("instruction", std::string{})))},
              {"source", "motif"}};
  Json screens = Json::array();
  std::size_t index = 0;
  for (const auto &raw : record.value("screens", Json::array())) {
    const auto width = raw.value("width", std::int64_t{0});
    const auto height = raw.value("height", std::int64_t{0});
    Json elements = Json::array();
    std::size_t position = 0;
    const auto &views = raw.contains("views") ? raw["views"] : raw.value("elements", Json::array());
    for (const auto &view : views) {
      const auto box = view.value("bounds", Json::array());
      if (box.size() != 4) {
        continue;
      }
      if (auto rect = clamp_rect(box[0].get<std::int64_t>(), box[1].get<std::int64_t>(), box[2].get<std::int64_t>(),
                                 box[3].get<std::int64_t>(), width, height)) {
        const auto id = view.contains("id") ? id_string(view["id"]) : std::to_string(position);
        elements.push_back(adapted_element(id, view.value("class", view.value("kind", std::string{})),
                                           view.value("text", std::string{}), view.value("content_desc", std::string{}),
                                           view.value("clickable", false), *rect));
      }
      ++position;
    }
    screens.push_back({{"index", raw.value("index", index)},
                       {"image", raw.value("image", raw.value("screenshot", std::string{}))},
                       {"width", width},
                       {"height", height},
                       {"elements", std::move(elements)}});
    ++index;
  }
  out["screens"] = std::move(screens);
  return out;
}

Json adapt_androidcontrol(const Json &record) {
  Json out = {{"trace_id", record.contains("trace_id") ? record["trace_id"] : record.value("episode_id", Json())},
              {"app_name", record.value("app_name", std::string{})},
              {"action_description", record.value("goal", record.value("action_description", std::string{}))},
              {"source", "androidcontrol"}};
  if (out["trace_id"].is_number_integer()) {
    out["trace_id"] = std::to_string(out["trace_id"].get<std::int64_t>());
  }
  Json screens = Json::array();
  std::size_t index = 0;
  for (const auto &step : record.value("steps", Json::array())) {
    const auto width = step.value("screenshot_width", step.value("width", std::int64_t{0}));
    const auto height = step.value("screenshot_height", step.value("height", std::int64_t{0}));
    Json elements = Json::array();
    std::size_t position = 0;
    const auto &nodes = step.contains("accessibility_tree") ? step["accessibility_tree"]
                                                            : step.value("elements", Json::array());
    for (const auto &node : nodes) {
      const auto box = node.value("bbox_pixels", Json::object());
      if (box.contains("x_min") && box.contains("y_min") && box.contains("x_max") && box.contains("y_max")) {
        if (auto rect = clamp_rect(box["x_min"].get<std::int64_t>(), box["y_min"].get<std::int64_t>(),
                                   box["x_max"].get<std::int64_t>(), box["y_max"].get<std::int64_t>(), width,
                                   height)) {
          elements.push_back(adapted_element(std::to_string(position), node.value("class_name", std::string{}),
                                             node.value("text", std::string{}),
                                             node.value("content_description", std::string{}),
                                             node.value("is_clickable", false), *rect));
        }
      }
      ++position;
    }
    screens.push_back({{"index", index},
                       {"image", step.value("screenshot", std::string{})},
                       {"width", width},
                       {"height", height},
                       {"elements", std::move(elements)}});
    ++index;
  }
  out["screens"] = std::move(screens);
  return out;
}

} // namespace

std::string_view to_string(ElementKind kind) {
  switch (kind) {
  case ElementKind::button: return "button";
  case ElementKind::text: return "text";
  case ElementKind::input: return "input";
  case ElementKind::image: return "image";
  case ElementKind::checkbox: return "checkbox";
  case ElementKind::toggle: return "toggle";
  case ElementKind::icon: return "icon";
  case ElementKind::container: return "container";
  case ElementKind::other: return "other";
  }
  return "other";
}

std::optional<ElementKind> parse_element_kind(std::string_view text) {
  static constexpr ElementKind kAll[] = {ElementKind::button,   ElementKind::text,   ElementKind::input,
                                         ElementKind::image,    ElementKind::checkbox, ElementKind::toggle,
                                         ElementKind::icon,     ElementKind::container, ElementKind::other};
  const auto key = to_lower(text);
  for (const auto kind : kAll) {
    if (to_string(kind) == key) {
      return kind;
    }
  }
  return std::nullopt;
}

std::string_view to_string(TraceSource source) {
  switch (source) {
  case TraceSource::synthesized: return "synthesized";
  case TraceSource::motif: return "motif";
  case TraceSource::androidcontrol: return "androidcontrol";
  case TraceSource::other: return "other";
  }
  return "other";
}

TraceSource parse_trace_source(std::string_view text) {
  const auto key = to_lower(text);
  if (key == "synthesized") {
    return TraceSource::synthesized;
  }
  if (key == "motif") {
    return TraceSource::motif;
  }
  if (key == "androidcontrol") {
    return TraceSource::androidcontrol;
  }
  return TraceSource::other;
}

Trace ingest_trace(const Json &document) {
  if (!document.is_object()) {
    throw Error(ErrorCode::parse_error, "trace must be a JSON object");
  }
  Trace trace;
  const auto id = document.find("trace_id");
  if (id == document.end() || !(id->is_string() || id->is_number_integer())) {
    throw Error(ErrorCode::parse_error, "trace needs a trace_id");
  }
  trace.trace_id = id_string(*id);
  trace.app_name = document.value("app_name", std::string{});
  trace.action_description = document.value("action_description", std::string{});
  trace.source = parse_trace_source(document.value("source", std::string("other")));
  trace.task_domain = document.value("task_domain", std::string{});
  if (trim(trace.action_description).empty()) {
    throw Error(ErrorCode::parse_error, trace.trace_id + ": action_description is empty");
  }
  const auto screens = document.find("screens");
  if (screens == document.end() || !screens->is_array()) {
    throw Error(ErrorCode::parse_error, trace.trace_id + ": 'screens' must be an array");
  }
  if (screens->empty()) {
    throw Error(ErrorCode::empty_trace, trace.trace_id + " has no screens");
  }

  std::vector<std::pair<std::int64_t, Screen>> ordered;
  std::int64_t position = 0;
  for (const auto &raw : *screens) {
    if (!raw.is_object()) {
      throw Error(ErrorCode::parse_error, trace.trace_id + ": screens must be objects");
    }
    const std::string where = trace.trace_id + " screen " + std::to_string(position);
    Screen screen;
    screen.image_ref = raw.value("image", std::string{});
    screen.width = require_int(raw, "width", where);
    screen.height = require_int(raw, "height", where);
    if (screen.width <= 0 || screen.height <= 0) {
      throw Error(ErrorCode::parse_error, where + ": screen dimensions must be positive");
    }
    const auto declared = raw.contains("index") ? require_int(raw, "index", where) : position;
    std::size_t element_position = 0;
    for (const auto &element : raw.value("elements", Json::array())) {
      screen.elements.push_back(parse_element(element, screen, element_position++, where));
    }
    ordered.emplace_back(declared, std::move(screen));
    ++position;
  }
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto &a, const auto &b) { return a.first < b.first; });
  for (auto &[declared, screen] : ordered) {
    screen.index = trace.screens.size();
    trace.screens.push_back(std::move(screen));
  }
  return trace;
}

Trace ingest_trace(std::string_view document) {
  Json parsed;
  try {
    parsed = Json::parse(document);
  } catch (const Json::exception &e) {
    throw Error(ErrorCode::parse_error, e.what());
  }
  return ingest_trace(parsed);
}

Trace ingest_trace(const std::string &document) { return ingest_trace(std::string_view(document)); }

Json to_json(const Trace &trace) {
  Json screens = Json::array();
  for (const auto &screen : trace.screens) {
    Json elements = Json::array();
    for (const auto &e : screen.elements) {
      elements.push_back({{"id", e.id},
                          {"kind", to_string(e.kind)},
                          {"text", e.text},
                          {"bounds", {e.bounds.x, e.bounds.y, e.bounds.width, e.bounds.height}},
                          {"clickable", e.clickable}});
    }
    screens.push_back({{"index", screen.index},
                       {"image", screen.image_ref},
                       {"width", screen.width},
                       {"height", screen.height},
                       {"elements", std::move(elements)}});
  }
  Json out = {{"trace_id", trace.trace_id},
              {"app_name", trace.app_name},
              {"action_description", trace.action_description},
              {"source", to_string(trace.source)},
              {"screens", std::move(screens)}};
  if (!trace.task_domain.empty()) {
    out["task_domain"] = trace.task_domain;
  }
  return out;
}

std::vector<Trace> read_corpus(const std::filesystem::path &path) {
  const auto text = read_file(path);
  std::vector<JsonLinesError> errors;
  auto lines = parse_json_lines(text, &errors);
  std::vector<Trace> traces;
  for (const auto &line : lines) {
    try {
      traces.push_back(ingest_trace(line.value));
    } catch (const Error &e) {
      errors.push_back({line.line_number, e.what()});
    }
  }
  if (!errors.empty()) {
    std::sort(errors.begin(), errors.end(),
              [](const auto &a, const auto &b) { return a.line_number < b.line_number; });
    std::string message = path.string() + ": " + std::to_string(errors.size()) + " bad line(s)";
    for (const auto &error : errors) {
      message += "\n  line " + std::to_string(error.line_number) + ": " + error.message;
    }
    throw Error(ErrorCode::parse_error, message);
  }
  return traces;
}

std::string write_corpus(const std::vector<Trace> &traces) {
  std::string out;
  for (const auto &trace : traces) {
    out += to_json(trace).dump();
    out += '\n';
  }
  return out;
}

std::string serialize_screen_html(const Screen &screen) {
  std::string out = "<html><body>";
  for (const auto &element : screen.elements) {
    const char *tag = "div";
    if (element.kind == ElementKind::button) {
      tag = "button";
    } else if (element.kind == ElementKind::input) {
      tag = "input";
    }
    out += "\n<";
    out += tag;
    if (std::string_view(tag) == "div") {
      out += " kind=\"";
      out += to_string(element.kind);
      out += '"';
    }
    out += " id=\"";
    escape_into(out, element.id);
    const auto &b = element.bounds;
    out += "\" data-bounds=\"" + std::to_string(b.x) + "," + std::to_string(b.y) + "," + std::to_string(b.width) +
           "," + std::to_string(b.height) + "\"";
    out += element.clickable ? " clickable=\"true\">" : " clickable=\"false\">";
    escape_into(out, element.text);
    out += "</";
    out += tag;
    out += '>';
  }
  if (!screen.elements.empty()) {
    out += '\n';
  }
  out += "</body></html>";
  return out;
}

double screen_similarity(const Screen &a, const Screen &b) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
  for (const auto &element : a.elements) {
    ++counts[fingerprint(element)].first;
  }
  for (const auto &element : b.elements) {
    ++counts[fingerprint(element)].second;
  }
  if (counts.empty()) {
    return 1.0;
  }
  std::size_t intersection = 0;
  std::size_t union_size = 0;
  for (const auto &[key, pair] : counts) {
    intersection += std::min(pair.first, pair.second);
    union_size += std::max(pair.first, pair.second);
  }
  return static_cast<double>(intersection) / static_cast<double>(union_size);
}

Trace dedup_consecutive(const Trace &trace, double threshold) {
  Trace out = trace;
  out.screens.clear();
  const Screen *head = nullptr;
  for (const auto &screen : trace.screens) {
    if (head != nullptr && screen_similarity(*head, screen) >= threshold) {
      continue;
    }
    head = &screen;
    out.screens.push_back(screen);
    out.screens.back().index = out.screens.size() - 1;
  }
  return out;
}

CorpusStats corpus_stats(const std::vector<Trace> &traces, const std::vector<GoldRecord> *gold_records) {
  CorpusStats stats;
  stats.trace_count = traces.size();
  std::map<std::string, const Trace *> by_id;
  for (const auto &trace : traces) {
    stats.screen_count += trace.screens.size();
    by_id.emplace(trace.trace_id, &trace);
  }
  if (stats.trace_count > 0) {
    stats.mean_screens_per_trace =
        static_cast<double>(stats.screen_count) / static_cast<double>(stats.trace_count);
  }
  std::map<std::string, std::string> domains;
  for (const auto &trace : traces) {
    if (!trace.task_domain.empty()) {
      domains[trace.trace_id] = trace.task_domain;
    }
  }
  if (gold_records != nullptr) {
    for (const auto &gold : *gold_records) {
      if (!by_id.contains(gold.trace_id)) {
        throw Error(ErrorCode::dangling_gold_reference, "gold record for unknown trace '" + gold.trace_id + "'");
      }
      ++stats.impact_level_histogram[static_cast<std::size_t>(gold.impact_level)];
      if (!gold.task_domain.empty()) {
        domains[gold.trace_id] = gold.task_domain;
      }
    }
  }
  for (const auto &[trace_id, domain] : domains) {
    ++stats.task_domain_histogram[domain];
  }
  return stats;
}

Json to_json(const CorpusStats &stats) {
  Json histogram = Json::object();
  for (const auto level : kImpactLevels) {
    histogram[std::string(to_string(level))] = stats.impact_level_histogram[static_cast<std::size_t>(level)];
  }
  return {{"trace_count", stats.trace_count},
          {"screen_count", stats.screen_count},
          {"mean_screens_per_trace", stats.mean_screens_per_trace},
          {"impact_level_histogram", std::move(histogram)},
          {"task_domain_histogram", stats.task_domain_histogram}};
}

std::optional<ImportAdapter> parse_import_adapter(std::string_view text) {
  if (text == "native") {
    return ImportAdapter::native;
  }
  if (text == "motif_like") {
    return ImportAdapter::motif_like;
  }
  if (text == "androidcontrol_like") {
    return ImportAdapter::androidcontrol_like;
  }
  return std::nullopt;
}

Json adapt_record(const Json &record, ImportAdapter adapter) {
  if (!record.is_object()) {
    throw Error(ErrorCode::parse_error, "record must be a JSON object");
  }
  switch (adapter) {
  case ImportAdapter::native: return record;
  case ImportAdapter::motif_like: return adapt_motif(record);
  case ImportAdapter::androidcontrol_like: return adapt_androidcontrol(record);
  }
  return record;
}

} // namespace impact_gate
