// Python module impact_gate._core. Structured values cross the boundary as
// plain dicts and lists in the same JSON shapes the CLI and service use.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli.hpp"
#include "impact_gate/annotation.hpp"
#include "impact_gate/error.hpp"
#include "impact_gate/eval.hpp"
#include "impact_gate/policy.hpp"
#include "impact_gate/prompt.hpp"
#include "impact_gate/records.hpp"
#include "impact_gate/trace.hpp"

namespace py = pybind11;
using namespace impact_gate;

namespace {

py::object to_py(const Json &value) {
  switch (value.type()) {
  case Json::value_t::null:
    return py::none();
  case Json::value_t::boolean:
    return py::bool_(value.get<bool>());
  case Json::value_t::number_integer:
    return py::int_(value.get<std::int64_t>());
  case Json::value_t::number_unsigned:
    return py::int_(value.get<std::uint64_t>());
  case Json::value_t::number_float:
    return py::float_(value.get<double>());
  case Json::value_t::string:
    return py::str(value.get_ref<const std::string &>());
  case Json::value_t::array: {
    py::list out;
    for (const auto &item : value) {
      out.append(to_py(item));
    }
    return std::move(out);
  }
  case Json::value_t::object: {
    py::dict out;
    for (const auto &[key, item] : value.items()) {
      out[py::str(key)] = to_py(item);
    }
    return std::move(out);
  }
  default:
    throw Error(ErrorCode::validation_error, "unsupported JSON value");
  }
}

Json from_py(const py::handle &value) {
  if (value.is_none()) {
    return nullptr;
  }
  if (py::isinstance<py::bool_>(value)) {
    return value.cast<bool>();
  }
  if (py::isinstance<py::int_>(value)) {
    return value.cast<std::int64_t>();
  }
  if (py::isinstance<py::float_>(value)) {
    return value.cast<double>();
  }
  if (py::isinstance<py::str>(value)) {
    return value.cast<std::string>();
  }
  if (py::isinstance<py::dict>(value)) {
    Json out = Json::object();
    for (const auto &[key, item] : value.cast<py::dict>()) {
      out[py::str(key).cast<std::string>()] = from_py(item);
    }
    return out;
  }
  if (py::isinstance<py::list>(value) || py::isinstance<py::tuple>(value)) {
    Json out = Json::array();
    for (const auto &item : value) {
      out.push_back(from_py(item));
    }
    return out;
  }
  throw py::type_error("cannot convert " + py::repr(value).cast<std::string>() + " to JSON");
}

Taxonomy taxonomy_of(const py::object &value) {
  return value.is_none() ? default_taxonomy() : load_taxonomy(from_py(value).dump());
}

Strategy strategy_of(const std::string &text) {
  const auto strategy = parse_strategy(text);
  if (!strategy) {
    throw Error(ErrorCode::config_error, "unknown strategy '" + text + "'");
  }
  return *strategy;
}

std::vector<Trace> traces_of(const py::iterable &items) {
  std::vector<Trace> out;
  for (const auto &item : items) {
    out.push_back(ingest_trace(from_py(item)));
  }
  return out;
}

Json bundle_json(const PromptBundle &bundle) {
  Json parts = Json::array();
  for (const auto &part : bundle.content_parts) {
    Json entry = {{"screen_index", part.screen_index}};
    switch (part.kind) {
    case ContentPart::Kind::screen_html:
      entry["kind"] = "screen_html";
      entry["text"] = part.text;
      break;
    case ContentPart::Kind::screen_image:
      entry["kind"] = "screen_image";
      entry["image_ref"] = part.image_ref;
      break;
    case ContentPart::Kind::text:
      entry["kind"] = "text";
      entry["text"] = part.text;
      break;
    }
    parts.push_back(std::move(entry));
  }
  return {{"trace_id", bundle.trace_id},
          {"strategy", to_string(bundle.strategy)},
          {"system_text", bundle.system_text},
          {"content_parts", std::move(parts)},
          {"expected_fields", bundle.expected_fields}};
}

Policy policy_of(const py::object &value, const Taxonomy &taxonomy) {
  if (value.is_none()) {
    return Policy{};
  }
  auto policy = policy_from_json(from_py(value));
  validate_policy(policy, taxonomy);
  return policy;
}

class PyAnnotationStore {
public:
  PyAnnotationStore(const py::iterable &corpus, const py::object &log_path, const py::object &taxonomy) {
    std::optional<std::filesystem::path> path;
    if (!log_path.is_none()) {
      path = py::str(log_path).cast<std::string>();
    }
    store_ = std::make_unique<AnnotationStore>(taxonomy_of(taxonomy), traces_of(corpus), path);
  }

  void register_annotator(const std::string &id, const std::string &role) {
    const auto parsed = parse_annotator_role(role);
    if (!parsed) {
      throw Error(ErrorCode::validation_error, "unknown role '" + role + "'");
    }
    store_->register_annotator(id, *parsed);
  }
  std::optional<std::string> next_task(const std::string &id) { return store_->next_task(id); }
  py::object submit_annotation(const py::dict &record) {
    return to_py(to_json(store_->submit_annotation(annotation_from_json(from_py(record)))));
  }
  py::object submit_adjudication(const std::string &trace_id, const py::dict &record) {
    return to_py(to_json(store_->submit_adjudication(trace_id, annotation_from_json(from_py(record)))));
  }
  py::object state(const std::string &trace_id) const { return to_py(to_json(store_->state(trace_id))); }
  py::list pending_adjudications() const {
    py::list out;
    for (const auto &task : store_->pending_adjudications()) {
      out.append(to_py(to_json(task)));
    }
    return out;
  }
  py::list export_gold() const {
    py::list out;
    for (const auto &gold : store_->export_gold()) {
      out.append(to_py(to_json(gold)));
    }
    return out;
  }
  py::object export_summary() const { return to_py(store_->export_summary()); }
  py::object snapshot() const { return to_py(store_->snapshot()); }
  void flush() { store_->flush(); }

private:
  std::unique_ptr<AnnotationStore> store_;
};

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "UI action impact classification, gating and evaluation";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&]() { return py::exception<Error>(m, "ImpactGateError", PyExc_ValueError); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) {
        std::rethrow_exception(p);
      }
    } catch (const Error &e) {
      const auto &type = error_type.get_stored();
      auto instance = type(e.what());
      instance.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(type.ptr(), instance.ptr());
    }
  });

  m.def("default_taxonomy", [] { return to_py(to_json(default_taxonomy())); });
  m.def("load_taxonomy", [](const py::object &document) { return to_py(to_json(taxonomy_of(document))); },
        py::arg("document"), "Validates a taxonomy document and returns its normalized form.");

  m.def("ingest_trace", [](const py::object &trace) { return to_py(to_json(ingest_trace(from_py(trace)))); },
        py::arg("trace"));
  m.def(
      "dedup_consecutive",
      [](const py::object &trace, double threshold) {
        return to_py(to_json(dedup_consecutive(ingest_trace(from_py(trace)), threshold)));
      },
      py::arg("trace"), py::arg("threshold") = kDefaultSimilarityThreshold);
  m.def(
      "screen_html",
      [](const py::object &trace, std::size_t index) {
        const auto parsed = ingest_trace(from_py(trace));
        if (index >= parsed.screens.size()) {
          throw py::index_error("screen index out of range");
        }
        return serialize_screen_html(parsed.screens[index]);
      },
      py::arg("trace"), py::arg("index"));
  m.def(
      "corpus_stats",
      [](const py::iterable &traces, const py::object &gold) {
        std::vector<GoldRecord> golds;
        if (!gold.is_none()) {
          for (const auto &item : gold) {
            golds.push_back(gold_from_json(from_py(item)));
          }
        }
        return to_py(to_json(corpus_stats(traces_of(traces), gold.is_none() ? nullptr : &golds)));
      },
      py::arg("traces"), py::arg("gold") = py::none());

  m.def(
      "render_system_text",
      [](const std::string &strategy, bool exemplars) {
        return render_system_text(strategy_of(strategy), default_taxonomy(),
                                  exemplars ? &default_exemplar_bank() : nullptr);
      },
      py::arg("strategy"), py::arg("exemplars") = true);
  m.def(
      "build_prompt",
      [](const std::string &strategy, const py::object &trace, bool screens_as_images, std::size_t max_screens) {
        PromptOptions options;
        options.screens_as_images = screens_as_images;
        options.max_screens = max_screens;
        return to_py(bundle_json(build_prompt(strategy_of(strategy), ingest_trace(from_py(trace)), default_taxonomy(),
                                              &default_exemplar_bank(), options)));
      },
      py::arg("strategy"), py::arg("trace"), py::arg("screens_as_images") = false, py::arg("max_screens") = 0);

  m.def(
      "parse_response",
      [](const std::string &raw, const std::string &strategy, const py::object &taxonomy) {
        return to_py(to_json(parse_response(raw, strategy_of(strategy), taxonomy_of(taxonomy))));
      },
      py::arg("raw"), py::arg("strategy"), py::arg("taxonomy") = py::none(),
      "Parses a backend answer into a prediction or an invalid-answer dict.");
  m.def(
      "serialize_prediction",
      [](const py::dict &prediction) {
        auto value = from_py(prediction);
        value["kind"] = "prediction";
        return serialize_prediction(std::get<Prediction>(outcome_from_json(value)), default_taxonomy());
      },
      py::arg("prediction"));

  m.def(
      "jaccard",
      [](const std::set<std::string> &predicted, const std::set<std::string> &gold) {
        return jaccard(predicted, gold);
      },
      py::arg("predicted"), py::arg("gold"));
  m.def("indicator", &indicator, py::arg("score"), py::arg("theta") = 0.5);

  m.def(
      "apply_policy",
      [](const py::dict &outcome, const py::object &policy) {
        return to_py(to_json(apply_policy(outcome_from_json(from_py(outcome)), policy_of(policy, default_taxonomy()))));
      },
      py::arg("outcome"), py::arg("policy") = py::none());
  m.def(
      "validate_policy", [](const py::dict &policy) { return to_py(to_json(policy_of(policy, default_taxonomy()))); },
      py::arg("policy"), "Returns the normalized policy or raises ImpactGateError.");

  m.def(
      "run_cli",
      [](const std::vector<std::string> &args) {
        std::ostringstream out;
        std::ostringstream err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one impact_gate command in-process; returns (exit_code, stdout, stderr).");

  py::class_<PyAnnotationStore>(m, "AnnotationStore")
      .def(py::init<const py::iterable &, const py::object &, const py::object &>(), py::arg("corpus"),
           py::arg("log_path") = py::none(), py::arg("taxonomy") = py::none())
      .def("register_annotator", &PyAnnotationStore::register_annotator, py::arg("annotator_id"),
           py::arg("role") = "annotator")
      .def("next_task", &PyAnnotationStore::next_task, py::arg("annotator_id"))
      .def("submit_annotation", &PyAnnotationStore::submit_annotation, py::arg("record"))
      .def("submit_adjudication", &PyAnnotationStore::submit_adjudication, py::arg("trace_id"), py::arg("record"))
      .def("state", &PyAnnotationStore::state, py::arg("trace_id"))
      .def("pending_adjudications", &PyAnnotationStore::pending_adjudications)
      .def("export_gold", &PyAnnotationStore::export_gold)
      .def("export_summary", &PyAnnotationStore::export_summary)
      .def("snapshot", &PyAnnotationStore::snapshot)
      .def("flush", &PyAnnotationStore::flush);
}
