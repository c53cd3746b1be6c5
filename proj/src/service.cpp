#include "impact_gate/service.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <httplib.h>

namespace impact_gate {

namespace {

constexpr const char *kTokenHeader = "X-Impact-Gate-Token";
constexpr std::array<std::string_view, 10> kApiPrefixes = {
    "/annotators", "/tasks", "/traces", "/images", "/taxonomy", "/annotations", "/adjudications", "/export",
    "/assess",     "/policy"};

int status_for(ErrorCode code) {
  switch (code) {
  case ErrorCode::unknown_annotator:
  case ErrorCode::unknown_trace:
    return 404;
  case ErrorCode::not_assigned:
  case ErrorCode::duplicate_submission:
  case ErrorCode::wrong_state:
  case ErrorCode::adjudicator_conflict:
  case ErrorCode::duplicate_id:
    return 409;
  case ErrorCode::transport_failure:
    return 502;
  case ErrorCode::io_error:
    return 500;
  default:
    return 400;
  }
}

void send_json(httplib::Response &res, const Json &body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response &res, int status, std::string_view code, const std::string &message) {
  send_json(res, {{"error", code}, {"message", message}}, status);
}

Json parse_body(const httplib::Request &req) {
  try {
    return Json::parse(req.body);
  } catch (const Json::exception &e) {
    throw Error(ErrorCode::parse_error, std::string("request body: ") + e.what());
  }
}

GoldFilter filter_from(const httplib::Request &req) {
  GoldFilter filter;
  if (req.has_param("source")) {
    filter.source = parse_trace_source(req.get_param_value("source"));
  }
  return filter;
}

bool is_api_path(const std::string &path) {
  for (const auto prefix : kApiPrefixes) {
    if (path.compare(0, prefix.size(), prefix) == 0) {
      return true;
    }
  }
  return false;
}

std::string image_mime(const std::filesystem::path &path) {
  const auto ext = to_lower(path.extension().string());
  if (ext == ".jpg" || ext == ".jpeg") {
    return "image/jpeg";
  }
  if (ext == ".webp") {
    return "image/webp";
  }
  return "image/png";
}

} // namespace

struct Service::Impl {
  AnnotationStore &store;
  ServiceOptions options;
  std::shared_ptr<GateContext> gate;
  httplib::Server server;

  Impl(AnnotationStore &s, ServiceOptions o, std::shared_ptr<GateContext> g)
      : store(s), options(std::move(o)), gate(std::move(g)) {}

  template <typename Handler> auto guarded(Handler handler) {
    return [handler](const httplib::Request &req, httplib::Response &res) {
      try {
        handler(req, res);
      } catch (const Error &e) {
        send_error(res, status_for(e.code()), to_string(e.code()), e.what());
      } catch (const Json::exception &e) {
        send_error(res, 400, "parse_error", e.what());
      }
    };
  }

  void routes() {
    server.set_pre_routing_handler([this](const httplib::Request &req, httplib::Response &res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Headers", std::string("Content-Type, ") + kTokenHeader);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      if (req.method == "OPTIONS") {
        res.status = 204;
        return httplib::Server::HandlerResponse::Handled;
      }
      if (!options.token.empty() && is_api_path(req.path) && req.get_header_value(kTokenHeader) != options.token) {
        send_error(res, 401, "unauthorized", "missing or wrong " + std::string(kTokenHeader));
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });

    server.Post("/annotators", guarded([this](const httplib::Request &req, httplib::Response &res) {
      const auto body = parse_body(req);
      const auto role = parse_annotator_role(body.value("role", std::string("annotator")));
      if (!role) {
        throw Error(ErrorCode::validation_error, "role must be annotator, adjudicator or both");
      }
      const auto id = body.at("id").get<std::string>();
      store.register_annotator(id, *role);
      send_json(res, {{"id", id}, {"role", to_string(*role)}}, 201);
    }));

    server.Get("/tasks/next", guarded([this](const httplib::Request &req, httplib::Response &res) {
      if (!req.has_param("annotator")) {
        throw Error(ErrorCode::validation_error, "annotator query parameter required");
      }
      const auto task = store.next_task(req.get_param_value("annotator"));
      send_json(res, {{"trace_id", task ? Json(*task) : Json(nullptr)}});
    }));

    server.Get(R"(/traces/([^/]+))", guarded([this](const httplib::Request &req, httplib::Response &res) {
      const auto id = req.matches[1].str();
      const auto trace = store.trace(id);
      if (!trace) {
        throw Error(ErrorCode::unknown_trace, id);
      }
      Json images = Json::array();
      for (const auto &screen : trace->screens) {
        images.push_back(screen.image_ref.empty() ? Json(nullptr)
                                                  : Json("/images/" + id + "/" + std::to_string(screen.index)));
      }
      send_json(res, {{"trace", to_json(*trace)}, {"image_urls", std::move(images)}, {"state", to_json(store.state(id))}});
    }));

    server.Get(R"(/images/([^/]+)/(\d+))", guarded([this](const httplib::Request &req, httplib::Response &res) {
      const auto trace = store.trace(req.matches[1].str());
      const auto index = std::stoul(req.matches[2].str());
      if (!trace || index >= trace->screens.size() || trace->screens[index].image_ref.empty()) {
        throw Error(ErrorCode::unknown_trace, req.matches[1].str() + " has no image " + req.matches[2].str());
      }
      std::filesystem::path path = trace->screens[index].image_ref;
      if (path.is_relative()) {
        path = options.image_root / path;
      }
      std::ifstream in(path, std::ios::binary);
      if (!in) {
        throw Error(ErrorCode::unknown_trace, "image file not found: " + path.string());
      }
      std::ostringstream bytes;
      bytes << in.rdbuf();
      res.set_content(bytes.str(), image_mime(path));
    }));

    server.Get("/taxonomy", guarded([this](const httplib::Request &, httplib::Response &res) {
      send_json(res, to_json(store.taxonomy()));
    }));

    server.Post("/annotations", guarded([this](const httplib::Request &req, httplib::Response &res) {
      send_json(res, to_json(store.submit_annotation(annotation_from_json(parse_body(req)))));
    }));

    server.Get("/adjudications/pending", guarded([this](const httplib::Request &, httplib::Response &res) {
      Json out = Json::array();
      for (const auto &task : store.pending_adjudications()) {
        out.push_back(to_json(task));
      }
      send_json(res, out);
    }));

    server.Post("/adjudications", guarded([this](const httplib::Request &req, httplib::Response &res) {
      const auto body = parse_body(req);
      const auto gold =
          store.submit_adjudication(body.at("trace_id").get<std::string>(), annotation_from_json(body.at("record")));
      send_json(res, to_json(gold));
    }));

    server.Get("/export/gold", guarded([this](const httplib::Request &req, httplib::Response &res) {
      std::string out;
      for (const auto &gold : store.export_gold(filter_from(req))) {
        out += to_json(gold).dump() + "\n";
      }
      res.set_content(out, "application/x-ndjson");
    }));

    server.Get("/export/summary", guarded([this](const httplib::Request &req, httplib::Response &res) {
      send_json(res, store.export_summary(filter_from(req)));
    }));

    server.Post("/policy/validate", guarded([this](const httplib::Request &req, httplib::Response &res) {
      const auto policy = policy_from_json(parse_body(req));
      validate_policy(policy, store.taxonomy());
      send_json(res, to_json(policy));
    }));

    server.Post("/assess", guarded([this](const httplib::Request &req, httplib::Response &res) {
      if (!gate || !gate->backend) {
        send_error(res, 503, "config_error", "no backend configured for /assess");
        return;
      }
      const auto body = parse_body(req);
      const auto trace = ingest_trace(body.at("trace"));
      auto strategy = gate->strategy;
      if (body.contains("strategy")) {
        const auto parsed = parse_strategy(body["strategy"].get<std::string>());
        if (!parsed) {
          throw Error(ErrorCode::validation_error, "unknown strategy");
        }
        strategy = *parsed;
      }
      send_json(res, to_json(assess(trace, strategy, *gate->backend, store.taxonomy(), gate->policy, &gate->bank)));
    }));

    if (options.ui_dir && !server.set_mount_point("/", options.ui_dir->string())) {
      throw Error(ErrorCode::config_error, "ui directory not found: " + options.ui_dir->string());
    }
  }
};

Service::Service(AnnotationStore &store, ServiceOptions options, std::shared_ptr<GateContext> gate)
    : impl_(std::make_unique<Impl>(store, std::move(options), std::move(gate))) {
  impl_->routes();
}

Service::~Service() { stop(); }

int Service::bind() {
  auto &server = impl_->server;
  const auto &options = impl_->options;
  int port = options.port;
  if (port == 0) {
    port = server.bind_to_any_port(options.host);
  } else if (!server.bind_to_port(options.host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw Error(ErrorCode::io_error, "cannot bind " + options.host + ":" + std::to_string(options.port));
  }
  return port;
}

void Service::listen() { impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_ && impl_->server.is_running()) {
    impl_->server.stop();
  }
}

} // namespace impact_gate
