#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "impact_gate/annotation.hpp"
#include "impact_gate/gateway.hpp"
#include "impact_gate/service.hpp"
#include "impact_gate/trace.hpp"
#include "support.hpp"

using namespace impact_gate;

namespace {

/// Chat-completions stand-in that fails the first `failures` requests.
class FakeEndpoint {
public:
  explicit FakeEndpoint(int failures) : failures_(failures) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request &req, httplib::Response &res) {
      last_authorization = req.get_header_value("Authorization");
      last_body = req.body;
      if (++calls <= failures_) {
        res.status = 500;
        res.set_content("overloaded", "text/plain");
        return;
      }
      const Json envelope = {
          {"choices", Json::array({{{"message", {{"role", "assistant"}, {"content", R"({"Impact Level": "Significant"})"}}}}})}};
      res.set_content(envelope.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }
  [[nodiscard]] std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

  std::atomic<int> calls{0};
  std::string last_authorization;
  std::string last_body;

private:
  int failures_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

BackendDescriptor endpoint_descriptor(const std::string &url, std::size_t retries) {
  BackendDescriptor d;
  d.name = "local";
  d.kind = BackendKind::http_endpoint;
  d.url = url;
  d.model = "stub";
  d.retries = retries;
  d.timeout_s = 5;
  return d;
}

PromptBundle tiny_bundle() {
  PromptBundle bundle;
  bundle.trace_id = "t1";
  bundle.strategy = Strategy::zero_shot;
  bundle.system_text = "classify";
  ContentPart part;
  part.text = "Action: x";
  bundle.content_parts.push_back(part);
  return bundle;
}

/// Runs a Service on a free port for the lifetime of the object.
class LiveService {
public:
  LiveService(AnnotationStore &store, ServiceOptions options, std::shared_ptr<GateContext> gate = nullptr)
      : service_(store, [&] {
          options.port = 0;
          return options;
        }(), std::move(gate)) {
    port_ = service_.bind();
    thread_ = std::thread([this] { service_.listen(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    for (int i = 0; i < 200 && !client_->Options("/taxonomy"); ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }
  ~LiveService() {
    service_.stop();
    thread_.join();
  }
  httplib::Client &client() { return *client_; }

private:
  Service service_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

Json record_json(const std::string &trace_id, const std::string &annotator, const std::string &level) {
  Json labels = Json::object();
  for (const auto &category : default_taxonomy().categories()) {
    labels[category.id] = Json::array();
  }
  return {{"trace_id", trace_id},
          {"annotator_id", annotator},
          {"labels", labels},
          {"impact_level", level},
          {"justification", "j"}};
}

std::vector<Trace> two_traces() {
  std::vector<Trace> corpus;
  for (const auto *id : {"h1", "h2"}) {
    Trace trace;
    trace.trace_id = id;
    trace.action_description = "Tap Send";
    trace.source = TraceSource::synthesized;
    Screen screen;
    screen.width = 10;
    screen.height = 10;
    screen.image_ref = std::string(id) + ".png";
    trace.screens.push_back(screen);
    corpus.push_back(trace);
  }
  return corpus;
}

} // namespace

TEST_SUITE("http") {

TEST_CASE("endpoint failing three times with two retries yields transport_failure") {
  FakeEndpoint endpoint(3);
  HttpBackend backend(endpoint_descriptor(endpoint.url(), 2));
  const auto outcome = classify(tiny_bundle(), backend, default_taxonomy());
  REQUIRE(std::holds_alternative<InvalidAnswer>(outcome));
  CHECK(std::get<InvalidAnswer>(outcome).reason == InvalidReason::transport_failure);
  CHECK(endpoint.calls == 3);
  // The fourth request succeeds.
  const auto recovered = classify(tiny_bundle(), backend, default_taxonomy());
  REQUIRE(std::holds_alternative<Prediction>(recovered));
  CHECK(std::get<Prediction>(recovered).impact_level == ImpactLevel::significant);
  CHECK(endpoint.calls == 4);
}

TEST_CASE("endpoint recovering within the retry budget") {
  FakeEndpoint endpoint(2);
  ::setenv("IMPACT_GATE_API_KEY_LOCAL", "sekret", 1);
  HttpBackend backend(endpoint_descriptor(endpoint.url(), 2));
  ::unsetenv("IMPACT_GATE_API_KEY_LOCAL");
  const auto outcome = classify(tiny_bundle(), backend, default_taxonomy());
  CHECK(std::holds_alternative<Prediction>(outcome));
  CHECK(endpoint.calls == 3);
  CHECK(endpoint.last_authorization == "Bearer sekret");
  const auto body = Json::parse(endpoint.last_body);
  CHECK(body["model"] == "stub");
  CHECK(body["messages"][0]["content"] == "classify");
}

TEST_CASE("unreachable endpoint") {
  HttpBackend backend(endpoint_descriptor("http://127.0.0.1:1/v1/chat/completions", 1));
  const auto outcome = classify(tiny_bundle(), backend, default_taxonomy());
  REQUIRE(std::holds_alternative<InvalidAnswer>(outcome));
  CHECK(std::get<InvalidAnswer>(outcome).reason == InvalidReason::transport_failure);
}

TEST_CASE("annotation service round trip") {
  testing::TempDir images;
  write_file(images / "h1.png", "PNGDATA");
  AnnotationStore store(default_taxonomy(), two_traces());
  ServiceOptions options;
  options.image_root = images.path();
  LiveService live(store, options);
  auto &client = live.client();

  const auto post = [&](const std::string &path, const Json &body) {
    return client.Post(path, body.dump(), "application/json");
  };
  auto res = post("/annotators", {{"id", "a1"}, {"role", "annotator"}});
  REQUIRE(res);
  CHECK(res->status == 201);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(post("/annotators", {{"id", "a1"}})->status == 409);
  CHECK(post("/annotators", {{"id", "x"}, {"role", "boss"}})->status == 400);
  CHECK(post("/annotators", {{"id", "a2"}, {"role", "annotator"}})->status == 201);
  CHECK(post("/annotators", {{"id", "adj"}, {"role", "adjudicator"}})->status == 201);

  CHECK(client.Get("/tasks/next?annotator=ghost")->status == 404);
  CHECK(client.Get("/tasks/next")->status == 400);
  res = client.Get("/tasks/next?annotator=a1");
  CHECK(Json::parse(res->body)["trace_id"] == "h1");

  res = client.Get("/traces/h1");
  REQUIRE(res->status == 200);
  const auto trace = Json::parse(res->body);
  CHECK(trace["trace"]["trace_id"] == "h1");
  CHECK(trace["image_urls"][0] == "/images/h1/0");
  CHECK(trace["state"]["assigned"] == Json::array({"a1"}));
  CHECK(client.Get("/traces/nope")->status == 404);

  res = client.Get("/images/h1/0");
  REQUIRE(res->status == 200);
  CHECK(res->body == "PNGDATA");
  CHECK(res->get_header_value("Content-Type") == "image/png");
  CHECK(client.Get("/images/h2/0")->status == 404);
  CHECK(client.Get("/images/h1/5")->status == 404);

  res = client.Get("/taxonomy");
  CHECK(Json::parse(res->body)["categories"].size() == 10);

  CHECK(post("/annotations", record_json("h1", "a2", "minimum"))->status == 409);
  CHECK(client.Post("/annotations", "{broken", "application/json")->status == 400);
  res = post("/annotations", record_json("h1", "a1", "minimum"));
  REQUIRE(res->status == 200);
  CHECK(Json::parse(res->body)["state"] == "single_annotated");
  CHECK(post("/annotations", record_json("h1", "a1", "minimum"))->status == 409);

  CHECK(Json::parse(client.Get("/tasks/next?annotator=a2")->body)["trace_id"] == "h2");
  CHECK(post("/annotations", record_json("h2", "a2", "moderate"))->status == 200);
  CHECK(Json::parse(client.Get("/tasks/next?annotator=a2")->body)["trace_id"] == "h1");
  res = post("/annotations", record_json("h1", "a2", "significant"));
  CHECK(Json::parse(res->body)["state"] == "needs_adjudication");

  res = client.Get("/adjudications/pending");
  const auto pending = Json::parse(res->body);
  REQUIRE(pending.size() == 1);
  CHECK(pending[0]["differing_fields"] == Json::array({"impact_level"}));

  CHECK(post("/adjudications", {{"trace_id", "h1"}, {"record", record_json("h1", "a1", "moderate")}})->status == 409);
  CHECK(post("/adjudications", {{"trace_id", "h2"}, {"record", record_json("h2", "adj", "moderate")}})->status == 409);
  res = post("/adjudications", {{"trace_id", "h1"}, {"record", record_json("h1", "adj", "moderate")}});
  REQUIRE(res->status == 200);
  CHECK(Json::parse(res->body)["impact_level"] == "moderate");

  res = client.Get("/export/gold");
  CHECK(res->get_header_value("Content-Type") == "application/x-ndjson");
  CHECK(res->body == to_json(store.export_gold().front()).dump() + "\n");
  CHECK(client.Get("/export/gold?source=motif")->body.empty());
  res = client.Get("/export/summary");
  CHECK(Json::parse(res->body) == store.export_summary());

  res = post("/policy/validate", Json::parse(R"({"rules": [{"if": {"equals_level": "moderate"},
                                                            "then": {"force": "defer_to_human"}}]})"));
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body)["rules"].size() == 1);
  res = post("/policy/validate", Json::parse(R"({"rules": [{"if": {"category": "mood", "contains": "x"},
                                                            "then": {"force": "defer_to_human"}}]})"));
  CHECK(res->status == 400);
  CHECK(Json::parse(res->body)["error"] == "policy_error");

  CHECK(post("/assess", {{"trace", to_json(two_traces()[0])}})->status == 503);
  res = client.Options("/annotations");
  CHECK(res->status == 204);
}

TEST_CASE("token check and the assess endpoint") {
  AnnotationStore store(default_taxonomy(), two_traces());
  auto gate = std::make_shared<GateContext>();
  BackendDescriptor d;
  d.name = "replay";
  d.retries = 0;
  gate->backend = std::make_unique<ReplayBackend>(
      d, R"({"trace_id": "h1", "strategy": "kap", "raw_response": "{\"Impact Level\": \"Moderate\"}"})");
  ServiceOptions options;
  options.token = "s3cret";
  testing::TempDir ui;
  write_file(ui / "index.html", "<html>ui</html>");
  options.ui_dir = ui.path();
  LiveService live(store, options, gate);
  auto &client = live.client();

  CHECK(client.Get("/taxonomy")->status == 401);
  CHECK(client.Get("/index.html")->body == "<html>ui</html>");
  const httplib::Headers auth = {{"X-Impact-Gate-Token", "s3cret"}};
  CHECK(client.Get("/taxonomy", auth)->status == 200);

  const Json body = {{"trace", to_json(two_traces()[0])}};
  auto res = client.Post("/assess", auth, body.dump(), "application/json");
  REQUIRE(res->status == 200);
  const auto assessment = Json::parse(res->body);
  CHECK(assessment["decision"] == "confirm_with_summary");
  CHECK(assessment["summary_text"].get<std::string>().rfind("Action: Tap Send", 0) == 0);

  const Json other = {{"trace", to_json(two_traces()[1])}, {"strategy", "kap"}};
  res = client.Post("/assess", auth, other.dump(), "application/json");
  CHECK(Json::parse(res->body)["decision"] == "defer_to_human");
  const Json bad = {{"trace", to_json(two_traces()[1])}, {"strategy", "telepathy"}};
  CHECK(client.Post("/assess", auth, bad.dump(), "application/json")->status == 400);
  const Json empty = {{"trace", {{"trace_id", "e"}, {"action_description", "x"}, {"screens", Json::array()}}}};
  CHECK(client.Post("/assess", auth, empty.dump(), "application/json")->status == 400);
}

}
