#include <doctest.h>

#include <random>

#include "impact_gate/error.hpp"
#include "impact_gate/gateway.hpp"
#include "impact_gate/trace.hpp"
#include "support.hpp"

using namespace impact_gate;

namespace {

PromptBundle bundle_for(const std::string &trace_id, Strategy strategy) {
  PromptBundle bundle;
  bundle.trace_id = trace_id;
  bundle.strategy = strategy;
  return bundle;
}

BackendDescriptor replay_descriptor(std::string name = "replay") {
  BackendDescriptor d;
  d.name = std::move(name);
  d.kind = BackendKind::replay;
  d.retries = 0;
  return d;
}

Prediction random_prediction(std::mt19937 &rng, const Taxonomy &taxonomy) {
  Prediction p;
  p.strategy = Strategy::kap;
  std::uniform_int_distribution<int> level(0, 2);
  p.impact_level = static_cast<ImpactLevel>(level(rng));
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution rare(0.2);
  for (const auto &category : taxonomy.categories()) {
    if (rare(rng)) {
      continue; // unanswered category
    }
    LabelSet labels;
    labels.category_id = category.id;
    if (category.multi_label) {
      for (const auto &option : category.options) {
        if (rare(rng)) {
          labels.options.insert(option.id);
          for (const auto &sub : option.sub_options) {
            if (coin(rng)) {
              labels.sub_options.insert(sub.id);
            }
          }
        }
      }
    } else if (!rare(rng)) {
      std::uniform_int_distribution<std::size_t> pick(0, category.options.size() - 1);
      labels.options.insert(category.options[pick(rng)].id);
      labels.time_bound = rare(rng);
    }
    p.labels[category.id] = labels;
  }
  return p;
}

std::vector<Outcome> outcomes_with_usable(std::size_t usable, std::size_t total) {
  std::vector<Outcome> out;
  for (std::size_t i = 0; i < total; ++i) {
    if (i < usable) {
      Prediction p;
      p.impact_level = ImpactLevel::minimum;
      p.labels["reversibility"] = LabelSet{"reversibility", {"instantly_reversible"}, {}, false};
      out.emplace_back(p);
    } else if (i % 2 == 0) {
      out.emplace_back(InvalidAnswer{});
    } else {
      Prediction p; // answered the level but not the category
      p.impact_level = ImpactLevel::minimum;
      out.emplace_back(p);
    }
  }
  return out;
}

class FlakyBackend final : public Backend {
public:
  FlakyBackend(std::size_t failures, std::size_t retries) : Backend(make(retries)), failures_(failures) {}
  std::string complete(const PromptBundle &) override {
    ++calls;
    if (calls <= failures_) {
      throw TransportError("flaky");
    }
    return R"({"Impact Level": "Moderate"})";
  }
  std::size_t calls = 0;

private:
  static BackendDescriptor make(std::size_t retries) {
    BackendDescriptor d;
    d.name = "flaky";
    d.retries = retries;
    return d;
  }
  std::size_t failures_;
};

} // namespace

TEST_SUITE("gateway") {

TEST_CASE("malformed response corpus splits as recorded") {
  const auto &taxonomy = default_taxonomy();
  const auto items = read_json_lines(testing::fixture("malformed_responses.jsonl"));
  REQUIRE(items.size() == 50);
  for (const auto &item : items) {
    CAPTURE(item["id"].get<std::string>());
    const auto strategy = *parse_strategy(item["strategy"].get<std::string>());
    Outcome outcome;
    REQUIRE_NOTHROW(outcome = parse_response(item["raw_response"].get<std::string>(), strategy, taxonomy));
    const auto &expected = item["expected"];
    if (expected["kind"] == "prediction") {
      REQUIRE(std::holds_alternative<Prediction>(outcome));
      const auto &p = std::get<Prediction>(outcome);
      REQUIRE(p.impact_level);
      CHECK(to_string(*p.impact_level) == expected["impact_level"].get<std::string>());
      if (strategy != Strategy::zero_shot) {
        CHECK(p.labels.size() == 10);
      }
    } else {
      REQUIRE(std::holds_alternative<InvalidAnswer>(outcome));
      CHECK(to_string(std::get<InvalidAnswer>(outcome).reason) == expected["reason"].get<std::string>());
    }
  }
}

TEST_CASE("parser accepts common answer shapes") {
  const auto &taxonomy = default_taxonomy();
  const auto outcome = parse_response(R"(Answer: {"User Intent": "Communication; Configuration",
      "impact_on_ui": ["Content Update"], "Reversibility": "Multiple Steps Required Timely",
      "Impact on Other Users": "No Impact", "Idempotency": "N/A",
      "Mood": "happy",
      "Impact Level": "moderate impact", "Justification": "why"})",
                                      Strategy::kap, taxonomy);
  REQUIRE(std::holds_alternative<Prediction>(outcome));
  const auto &p = std::get<Prediction>(outcome);
  CHECK(p.impact_level == ImpactLevel::moderate);
  CHECK(p.labels.at("user_intent").options == std::set<std::string>{"communication", "configuration"});
  CHECK(p.labels.at("impact_on_ui").options == std::set<std::string>{"content_update"});
  CHECK(p.labels.at("reversibility").options == std::set<std::string>{"multiple_steps_required"});
  CHECK(p.labels.at("reversibility").time_bound);
  CHECK(p.labels.at("impact_on_others").options.empty());
  CHECK(p.labels.at("idempotency").options.empty());
  CHECK(p.reasoning_text == "why");
  CHECK_FALSE(p.labels.contains("statefulness"));
}

TEST_CASE("parser failure modes") {
  const auto &taxonomy = default_taxonomy();
  const auto reason = [&](std::string_view raw, Strategy strategy = Strategy::kap) {
    const auto outcome = parse_response(raw, strategy, taxonomy);
    REQUIRE(std::holds_alternative<InvalidAnswer>(outcome));
    return std::get<InvalidAnswer>(outcome).reason;
  };
  CHECK(reason("no json here") == InvalidReason::unparseable);
  CHECK(reason(R"({"Impact Level": "Catastrophic"})") == InvalidReason::unknown_label);
  CHECK(reason(R"({"Impact Level": "minimum or moderate"})") == InvalidReason::unknown_label);
  CHECK(reason(R"({"Reversibility": "Instantly Reversible"})") == InvalidReason::missing_field);
  CHECK(reason(R"({"Reversibility": ["Instantly Reversible", "Multi-stage Complexity"], "Impact Level": "Minimum"})") ==
        InvalidReason::unknown_label);
  CHECK(reason(R"({"Reversibility": 3, "Impact Level": "Minimum"})") == InvalidReason::unknown_label);
  // zero_shot ignores category answers entirely.
  CHECK(std::holds_alternative<Prediction>(
      parse_response(R"({"Reversibility": "??", "Impact Level": "Minimum"})", Strategy::zero_shot, taxonomy)));
}

TEST_CASE("first balanced object wins") {
  CHECK(extract_first_json_object(R"(x {"a": {"b": 1}} {"c": 2})") == Json::parse(R"({"a": {"b": 1}})"));
  CHECK(extract_first_json_object(R"(see {the cart} then {"a": "}"})") == Json::parse(R"({"a": "}"})"));
  CHECK_FALSE(extract_first_json_object("{\"a\": 1"));
  CHECK_FALSE(extract_first_json_object(""));
}

TEST_CASE("serialize then parse is the identity on labels and level") {
  const auto &taxonomy = default_taxonomy();
  std::mt19937 rng(20240);
  for (int round = 0; round < 500; ++round) {
    auto p = random_prediction(rng, taxonomy);
    p.reasoning_text = "r" + std::to_string(round);
    const auto text = serialize_prediction(p, taxonomy);
    const auto outcome = parse_response(text, Strategy::kap, taxonomy);
    REQUIRE(std::holds_alternative<Prediction>(outcome));
    const auto &back = std::get<Prediction>(outcome);
    CHECK(back.impact_level == p.impact_level);
    CHECK(back.labels == p.labels);
    CHECK(back.reasoning_text == p.reasoning_text);
  }
}

TEST_CASE("outcomes round-trip through json") {
  Prediction p;
  p.trace_id = "t";
  p.strategy = Strategy::cot;
  p.backend = "b";
  p.impact_level = ImpactLevel::significant;
  p.labels["user_intent"] = LabelSet{"user_intent", {"communication"}, {}, false};
  p.reasoning_text = "because";
  p.raw_response = "{...}";
  CHECK(std::get<Prediction>(outcome_from_json(to_json(Outcome{p}))) == p);
  InvalidAnswer a{"t", Strategy::icl, "b", InvalidReason::missing_field, "d", "raw"};
  CHECK(std::get<InvalidAnswer>(outcome_from_json(to_json(Outcome{a}))) == a);
}

TEST_CASE("redaction at counted validity fractions") {
  CHECK(redaction_status("reversibility", outcomes_with_usable(4, 10)) == Redaction::redacted);
  CHECK(redaction_status("reversibility", outcomes_with_usable(5, 10)) == Redaction::redacted);
  CHECK(redaction_status("reversibility", outcomes_with_usable(6, 10)) == Redaction::reported);
  CHECK(redaction_status("reversibility", {}) == Redaction::redacted);
  CHECK(redaction_status("reversibility", outcomes_with_usable(6, 10), 0.6) == Redaction::redacted);
}

TEST_CASE("replay backend serves stored responses") {
  const std::string lines = R"({"trace_id": "t1", "strategy": "kap", "raw_response": "{\"Impact Level\": \"Minimum\"}"}
{"trace_id": "t1", "strategy": "kap", "backend": "other", "raw_response": "ignored"}
{"trace_id": "t2", "strategy": "cot", "backend": "replay", "raw_response": "x"}
)";
  ReplayBackend backend(replay_descriptor(), lines);
  CHECK(backend.size() == 2);
  CHECK(backend.complete(bundle_for("t1", Strategy::kap)) == R"({"Impact Level": "Minimum"})");
  CHECK_THROWS_AS(backend.complete(bundle_for("t1", Strategy::cot)), TransportError);
  const auto missing = classify(bundle_for("t9", Strategy::kap), backend, default_taxonomy());
  REQUIRE(std::holds_alternative<InvalidAnswer>(missing));
  CHECK(std::get<InvalidAnswer>(missing).reason == InvalidReason::transport_failure);
  CHECK(std::get<InvalidAnswer>(missing).trace_id == "t9");
  CHECK_THROWS_AS(ReplayBackend(replay_descriptor(), "{\"trace_id\": \"t\"}\n"), Error);
}

TEST_CASE("retry contract") {
  FlakyBackend recovers(2, 2);
  const auto ok = classify(bundle_for("t", Strategy::zero_shot), recovers, default_taxonomy());
  CHECK(std::holds_alternative<Prediction>(ok));
  CHECK(recovers.calls == 3);
  CHECK(std::get<Prediction>(ok).backend == "flaky");

  FlakyBackend gives_up(3, 2);
  const auto failed = classify(bundle_for("t", Strategy::zero_shot), gives_up, default_taxonomy());
  REQUIRE(std::holds_alternative<InvalidAnswer>(failed));
  CHECK(std::get<InvalidAnswer>(failed).reason == InvalidReason::transport_failure);
  CHECK(gives_up.calls == 3);
}

TEST_CASE("classify_all preserves input order under parallelism") {
  std::string lines;
  std::vector<PromptBundle> bundles;
  for (int i = 0; i < 64; ++i) {
    const auto id = "t" + std::to_string(i);
    const auto level = i % 3 == 0 ? "Minimum" : (i % 3 == 1 ? "Moderate" : "Significant");
    lines += Json{{"trace_id", id}, {"strategy", "kap"}, {"raw_response", Json{{"Impact Level", level}}.dump()}}.dump() +
             "\n";
    bundles.push_back(bundle_for(id, Strategy::kap));
  }
  auto descriptor = replay_descriptor();
  descriptor.max_parallel = 8;
  ReplayBackend backend(descriptor, lines);
  const auto outcomes = classify_all(bundles, backend, default_taxonomy());
  REQUIRE(outcomes.size() == 64);
  for (int i = 0; i < 64; ++i) {
    CHECK(outcome_trace_id(outcomes[i]) == "t" + std::to_string(i));
    CHECK(std::get<Prediction>(outcomes[i]).impact_level == static_cast<ImpactLevel>(i % 3));
  }
}

TEST_CASE("text-only dispatch swaps images for markup") {
  PromptBundle bundle;
  ContentPart image;
  image.kind = ContentPart::Kind::screen_image;
  image.image_ref = "s.png";
  image.html = "<html><body></body></html>";
  bundle.content_parts.push_back(image);
  const auto text = prepare_for_dispatch(bundle, Capability::text_only);
  CHECK(text.content_parts[0].kind == ContentPart::Kind::screen_html);
  CHECK(text.content_parts[0].text == image.html);
  CHECK(prepare_for_dispatch(bundle, Capability::multimodal).content_parts[0].kind ==
        ContentPart::Kind::screen_image);
}

TEST_CASE("backend configuration") {
  const auto backends = load_backend_config(testing::fixture("replay209/backends.json"));
  REQUIRE(backends.size() == 2);
  CHECK(backends[0].name == "replay-text");
  CHECK(backends[0].capability == Capability::text_only);
  CHECK(backends[1].capability == Capability::multimodal);
  CHECK(backends[0].replay_path == testing::fixture("replay209/replay_text.jsonl"));
  CHECK(backends[0].max_parallel == 4);
  CHECK(to_json(backends[0])["replay_path"] == "replay_text.jsonl");
  CHECK(api_key_env_var("gpt-4o mini") == "IMPACT_GATE_API_KEY_GPT_4O_MINI");
  CHECK_THROWS_AS(backend_from_json(Json{{"name", "x"}, {"kind", "http_endpoint"}}, "."), Error);
  CHECK_THROWS_AS(backend_from_json(Json{{"name", "x"}, {"capability", "telepathic"}, {"replay_path", "a"}}, "."),
                  Error);
}

TEST_CASE("http request body follows the chat-completions shape") {
  BackendDescriptor d;
  d.name = "endpoint";
  d.kind = BackendKind::http_endpoint;
  d.url = "http://127.0.0.1:1/v1/chat/completions";
  d.model = "m";
  HttpBackend backend(d);
  PromptBundle bundle;
  bundle.system_text = "sys";
  ContentPart part;
  part.text = "Action: x";
  bundle.content_parts.push_back(part);
  const auto body = backend.request_body(bundle);
  CHECK(body["model"] == "m");
  CHECK(body["temperature"] == 0.0);
  CHECK(body["messages"][0]["content"] == "sys");
  CHECK(body["messages"][1]["content"][0]["text"] == "Action: x");
}

}
