#include <doctest.h>

#include "impact_gate/error.hpp"
#include "impact_gate/prompt.hpp"
#include "impact_gate/trace.hpp"
#include "support.hpp"

using namespace impact_gate;

namespace {

Trace trace_with_screens(std::size_t n) {
  Trace trace;
  trace.trace_id = "p1";
  trace.action_description = "Tap Pay now";
  for (std::size_t i = 0; i < n; ++i) {
    Screen screen;
    screen.index = i;
    screen.width = 100;
    screen.height = 100;
    screen.image_ref = "s" + std::to_string(i) + ".png";
    screen.elements.push_back({"e", ElementKind::button, "Pay now", {0, 0, 10, 10}, true});
    trace.screens.push_back(screen);
  }
  return trace;
}

} // namespace

TEST_SUITE("prompt") {

TEST_CASE("system text matches the transcribed goldens") {
  const auto &taxonomy = default_taxonomy();
  const auto &bank = default_exemplar_bank();
  for (const auto strategy : kStrategies) {
    CAPTURE(to_string(strategy));
    const auto golden = read_file(testing::resource("golden/" + std::string(to_string(strategy)) + ".txt"));
    CHECK(normalize_whitespace(render_system_text(strategy, taxonomy, &bank)) == normalize_whitespace(golden));
  }
}

TEST_CASE("every option display name appears in the kap golden") {
  const auto golden = read_file(testing::resource("golden/kap.txt"));
  for (const auto &category : default_taxonomy().categories()) {
    CHECK_MESSAGE(golden.find(category.display_name) != std::string::npos, category.display_name);
    for (const auto &option : category.options) {
      CHECK_MESSAGE(golden.find(option.display_name) != std::string::npos, option.display_name);
    }
  }
}

TEST_CASE("icl and cot require exemplars") {
  const auto trace = trace_with_screens(1);
  for (const auto strategy : {Strategy::icl, Strategy::cot}) {
    try {
      (void)build_prompt(strategy, trace, default_taxonomy(), nullptr);
      FAIL("expected missing_bank");
    } catch (const Error &e) {
      CHECK(e.code() == ErrorCode::missing_bank);
    }
    ExemplarBank empty;
    CHECK_THROWS_AS(build_prompt(strategy, trace, default_taxonomy(), &empty), Error);
  }
  CHECK_NOTHROW(build_prompt(Strategy::kap, trace, default_taxonomy(), nullptr));

  // A bank without any reasoning narrative cannot drive cot.
  auto no_reasoning = default_exemplar_bank();
  for (auto &exemplar : no_reasoning.exemplars) {
    exemplar.reasoning.reset();
  }
  CHECK_NOTHROW(build_prompt(Strategy::icl, trace, default_taxonomy(), &no_reasoning));
  CHECK_THROWS_AS(build_prompt(Strategy::cot, trace, default_taxonomy(), &no_reasoning), Error);
}

TEST_CASE("bundle layout") {
  const auto trace = trace_with_screens(3);
  const auto bundle = build_prompt(Strategy::kap, trace, default_taxonomy());
  REQUIRE(bundle.content_parts.size() == 4);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(bundle.content_parts[i].kind == ContentPart::Kind::screen_html);
    CHECK(bundle.content_parts[i].screen_index == i);
    CHECK(bundle.content_parts[i].text == serialize_screen_html(trace.screens[i]));
  }
  CHECK(bundle.content_parts.back().text == "Action: Tap Pay now");
  CHECK(bundle.expected_fields.size() == 11);
  CHECK(bundle.expected_fields.back() == "impact_level");

  const auto zero = build_prompt(Strategy::zero_shot, trace, default_taxonomy());
  CHECK(zero.expected_fields == std::vector<std::string>{"impact_level"});

  const auto images = build_prompt(Strategy::kap, trace, default_taxonomy(), nullptr, {true, 0});
  CHECK(images.content_parts[0].kind == ContentPart::Kind::screen_image);
  CHECK(images.content_parts[0].image_ref == "s0.png");
  CHECK(images.content_parts[0].html == serialize_screen_html(trace.screens[0]));
}

TEST_CASE("long traces elide middle screens symmetrically") {
  const auto trace = trace_with_screens(9);
  const auto bundle = build_prompt(Strategy::kap, trace, default_taxonomy(), nullptr, {false, 4});
  REQUIRE(bundle.content_parts.size() == 6);
  CHECK(bundle.content_parts[0].screen_index == 0);
  CHECK(bundle.content_parts[1].screen_index == 1);
  CHECK(bundle.content_parts[2].text == "[5 intermediate screens omitted]");
  CHECK(bundle.content_parts[3].screen_index == 7);
  CHECK(bundle.content_parts[4].screen_index == 8);

  const auto tight = build_prompt(Strategy::kap, trace, default_taxonomy(), nullptr, {false, 1});
  CHECK(tight.content_parts.front().screen_index == 0);
  CHECK(tight.content_parts[2].screen_index == 8);
}

TEST_CASE("empty trace is rejected") {
  try {
    (void)build_prompt(Strategy::kap, trace_with_screens(0), default_taxonomy());
    FAIL("expected empty_trace");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::empty_trace);
  }
}

TEST_CASE("exemplar bank round-trips and hashes stably") {
  const auto &bank = default_exemplar_bank();
  CHECK(bank.exemplars.size() == 3);
  const auto reloaded = load_exemplar_bank(to_json(bank).dump(), default_taxonomy());
  CHECK(bank_hash(reloaded) == bank_hash(bank));
  CHECK(bank_hash(bank).size() == 16);
  CHECK(template_hash(Strategy::kap) != template_hash(Strategy::cot));

  auto bad = to_json(bank);
  bad["exemplars"][0]["labels"]["user_intent"] = Json::array({"teleportation"});
  CHECK_THROWS_AS(load_exemplar_bank(bad.dump(), default_taxonomy()), Error);
}

TEST_CASE("whitespace normalization") {
  CHECK(normalize_whitespace("  a \n\n b\t c  ") == "a b c");
  CHECK(normalize_whitespace("") == "");
}

}
