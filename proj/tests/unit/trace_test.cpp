#include <doctest.h>

#include <numeric>
#include <random>

#include "impact_gate/error.hpp"
#include "impact_gate/trace.hpp"
#include "support.hpp"

using namespace impact_gate;

namespace {

Json minimal_trace() {
  return Json::parse(R"({
    "trace_id": "t1", "app_name": "Mail", "action_description": "Send the draft",
    "source": "synthesized",
    "screens": [
      {"index": 1, "width": 100, "height": 200, "elements": [
        {"id": "b", "kind": "button", "text": "Send", "bounds": [10, 10, 50, 20], "clickable": true}]},
      {"index": 0, "width": 100, "height": 200, "elements": [
        {"id": "t", "kind": "text", "text": "Draft <1> & \"2\"", "bounds": [0, 0, 100, 30]}]}
    ]})");
}

ErrorCode ingest_error(const Json &document) {
  try {
    (void)ingest_trace(document);
  } catch (const Error &e) {
    return e.code();
  }
  FAIL("ingest unexpectedly succeeded");
  return ErrorCode::io_error;
}

Screen random_screen(std::mt19937 &rng, int palette) {
  Screen screen;
  screen.width = 1000;
  screen.height = 1000;
  std::uniform_int_distribution<int> count(0, 4);
  std::uniform_int_distribution<int> pick(0, palette - 1);
  const auto n = count(rng);
  for (int i = 0; i < n; ++i) {
    const auto k = pick(rng);
    screen.elements.push_back({std::to_string(i), ElementKind::text, "w" + std::to_string(k), {k * 20, 0, 10, 10}, false});
  }
  return screen;
}

} // namespace

TEST_SUITE("trace") {

TEST_CASE("ingest orders screens by declared index") {
  const auto trace = ingest_trace(minimal_trace());
  REQUIRE(trace.screens.size() == 2);
  CHECK(trace.screens[0].elements[0].id == "t");
  CHECK(trace.screens[1].elements[0].kind == ElementKind::button);
  CHECK(trace.screens[1].index == 1);
  CHECK(trace.source == TraceSource::synthesized);
  CHECK(ingest_trace(to_json(trace)) == trace);
  CHECK(ingest_trace(to_json(trace).dump()) == trace);
}

TEST_CASE("ingest rejects broken traces") {
  auto empty = minimal_trace();
  empty["screens"] = Json::array();
  CHECK(ingest_error(empty) == ErrorCode::empty_trace);

  auto outside = minimal_trace();
  outside["screens"][0]["elements"][0]["bounds"] = {90, 10, 50, 20};
  CHECK(ingest_error(outside) == ErrorCode::bounds_out_of_range);

  auto unnamed = minimal_trace();
  unnamed.erase("trace_id");
  CHECK(ingest_error(unnamed) == ErrorCode::parse_error);

  auto silent = minimal_trace();
  silent["action_description"] = "   ";
  CHECK(ingest_error(silent) == ErrorCode::parse_error);
  CHECK_THROWS_AS(ingest_trace(std::string_view("{not json")), Error);
}

TEST_CASE("html serialization is escaped and ordered") {
  const auto trace = ingest_trace(minimal_trace());
  CHECK(serialize_screen_html(trace.screens[0]) ==
        "<html><body>\n<div kind=\"text\" id=\"t\" data-bounds=\"0,0,100,30\" clickable=\"false\">"
        "Draft &lt;1&gt; &amp; &quot;2&quot;</div>\n</body></html>");
  CHECK(serialize_screen_html(trace.screens[1]) ==
        "<html><body>\n<button id=\"b\" data-bounds=\"10,10,50,20\" clickable=\"true\">Send</button>\n</body></html>");
  CHECK(serialize_screen_html(Screen{}) == "<html><body></body></html>");
}

TEST_CASE("dedup fixture keeps the hand-counted heads") {
  const auto document = testing::fixture_json("dedup_trace.json");
  const auto trace = ingest_trace(document["trace"]);
  REQUIRE(trace.screens.size() == 10);
  CHECK(screen_similarity(trace.screens[0], trace.screens[1]) == doctest::Approx(50.0 / 51.0));
  CHECK(screen_similarity(trace.screens[0], trace.screens[3]) == 0.0);
  const auto deduped = dedup_consecutive(trace);
  REQUIRE(deduped.screens.size() == document["expected_screens"].get<std::size_t>());
  const auto kept = document["expected_kept"].get<std::vector<std::size_t>>();
  for (std::size_t i = 0; i < kept.size(); ++i) {
    CHECK(deduped.screens[i].index == i);
    CHECK(deduped.screens[i].image_ref == trace.screens[kept[i]].image_ref);
  }
  // A stricter threshold than 50/51 keeps every screen.
  CHECK(dedup_consecutive(trace, 0.99).screens.size() == 10);
}

TEST_CASE("dedup is idempotent and never grows a trace") {
  std::mt19937 rng(7);
  for (int round = 0; round < 300; ++round) {
    Trace trace;
    trace.trace_id = "p";
    std::uniform_int_distribution<int> length(1, 12);
    const auto n = length(rng);
    for (int i = 0; i < n; ++i) {
      trace.screens.push_back(random_screen(rng, 3));
      trace.screens.back().index = static_cast<std::size_t>(i);
    }
    for (const double threshold : {0.5, 0.8, 0.95, 1.0}) {
      const auto once = dedup_consecutive(trace, threshold);
      CHECK(dedup_consecutive(once, threshold) == once);
      CHECK(once.screens.size() <= trace.screens.size());
      CHECK_FALSE(once.screens.empty());
      CHECK(once.screens.front() == trace.screens.front());
    }
  }
}

TEST_CASE("similarity is symmetric and bounded") {
  std::mt19937 rng(11);
  for (int round = 0; round < 500; ++round) {
    const auto a = random_screen(rng, 4);
    const auto b = random_screen(rng, 4);
    const auto s = screen_similarity(a, b);
    CHECK(s == screen_similarity(b, a));
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    CHECK(screen_similarity(a, a) == 1.0);
  }
}

TEST_CASE("corpus stats use exact counts") {
  const auto traces = read_corpus(testing::fixture("annotation_corpus.jsonl"));
  const auto expected = testing::fixture_json("annotation_expected.json");
  const auto stats = corpus_stats(traces);
  CHECK(stats.trace_count == 250);
  CHECK(stats.screen_count == expected["screens"].get<std::size_t>());
  std::size_t screens = 0;
  for (const auto &trace : traces) {
    screens += trace.screens.size();
  }
  CHECK(stats.mean_screens_per_trace == static_cast<double>(screens) / 250.0);
  CHECK(stats.mean_screens_per_trace == 5.312);
  const auto total = std::accumulate(stats.task_domain_histogram.begin(), stats.task_domain_histogram.end(),
                                     std::size_t{0}, [](std::size_t sum, const auto &kv) { return sum + kv.second; });
  CHECK(total == 250);
}

TEST_CASE("corpus stats histogram covers gold and rejects dangling references") {
  const auto traces = read_corpus(testing::fixture("replay209/corpus.jsonl"));
  const auto golds = read_gold_file(testing::fixture("replay209/gold.jsonl"));
  const auto stats = corpus_stats(traces, &golds);
  CHECK(stats.impact_level_histogram == std::array<std::size_t, 3>{56, 103, 50});
  auto dangling = golds;
  dangling.front().trace_id = "nowhere";
  try {
    (void)corpus_stats(traces, &dangling);
    FAIL("expected dangling_gold_reference");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::dangling_gold_reference);
  }
}

TEST_CASE("corpus reader reports malformed lines") {
  try {
    (void)read_corpus(testing::fixture("import_malformed.jsonl"));
    FAIL("expected parse_error");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::parse_error);
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  const auto traces = read_corpus(testing::fixture("import_native.jsonl"));
  REQUIRE(traces.size() == 3);
  std::vector<Json> lines;
  for (const auto &trace : traces) {
    lines.push_back(to_json(trace));
  }
  CHECK(write_corpus(traces) == to_json_lines(lines));
}

TEST_CASE("import adapters map common export shapes") {
  const auto motif = read_json_lines(testing::fixture("import_motif.jsonl")).front();
  const auto from_motif = ingest_trace(adapt_record(motif, ImportAdapter::motif_like));
  CHECK(from_motif.trace_id == "motif-7");
  CHECK(from_motif.source == TraceSource::motif);
  CHECK(from_motif.action_description == "Delete the note");
  REQUIRE(from_motif.screens.size() == 1);
  REQUIRE(from_motif.screens[0].elements.size() == 2);
  CHECK(from_motif.screens[0].elements[0].kind == ElementKind::button);
  CHECK(from_motif.screens[0].elements[0].bounds == Bounds{10, 20, 290, 120});
  // Boxes overhanging the screen are clamped to it.
  CHECK(from_motif.screens[0].elements[1].bounds == Bounds{0, 0, 1080, 80});
  CHECK(from_motif.screens[0].elements[1].text == "Title");

  const auto android = read_json_lines(testing::fixture("import_androidcontrol.jsonl")).front();
  const auto from_android = ingest_trace(adapt_record(android, ImportAdapter::androidcontrol_like));
  CHECK(from_android.trace_id == "42");
  CHECK(from_android.source == TraceSource::androidcontrol);
  REQUIRE(from_android.screens[0].elements.size() == 1);
  CHECK(from_android.screens[0].elements[0].kind == ElementKind::toggle);
  CHECK(from_android.screens[0].elements[0].clickable);
  CHECK(from_android.screens[0].elements[0].bounds == Bounds{40, 300, 1000, 120});

  CHECK(parse_import_adapter("motif_like") == ImportAdapter::motif_like);
  CHECK_FALSE(parse_import_adapter("rico"));
}

}
