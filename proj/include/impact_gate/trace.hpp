#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "impact_gate/records.hpp"

namespace impact_gate {

enum class ElementKind { button, text, input, image, checkbox, toggle, icon, container, other };

std::string_view to_string(ElementKind kind);
std::optional<ElementKind> parse_element_kind(std::string_view text);

struct Bounds {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;

  friend bool operator==(const Bounds &, const Bounds &) = default;
};

struct UIElement {
  std::string id;
  ElementKind kind = ElementKind::other;
  std::string text;
  Bounds bounds;
  bool clickable = false;

  friend bool operator==(const UIElement &, const UIElement &) = default;
};

struct Screen {
  std::size_t index = 0;
  std::string image_ref;
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<UIElement> elements;

  friend bool operator==(const Screen &, const Screen &) = default;
};

enum class TraceSource { synthesized, motif, androidcontrol, other };

std::string_view to_string(TraceSource source);
TraceSource parse_trace_source(std::string_view text);

struct Trace {
  std::string trace_id;
  std::string app_name;
  std::string action_description;
  TraceSource source = TraceSource::other;
  std::string task_domain; // optional
  std::vector<Screen> screens;

  friend bool operator==(const Trace &, const Trace &) = default;
};

/// Validates a trace document and renumbers screen indices to 0..n-1 in
/// ascending order of the indices found in the document.
/// Throws Error with parse_error, empty_trace or bounds_out_of_range.
Trace ingest_trace(const Json &document);
Trace ingest_trace(std::string_view document);
Trace ingest_trace(const std::string &document);

Json to_json(const Trace &trace);

/// Reads a JSON Lines corpus. Every malformed line is reported; throws
/// Error(parse_error) listing line numbers when any line fails.
std::vector<Trace> read_corpus(const std::filesystem::path &path);
std::string write_corpus(const std::vector<Trace> &traces);

/// Markup for text-only backends: one tag per element in list order inside
/// <html><body>...</body></html>.
std::string serialize_screen_html(const Screen &screen);

inline constexpr double kDefaultSimilarityThreshold = 0.95;
inline constexpr std::int64_t kBoundsBucketPixels = 16;

/// Multiset Jaccard over (kind, text, bucketed bounds) fingerprints. Two
/// screens without elements are identical.
double screen_similarity(const Screen &a, const Screen &b);

/// Collapses each run of consecutive screens whose similarity to the run head
/// is at least `threshold` to the head. Indices are renumbered.
Trace dedup_consecutive(const Trace &trace, double threshold = kDefaultSimilarityThreshold);

struct CorpusStats {
  std::size_t trace_count = 0;
  std::size_t screen_count = 0;
  double mean_screens_per_trace = 0.0;
  std::array<std::size_t, 3> impact_level_histogram{}; // indexed by ImpactLevel
  std::map<std::string, std::size_t> task_domain_histogram;
};

/// Exact counts over the corpus. The impact histogram covers traces that have
/// a gold record; every gold record must reference a trace in `traces`
/// (Error(dangling_gold_reference) otherwise).
CorpusStats corpus_stats(const std::vector<Trace> &traces,
                         const std::vector<GoldRecord> *gold_records = nullptr);

Json to_json(const CorpusStats &stats);

enum class ImportAdapter { native, motif_like, androidcontrol_like };

std::optional<ImportAdapter> parse_import_adapter(std::string_view text);

/// Converts one input record into the native trace document. The MoTIF and
/// AndroidControl adapters are best-effort mappings of commonly used export
/// shapes, not full readers of those datasets.
Json adapt_record(const Json &record, ImportAdapter adapter);

} // namespace impact_gate
