#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "impact_gate/error.hpp"
#include "impact_gate/prompt.hpp"

namespace impact_gate {

enum class Capability { text_only, multimodal };
enum class BackendKind { http_endpoint, replay };

std::string_view to_string(Capability capability);
std::string_view to_string(BackendKind kind);

struct BackendDescriptor {
  std::string name;
  Capability capability = Capability::text_only;
  BackendKind kind = BackendKind::replay;
  std::string url;
  std::string model;
  std::filesystem::path replay_path;
  std::size_t max_parallel = 1;
  double timeout_s = 60.0;
  std::size_t retries = 2;
  std::optional<double> temperature; // unset means the endpoint's deterministic default (0)
};

BackendDescriptor backend_from_json(const Json &value, const std::filesystem::path &base_dir);
Json to_json(const BackendDescriptor &descriptor);

/// Accepts a single descriptor object, an array, or {"backends": [...]}.
/// Relative replay paths resolve against the config file's directory.
std::vector<BackendDescriptor> load_backend_config(const std::filesystem::path &path);

/// Name of the environment variable holding a backend's API key.
std::string api_key_env_var(std::string_view backend_name);

struct Prediction {
  std::string trace_id;
  Strategy strategy = Strategy::zero_shot;
  std::string backend;
  std::optional<ImpactLevel> impact_level;
  LabelMap labels; // categories the response answered; absent ones were not answered
  std::optional<std::string> reasoning_text;
  std::string raw_response;

  friend bool operator==(const Prediction &, const Prediction &) = default;
};

enum class InvalidReason { unparseable, unknown_label, missing_field, transport_failure };

std::string_view to_string(InvalidReason reason);
std::optional<InvalidReason> parse_invalid_reason(std::string_view text);

struct InvalidAnswer {
  std::string trace_id;
  Strategy strategy = Strategy::zero_shot;
  std::string backend;
  InvalidReason reason = InvalidReason::unparseable;
  std::string detail;
  std::string raw_response;

  friend bool operator==(const InvalidAnswer &, const InvalidAnswer &) = default;
};

using Outcome = std::variant<Prediction, InvalidAnswer>;

const std::string &outcome_trace_id(const Outcome &outcome);
Json to_json(const Outcome &outcome);
Outcome outcome_from_json(const Json &value);

/// Extracts the first JSON object from a model response and maps it onto the
/// taxonomy. Category keys and option values are matched case-insensitively
/// against display names, then ids, then by a unique option display name
/// contained in the value. "N/A", "No Impact" and similar map to an empty set.
Outcome parse_response(std::string_view raw_text, Strategy strategy, const Taxonomy &taxonomy);

/// Canonical response text for a prediction, readable by parse_response.
std::string serialize_prediction(const Prediction &prediction, const Taxonomy &taxonomy);

/// Returns the first balanced JSON object in `text` that parses, if any.
std::optional<Json> extract_first_json_object(std::string_view text);

class TransportError : public Error {
public:
  explicit TransportError(const std::string &message)
      : Error(ErrorCode::transport_failure, message) {}
};

class Backend {
public:
  explicit Backend(BackendDescriptor descriptor) : descriptor_(std::move(descriptor)) {}
  virtual ~Backend() = default;
  Backend(const Backend &) = delete;
  Backend &operator=(const Backend &) = delete;

  [[nodiscard]] const BackendDescriptor &descriptor() const { return descriptor_; }

  /// One attempt. Throws TransportError on failure.
  virtual std::string complete(const PromptBundle &bundle) = 0;

private:
  BackendDescriptor descriptor_;
};

/// Serves stored responses keyed by (trace_id, strategy). Read-only after
/// construction; safe for concurrent use.
class ReplayBackend final : public Backend {
public:
  explicit ReplayBackend(BackendDescriptor descriptor);
  ReplayBackend(BackendDescriptor descriptor, std::string_view json_lines);

  std::string complete(const PromptBundle &bundle) override;
  [[nodiscard]] std::size_t size() const { return responses_.size(); }

private:
  void load(std::string_view json_lines);

  std::map<std::pair<std::string, Strategy>, std::string> responses_;
};

/// OpenAI-compatible chat-completions client.
class HttpBackend final : public Backend {
public:
  explicit HttpBackend(BackendDescriptor descriptor);

  std::string complete(const PromptBundle &bundle) override;

  /// Request body for a bundle; exposed for tests.
  [[nodiscard]] Json request_body(const PromptBundle &bundle) const;

private:
  std::string api_key_;
};

std::unique_ptr<Backend> make_backend(const BackendDescriptor &descriptor);

/// Image parts become their screens' markup when the backend is text-only.
PromptBundle prepare_for_dispatch(const PromptBundle &bundle, Capability capability);

/// Sends a bundle with up to `retries` additional attempts and parses the
/// answer. Always returns exactly one outcome.
Outcome classify(const PromptBundle &bundle, Backend &backend, const Taxonomy &taxonomy);

/// Classifies bundles with at most descriptor().max_parallel requests in
/// flight. Output order matches input order.
std::vector<Outcome> classify_all(std::span<const PromptBundle> bundles, Backend &backend,
                                  const Taxonomy &taxonomy);

enum class Redaction { reported, redacted };

inline constexpr double kDefaultValidityFloor = 0.5;

bool has_usable_label(const Outcome &outcome, std::string_view category_id);

/// Reported only when the fraction of outcomes with a usable label for the
/// category lies strictly above `validity_floor`; a fraction equal to the floor
/// is redacted. An empty outcome set is redacted.
Redaction redaction_status(std::string_view category_id, std::span<const Outcome> outcomes,
                           double validity_floor = kDefaultValidityFloor);

} // namespace impact_gate
