#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "impact_gate/annotation.hpp"
#include "impact_gate/policy.hpp"

namespace impact_gate {

/// Everything POST /assess needs. Optional: without it the endpoint answers 503.
struct GateContext {
  std::unique_ptr<Backend> backend;
  Policy policy;
  Strategy strategy = Strategy::kap;
  ExemplarBank bank;
};

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080; // 0 picks a free port
  std::optional<std::filesystem::path> ui_dir;
  std::filesystem::path image_root; // base for relative screen image paths
  std::string token; // empty disables the X-Impact-Gate-Token check
};

/// HTTP front end for the annotation workflow and the gate endpoint.
///
///   POST /annotators            {"id", "role"}
///   GET  /tasks/next?annotator=ID
///   GET  /traces/{id}            trace plus an image URL per screen
///   GET  /images/{id}/{screen}
///   GET  /taxonomy
///   POST /annotations           AnnotationRecord
///   GET  /adjudications/pending
///   POST /adjudications         {"trace_id", "record"}
///   GET  /export/gold[?source=S]
///   GET  /export/summary[?source=S]
///   POST /policy/validate       Policy document, echoed back in canonical form
///   POST /assess                {"trace": {...}, "strategy"?}
class Service {
public:
  Service(AnnotationStore &store, ServiceOptions options, std::shared_ptr<GateContext> gate = nullptr);
  ~Service();
  Service(const Service &) = delete;
  Service &operator=(const Service &) = delete;

  /// Binds the listening socket; returns the bound port. Throws Error(io_error).
  int bind();
  /// Blocks until stop() is called.
  void listen();
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace impact_gate
