#include "cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <thread>

#include <CLI11.hpp>

#include "impact_gate/eval.hpp"
#include "impact_gate/service.hpp"

namespace impact_gate::cli {

namespace {

namespace fs = std::filesystem;

// File-based configuration; command-line flags override each entry.
struct Manifest {
  std::string taxonomy;
  std::string backends;
  std::string policy;
  std::string eval;
  std::string exemplars;
  std::string corpus;
  std::string gold;
  std::string out;
  std::optional<std::int64_t> seed;
};

struct Flags {
  std::string manifest;
  std::string taxonomy;
  std::string backends;
  std::string policy;
  std::string eval;
  std::string exemplars;
  std::string corpus;
  std::string gold;
  std::string out;
  std::int64_t seed = 0;
  std::vector<std::string> backend_names;
  std::vector<std::string> strategies;
  std::optional<double> theta;
  std::string trace_id;
  std::string adapter = "native";
  bool dedup = false;
  double dedup_threshold = kDefaultSimilarityThreshold;
  std::vector<std::string> inputs;
  std::string data_dir = "data";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ui_dir;
  std::string image_root;
  std::string token;
  std::string summary;
};

std::string resolve(const fs::path &base, const std::string &value) {
  if (value.empty()) {
    return value;
  }
  const fs::path path(value);
  return path.is_absolute() ? value : (base / path).string();
}

Manifest load_manifest(const std::string &path) {
  Manifest manifest;
  if (path.empty()) {
    return manifest;
  }
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const Json::exception &e) {
    throw Error(ErrorCode::config_error, path + ": " + e.what());
  } catch (const Error &e) {
    throw Error(ErrorCode::config_error, e.what());
  }
  const auto base = fs::path(path).parent_path();
  const auto field = [&](const char *key) { return resolve(base, doc.value(key, std::string{})); };
  manifest.taxonomy = field("taxonomy");
  manifest.backends = field("backends");
  manifest.policy = field("policy");
  manifest.eval = field("eval");
  // "default" selects the bundled bank and is not a path.
  manifest.exemplars = doc.value("exemplars", std::string{}) == "default" ? "default" : field("exemplars");
  manifest.corpus = field("corpus");
  manifest.gold = field("gold");
  manifest.out = field("out");
  if (doc.contains("seed")) {
    manifest.seed = doc["seed"].get<std::int64_t>();
  }
  return manifest;
}

// Flags win over the manifest.
void merge(Flags &flags, const Manifest &manifest) {
  const auto pick = [](std::string &flag, const std::string &from_manifest) {
    if (flag.empty()) {
      flag = from_manifest;
    }
  };
  pick(flags.taxonomy, manifest.taxonomy);
  pick(flags.backends, manifest.backends);
  pick(flags.policy, manifest.policy);
  pick(flags.eval, manifest.eval);
  pick(flags.exemplars, manifest.exemplars);
  pick(flags.corpus, manifest.corpus);
  pick(flags.gold, manifest.gold);
  pick(flags.out, manifest.out);
}

void require_exists(const std::string &path, const char *what) {
  if (!path.empty() && !fs::exists(path)) {
    throw Error(ErrorCode::config_error, std::string(what) + " not found: " + path);
  }
}

void require_set(const std::string &value, const char *flag) {
  if (value.empty()) {
    throw Error(ErrorCode::config_error, std::string(flag) + " is required");
  }
}

Taxonomy taxonomy_from(const Flags &flags) {
  return flags.taxonomy.empty() ? default_taxonomy() : load_taxonomy_file(flags.taxonomy);
}

std::optional<ExemplarBank> bank_from(const Flags &flags, const Taxonomy &taxonomy) {
  if (flags.exemplars.empty()) {
    return std::nullopt;
  }
  if (flags.exemplars == "default") {
    return default_exemplar_bank();
  }
  return load_exemplar_bank_file(flags.exemplars, taxonomy);
}

Strategy strategy_from(const std::string &text) {
  const auto strategy = parse_strategy(text);
  if (!strategy) {
    throw Error(ErrorCode::config_error, "unknown strategy '" + text + "'");
  }
  return *strategy;
}

std::vector<BackendDescriptor> selected_backends(const Flags &flags) {
  require_set(flags.backends, "--backends");
  auto all = load_backend_config(flags.backends);
  if (flags.backend_names.empty()) {
    return all;
  }
  std::vector<BackendDescriptor> out;
  for (const auto &name : flags.backend_names) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const BackendDescriptor &d) { return d.name == name; });
    if (it == all.end()) {
      throw Error(ErrorCode::config_error, "backend '" + name + "' is not in " + flags.backends);
    }
    out.push_back(*it);
  }
  return out;
}

Policy policy_from(const Flags &flags, const Taxonomy &taxonomy) {
  return flags.policy.empty() ? Policy{} : load_policy_file(flags.policy, taxonomy);
}

EvalConfig eval_from(const Flags &flags) {
  EvalConfig config;
  if (!flags.eval.empty()) {
    try {
      config = eval_config_from_json(Json::parse(read_file(flags.eval)));
    } catch (const Json::exception &e) {
      throw Error(ErrorCode::config_error, flags.eval + ": " + e.what());
    }
  }
  if (flags.theta) {
    config.theta = *flags.theta;
  }
  validate(config);
  return config;
}

void write_output(const std::string &path, const std::string &text, std::ostream &out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  const fs::path target(path);
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path());
  }
  write_file(target, text);
}

int cmd_import(const Flags &flags, std::ostream &out, std::ostream &err) {
  const auto adapter = parse_import_adapter(flags.adapter);
  if (!adapter) {
    throw Error(ErrorCode::config_error, "adapter must be native, motif_like or androidcontrol_like");
  }
  if (flags.inputs.empty()) {
    throw Error(ErrorCode::config_error, "no input files");
  }
  std::vector<Trace> traces;
  std::vector<std::string> errors;
  for (const auto &input : flags.inputs) {
    require_exists(input, "input");
    std::vector<JsonLinesError> line_errors;
    for (const auto &line : parse_json_lines(read_file(input), &line_errors)) {
      try {
        traces.push_back(ingest_trace(adapt_record(line.value, *adapter)));
      } catch (const std::exception &e) {
        line_errors.push_back({line.line_number, e.what()});
      }
    }
    std::sort(line_errors.begin(), line_errors.end(),
              [](const auto &a, const auto &b) { return a.line_number < b.line_number; });
    for (const auto &error : line_errors) {
      errors.push_back(input + ":" + std::to_string(error.line_number) + ": " + error.message);
    }
  }
  if (!errors.empty()) {
    for (const auto &error : errors) {
      err << error << "\n";
    }
    return kDataError;
  }
  std::size_t removed = 0;
  if (flags.dedup) {
    for (auto &trace : traces) {
      const auto before = trace.screens.size();
      trace = dedup_consecutive(trace, flags.dedup_threshold);
      removed += before - trace.screens.size();
    }
  }
  std::vector<GoldRecord> golds;
  if (!flags.gold.empty()) {
    golds = read_gold_file(flags.gold);
  }
  auto stats = to_json(corpus_stats(traces, flags.gold.empty() ? nullptr : &golds));
  if (flags.dedup) {
    stats["screens_removed"] = removed;
  }
  write_output(flags.out, write_corpus(traces), out);
  (flags.out.empty() || flags.out == "-" ? err : out) << stats.dump(2) << "\n";
  return kOk;
}

int cmd_classify(const Flags &flags, std::ostream &out, std::ostream &) {
  require_set(flags.corpus, "--corpus");
  const auto taxonomy = taxonomy_from(flags);
  const auto strategy = strategy_from(flags.strategies.empty() ? "kap" : flags.strategies.front());
  const auto bank = bank_from(flags, taxonomy);
  // Surfaces missing_bank and similar before any request.
  render_system_text(strategy, taxonomy, bank ? &*bank : nullptr);
  const auto policy = policy_from(flags, taxonomy);
  const auto descriptors = selected_backends(flags);
  if (descriptors.size() != 1) {
    throw Error(ErrorCode::config_error, "classify needs exactly one backend (--backend NAME)");
  }
  auto backend = make_backend(descriptors.front());
  auto traces = read_corpus(flags.corpus);
  if (!flags.trace_id.empty()) {
    std::erase_if(traces, [&](const Trace &t) { return t.trace_id != flags.trace_id; });
    if (traces.empty()) {
      throw Error(ErrorCode::unknown_trace, flags.trace_id);
    }
  }
  std::string lines;
  for (const auto &trace : traces) {
    auto entry = to_json(assess(trace, strategy, *backend, taxonomy, policy, bank ? &*bank : nullptr));
    entry["trace_id"] = trace.trace_id;
    lines += entry.dump() + "\n";
  }
  write_output(flags.out, lines, out);
  return kOk;
}

int cmd_evaluate(const Flags &flags, std::ostream &out, std::ostream &) {
  require_set(flags.corpus, "--corpus");
  require_set(flags.gold, "--gold");
  require_set(flags.out, "--out");
  const auto taxonomy = taxonomy_from(flags);
  const auto config = eval_from(flags);
  const auto bank = bank_from(flags, taxonomy);
  std::vector<Strategy> strategies;
  for (const auto &text : flags.strategies.empty() ? std::vector<std::string>{"zero_shot", "kap", "icl", "cot"}
                                                   : flags.strategies) {
    strategies.push_back(strategy_from(text));
  }
  for (const auto strategy : strategies) {
    render_system_text(strategy, taxonomy, bank ? &*bank : nullptr);
  }
  const auto descriptors = selected_backends(flags);
  std::vector<std::unique_ptr<Backend>> backends;
  for (const auto &descriptor : descriptors) {
    backends.push_back(make_backend(descriptor));
  }
  const auto traces = read_corpus(flags.corpus);
  const auto golds = read_gold_file(flags.gold);
  for (const auto &gold : golds) {
    validate_gold(taxonomy, gold);
  }

  std::vector<RunReport> reports;
  const fs::path root(flags.out);
  for (auto &backend : backends) {
    for (const auto strategy : strategies) {
      auto report = evaluate_run(traces, golds, *backend, strategy, taxonomy, bank ? &*bank : nullptr, config);
      write_run_report(report, root / report.backend / std::string(to_string(strategy)));
      out << report.backend << "/" << to_string(strategy) << ": impact accuracy "
          << format_fixed(100.0 * report.impact.accuracy, 2) << "% over " << report.impact.items << " items\n";
      reports.push_back(std::move(report));
    }
  }
  write_file(root / "combined_impact.csv", combined_impact_csv(reports));
  write_file(root / "combined_category.csv", combined_category_csv(reports, taxonomy));
  return kOk;
}

std::string markdown_table(const std::string &csv) {
  std::string out;
  std::size_t row = 0;
  std::size_t start = 0;
  while (start < csv.size()) {
    auto end = csv.find('\n', start);
    if (end == std::string::npos) {
      end = csv.size();
    }
    const auto line = csv.substr(start, end - start);
    start = end + 1;
    std::string cells = "|";
    std::size_t columns = 0;
    std::size_t from = 0;
    while (true) {
      const auto comma = line.find(',', from);
      cells += " " + line.substr(from, comma == std::string::npos ? std::string::npos : comma - from) + " |";
      ++columns;
      if (comma == std::string::npos) {
        break;
      }
      from = comma + 1;
    }
    out += cells + "\n";
    if (row++ == 0) {
      out += "|";
      for (std::size_t i = 0; i < columns; ++i) {
        out += " --- |";
      }
      out += "\n";
    }
  }
  return out;
}

// Aggregates recomputed from per_item.jsonl must equal the stored summary.
std::vector<std::string> summary_mismatches(const Json &stored, const Json &recomputed) {
  std::vector<std::string> out;
  for (const auto *key : {"backend", "strategy", "scored_items", "impact", "categories", "invalid_by_reason"}) {
    if (!stored.contains(key) || stored[key] != recomputed[key]) {
      out.emplace_back(key);
    }
  }
  return out;
}

int cmd_report(const Flags &flags, std::ostream &out, std::ostream &err) {
  if (flags.inputs.empty()) {
    throw Error(ErrorCode::config_error, "report needs at least one run directory");
  }
  const auto taxonomy = taxonomy_from(flags);
  std::vector<RunReport> reports;
  bool consistent = true;
  std::string text;
  for (const auto &dir : flags.inputs) {
    require_exists(dir, "run directory");
    auto report = recompute_run_report(dir, taxonomy);
    Json stored;
    try {
      stored = Json::parse(read_file(fs::path(dir) / "summary.json"));
    } catch (const Json::exception &e) {
      throw Error(ErrorCode::parse_error, dir + "/summary.json: " + e.what());
    }
    const auto mismatches = summary_mismatches(stored, summary_json(report));
    for (const auto &key : mismatches) {
      err << dir << ": summary.json field '" << key << "' disagrees with per_item.jsonl\n";
      consistent = false;
    }
    text += "## " + report.backend + " / " + std::string(to_string(report.strategy)) + "\n\n";
    text += "Impact accuracy: " + format_fixed(100.0 * report.impact.accuracy, 2) + "% (" +
            std::to_string(report.impact.correct) + "/" + std::to_string(report.impact.items) + ", " +
            std::to_string(report.impact.invalid) + " invalid)\n\n";
    text += "Confusion matrix (rows gold, columns predicted):\n\n" + markdown_table(confusion_csv(report.impact.matrix)) + "\n";
    reports.push_back(std::move(report));
  }
  text += "## Impact accuracy by strategy\n\n" + markdown_table(combined_impact_csv(reports)) + "\n";
  const auto categories = combined_category_csv(reports, taxonomy);
  if (categories.find('\n') + 1 < categories.size()) {
    text += "## Category accuracy\n\n" + markdown_table(categories) + "\n";
  }
  write_output(flags.out, text, out);
  return consistent ? kOk : kDataError;
}

int cmd_distribution(const Flags &flags, std::ostream &out, std::ostream &) {
  require_set(flags.gold, "--gold");
  const auto golds = read_gold_file(flags.gold);
  std::map<std::string, std::size_t> skipped;
  if (!flags.summary.empty()) {
    const auto summary = Json::parse(read_file(flags.summary));
    skipped = summary.value("skipped_by_source", std::map<std::string, std::size_t>{});
  }
  const auto report = distribution_report(group_by_source(golds), skipped);
  write_output(flags.out, distribution_csv(report), out);
  for (const auto &warning : report.warnings) {
    out << "warning: " << warning << "\n";
  }
  return kOk;
}

int cmd_serve(const Flags &flags, std::ostream &out, std::ostream &) {
  require_set(flags.corpus, "--corpus");
  const auto taxonomy = taxonomy_from(flags);
  auto corpus = read_corpus(flags.corpus);
  const fs::path data_dir(flags.data_dir);
  std::error_code ec;
  fs::create_directories(data_dir, ec);
  if (ec) {
    throw Error(ErrorCode::io_error, "cannot create data directory " + data_dir.string() + ": " + ec.message());
  }
  AnnotationStore store(taxonomy, std::move(corpus), data_dir / "events.jsonl");

  std::shared_ptr<GateContext> gate;
  if (!flags.backend_names.empty()) {
    gate = std::make_shared<GateContext>();
    const auto descriptors = selected_backends(flags);
    gate->backend = make_backend(descriptors.front());
    gate->policy = policy_from(flags, taxonomy);
    gate->strategy = strategy_from(flags.strategies.empty() ? "kap" : flags.strategies.front());
    if (const auto bank = bank_from(flags, taxonomy)) {
      gate->bank = *bank;
    }
    render_system_text(gate->strategy, taxonomy, gate->bank.exemplars.empty() ? nullptr : &gate->bank);
  }

  ServiceOptions options;
  options.host = flags.host;
  options.port = flags.port;
  if (!flags.ui_dir.empty()) {
    options.ui_dir = flags.ui_dir;
  }
  options.image_root = flags.image_root.empty() ? fs::path(flags.corpus).parent_path() : fs::path(flags.image_root);
  options.token = flags.token;
  Service service(store, options, gate);

  // Signals are taken by a dedicated thread so shutdown runs outside a handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  const auto port = service.bind();
  out << "listening on " << flags.host << ":" << port << std::endl;
  std::jthread watcher([&] {
    int received = 0;
    sigwait(&signals, &received);
    service.stop();
  });
  service.listen();
  store.flush();
  pthread_kill(watcher.native_handle(), SIGTERM);
  return kOk;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
  case ErrorCode::config_error:
  case ErrorCode::policy_error:
  case ErrorCode::missing_bank:
    return kUsage;
  case ErrorCode::transport_failure:
    return kBackendError;
  default:
    return kDataError;
  }
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Classify, gate and evaluate the impact of UI agent actions", "impact_gate"};
  app.require_subcommand(1);
  Flags flags;

  const auto common = [&](CLI::App *sub) {
    sub->add_option("--manifest", flags.manifest, "JSON run manifest; flags override its entries");
    sub->add_option("--taxonomy", flags.taxonomy, "Taxonomy JSON (default: bundled)");
    sub->add_option("--seed", flags.seed, "Seed recorded for randomized fixture generation");
  };
  const auto model = [&](CLI::App *sub) {
    sub->add_option("--backends", flags.backends, "Backend configuration JSON");
    sub->add_option("--backend", flags.backend_names, "Backend name(s) from the configuration");
    sub->add_option("--strategy", flags.strategies, "zero_shot | kap | icl | cot");
    sub->add_option("--exemplars", flags.exemplars, "Exemplar bank JSON, or 'default' for the bundled bank");
  };

  auto *import_cmd = app.add_subcommand("import", "Normalize traces into a JSON Lines corpus");
  common(import_cmd);
  import_cmd->add_option("inputs", flags.inputs, "Input JSON Lines files")->required();
  import_cmd->add_option("--adapter", flags.adapter, "native | motif_like | androidcontrol_like");
  import_cmd->add_flag("--dedup", flags.dedup, "Collapse near-duplicate consecutive screens");
  import_cmd->add_option("--dedup-threshold", flags.dedup_threshold, "Similarity threshold for --dedup");
  import_cmd->add_option("--gold", flags.gold, "Gold file for the impact histogram");
  import_cmd->add_option("--out", flags.out, "Output corpus (default: stdout)");

  auto *classify_cmd = app.add_subcommand("classify", "Classify traces and apply the gate policy");
  common(classify_cmd);
  model(classify_cmd);
  classify_cmd->add_option("--corpus", flags.corpus, "Trace corpus");
  classify_cmd->add_option("--trace-id", flags.trace_id, "Classify only this trace");
  classify_cmd->add_option("--policy", flags.policy, "Policy JSON (default mapping when absent)");
  classify_cmd->add_option("--out", flags.out, "Decisions JSON Lines (default: stdout)");

  auto *evaluate_cmd = app.add_subcommand("evaluate", "Score backends x strategies against gold labels");
  common(evaluate_cmd);
  model(evaluate_cmd);
  evaluate_cmd->add_option("--corpus", flags.corpus, "Trace corpus");
  evaluate_cmd->add_option("--gold", flags.gold, "Gold JSON Lines");
  evaluate_cmd->add_option("--eval", flags.eval, "Evaluation config JSON");
  evaluate_cmd->add_option("--theta", flags.theta, "Jaccard threshold (default 0.5)");
  evaluate_cmd->add_option("--out", flags.out, "Report directory");

  auto *report_cmd = app.add_subcommand("report", "Recompute and render run reports");
  common(report_cmd);
  report_cmd->add_option("runs", flags.inputs, "Run directories")->required();
  report_cmd->add_option("--out", flags.out, "Markdown output (default: stdout)");

  auto *distribution_cmd = app.add_subcommand("distribution", "Per-source impact level distribution");
  common(distribution_cmd);
  distribution_cmd->add_option("--gold", flags.gold, "Gold JSON Lines");
  distribution_cmd->add_option("--summary", flags.summary, "Export summary JSON with skip counts");
  distribution_cmd->add_option("--out", flags.out, "CSV output (default: stdout)");

  auto *serve_cmd = app.add_subcommand("serve", "Run the annotation service and the gate endpoint");
  common(serve_cmd);
  model(serve_cmd);
  serve_cmd->add_option("--corpus", flags.corpus, "Trace corpus to annotate");
  serve_cmd->add_option("--data-dir", flags.data_dir, "Directory holding the event log");
  serve_cmd->add_option("--host", flags.host, "Listen address");
  serve_cmd->add_option("--port", flags.port, "Listen port (0 picks one)");
  serve_cmd->add_option("--ui-dir", flags.ui_dir, "Built annotator UI to serve at /");
  serve_cmd->add_option("--image-root", flags.image_root, "Base directory for screen images");
  serve_cmd->add_option("--token", flags.token, "Shared token required in X-Impact-Gate-Token");
  serve_cmd->add_option("--policy", flags.policy, "Policy JSON for /assess");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError &e) {
    const auto code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    merge(flags, load_manifest(flags.manifest));
    for (const auto *path : {&flags.taxonomy, &flags.backends, &flags.policy, &flags.eval, &flags.corpus, &flags.gold}) {
      require_exists(*path, "input");
    }
    if (flags.exemplars != "default") {
      require_exists(flags.exemplars, "exemplar bank");
    }
    if (*import_cmd) {
      return cmd_import(flags, out, err);
    }
    if (*classify_cmd) {
      return cmd_classify(flags, out, err);
    }
    if (*evaluate_cmd) {
      return cmd_evaluate(flags, out, err);
    }
    if (*report_cmd) {
      return cmd_report(flags, out, err);
    }
    if (*distribution_cmd) {
      return cmd_distribution(flags, out, err);
    }
    return cmd_serve(flags, out, err);
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const Json::exception &e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::filesystem::filesystem_error &e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

} // namespace impact_gate::cli
