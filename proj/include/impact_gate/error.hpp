#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace impact_gate {

enum class ErrorCode {
  parse_error,
  unknown_category,
  unknown_option,
  cardinality_violation,
  duplicate_identifier,
  empty_category,
  empty_trace,
  bounds_out_of_range,
  dangling_gold_reference,
  missing_bank,
  empty_input,
  unmatched_prediction,
  unknown_annotator,
  validation_error,
  not_assigned,
  duplicate_submission,
  trace_mismatch,
  wrong_state,
  adjudicator_conflict,
  duplicate_id,
  unknown_trace,
  policy_error,
  config_error,
  io_error,
  transport_failure,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

} // namespace impact_gate
