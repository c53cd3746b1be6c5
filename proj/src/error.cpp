#include "impact_gate/error.hpp"

namespace impact_gate {

std::string_view to_string(ErrorCode code) {
  switch (code) {
  case ErrorCode::parse_error: return "parse_error";
  case ErrorCode::unknown_category: return "unknown_category";
  case ErrorCode::unknown_option: return "unknown_option";
  case ErrorCode::cardinality_violation: return "cardinality_violation";
  case ErrorCode::duplicate_identifier: return "duplicate_identifier";
  case ErrorCode::empty_category: return "empty_category";
  case ErrorCode::empty_trace: return "empty_trace";
  case ErrorCode::bounds_out_of_range: return "bounds_out_of_range";
  case ErrorCode::dangling_gold_reference: return "dangling_gold_reference";
  case ErrorCode::missing_bank: return "missing_bank";
  case ErrorCode::empty_input: return "empty_input";
  case ErrorCode::unmatched_prediction: return "unmatched_prediction";
  case ErrorCode::unknown_annotator: return "unknown_annotator";
  case ErrorCode::validation_error: return "validation_error";
  case ErrorCode::not_assigned: return "not_assigned";
  case ErrorCode::duplicate_submission: return "duplicate_submission";
  case ErrorCode::trace_mismatch: return "trace_mismatch";
  case ErrorCode::wrong_state: return "wrong_state";
  case ErrorCode::adjudicator_conflict: return "adjudicator_conflict";
  case ErrorCode::duplicate_id: return "duplicate_id";
  case ErrorCode::unknown_trace: return "unknown_trace";
  case ErrorCode::policy_error: return "policy_error";
  case ErrorCode::config_error: return "config_error";
  case ErrorCode::io_error: return "io_error";
  case ErrorCode::transport_failure: return "transport_failure";
  }
  return "unknown_error";
}

} // namespace impact_gate
