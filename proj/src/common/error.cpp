// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/error.hpp"

namespace dbchat {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::io_error: return "io_error";
    case Errc::unsupported: return "unsupported";
    case Errc::empty_extraction: return "empty_extraction";
    case Errc::duplicate_key: return "duplicate_key";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::corrupt_file: return "corrupt_file";
    case Errc::empty_kb: return "empty_kb";
    case Errc::no_query_terms: return "no_query_terms";
    case Errc::unsorted_input: return "unsorted_input";
    case Errc::missing_question: return "missing_question";
    case Errc::parse_error: return "parse_error";
    case Errc::not_read_only: return "not_read_only";
    case Errc::timeout: return "timeout";
    case Errc::execution_error: return "execution_error";
    case Errc::missing_fixture: return "missing_fixture";
    case Errc::missing_schema: return "missing_schema";
    case Errc::schema_invalid: return "schema_invalid";
    case Errc::backend_error: return "backend_error";
    case Errc::unknown_model: return "unknown_model";
    case Errc::duplicate_registration: return "duplicate_registration";
    case Errc::unknown_worker: return "unknown_worker";
    case Errc::unknown_tool: return "unknown_tool";
    case Errc::config_error: return "config_error";
    case Errc::offline_blocked: return "offline_blocked";
    case Errc::non_finite_loss: return "non_finite_loss";
    case Errc::pool_too_small: return "pool_too_small";
    case Errc::not_found: return "not_found";
  }
  return "unknown";
}

}  // namespace dbchat
