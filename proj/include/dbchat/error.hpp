// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dbchat {

enum class Errc {
  invalid_argument,
  io_error,
  unsupported,
  empty_extraction,
  duplicate_key,
  dimension_mismatch,
  corrupt_file,
  empty_kb,
  no_query_terms,
  unsorted_input,
  missing_question,
  parse_error,
  not_read_only,
  timeout,
  execution_error,
  missing_fixture,
  missing_schema,
  schema_invalid,
  backend_error,
  unknown_model,
  duplicate_registration,
  unknown_worker,
  unknown_tool,
  config_error,
  offline_blocked,
  non_finite_loss,
  pool_too_small,
  not_found,
};

std::string_view errc_name(Errc code) noexcept;

/// Single exception type for the library; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace dbchat
