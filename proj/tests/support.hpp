// Shared paths and fixtures for the test binaries.

#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "dbchat/binio.hpp"

namespace dbchat::testing {

inline std::filesystem::path data_dir() { return DBCHAT_DATA_DIR; }
inline std::filesystem::path fixture_dir() { return DBCHAT_TEST_FIXTURES; }

/// Fresh per-process scratch directory.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::path(DBCHAT_TEST_TMP) /
                   (name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read(const std::filesystem::path& p) { return binio::read_file(p); }

}  // namespace dbchat::testing
