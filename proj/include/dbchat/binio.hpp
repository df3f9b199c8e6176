// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian binary encoding used by the knowledge-base and embedder
// files. Both formats end with an FNV-1a checksum over every preceding byte.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace dbchat::binio {

class Writer {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void bytes(std::string_view b) { buf_.append(b); }
  /// u64 length followed by the raw bytes.
  void blob(std::string_view b);

  /// Appends the checksum and returns the finished buffer.
  std::string finish();

 private:
  std::string buf_;
};

/// Bounds-checked reader. Any overrun throws Errc::corrupt_file.
class Reader {
 public:
  /// Verifies and strips the trailing checksum.
  explicit Reader(std::string data);

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string bytes(std::size_t n);
  std::string blob();
  bool at_end() const noexcept { return pos_ == end_; }

 private:
  void need(std::size_t n) const;

  std::string data_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

std::string read_file(const std::filesystem::path& path);
/// Writes via a sibling temp file and rename so readers never see a torn file.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

}  // namespace dbchat::binio
