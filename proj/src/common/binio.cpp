// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/binio.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "dbchat/error.hpp"
#include "dbchat/text.hpp"

namespace dbchat::binio {

namespace {

template <typename T>
void put_le(std::string& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const std::string& buf, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

void Writer::u32(std::uint32_t v) { put_le(buf_, v); }
void Writer::u64(std::uint64_t v) { put_le(buf_, v); }
void Writer::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void Writer::f64s(std::span<const double> values) {
  buf_.reserve(buf_.size() + values.size() * 8);
  for (const double v : values) f64(v);
}

void Writer::blob(std::string_view b) {
  u64(b.size());
  buf_.append(b);
}

std::string Writer::finish() {
  const std::uint64_t sum = text::fnv1a(buf_);
  put_le(buf_, sum);
  return std::move(buf_);
}

Reader::Reader(std::string data) : data_(std::move(data)) {
  if (data_.size() < 8) {
    throw Error(Errc::corrupt_file, "file too short for checksum");
  }
  end_ = data_.size() - 8;
  const auto stored = get_le<std::uint64_t>(data_, end_);
  if (stored != text::fnv1a(std::string_view(data_).substr(0, end_))) {
    throw Error(Errc::corrupt_file, "checksum mismatch");
  }
}

void Reader::need(std::size_t n) const {
  if (n > end_ - pos_) {
    throw Error(Errc::corrupt_file, "unexpected end of data");
  }
}

std::uint32_t Reader::u32() {
  need(4);
  const auto v = get_le<std::uint32_t>(data_, pos_);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  const auto v = get_le<std::uint64_t>(data_, pos_);
  pos_ += 8;
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::bytes(std::size_t n) {
  need(n);
  std::string out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string Reader::blob() { return bytes(u64()); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::io_error, "cannot read " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error(Errc::io_error, "cannot write " + tmp.string());
    }
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) {
      throw Error(Errc::io_error, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw Error(Errc::io_error, "cannot rename into " + path.string() + ": " + ec.message());
  }
}

}  // namespace dbchat::binio
