// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Outbound connection policy. Every component that opens a client socket asks
// the policy first; offline mode refuses anything but loopback.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace dbchat::net {

struct Endpoint {
  std::string scheme = "http";
  std::string host;
  std::uint16_t port = 80;
  std::string path;  ///< with leading '/', may be empty
};

/// "http://host:port/path"; Errc::invalid_argument when malformed.
Endpoint parse_url(std::string_view url);

/// localhost, 127.0.0.0/8, ::1.
bool is_loopback(std::string_view host);

struct ConnectionAttempt {
  std::string host;
  std::uint16_t port = 0;
  bool allowed = false;
};

/// Test double that records every attempt reported to a policy.
class ConnectionRecorder {
 public:
  void record(ConnectionAttempt a);
  std::vector<ConnectionAttempt> attempts() const;
  /// Attempts that went ahead (allowed) to a non-loopback host.
  std::size_t non_loopback_connections() const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::vector<ConnectionAttempt> attempts_;
};

class NetworkPolicy {
 public:
  explicit NetworkPolicy(bool offline = true) : offline_(offline) {}

  bool offline() const noexcept { return offline_; }
  void set_recorder(std::shared_ptr<ConnectionRecorder> r) { recorder_ = std::move(r); }

  /// Throws Errc::offline_blocked for a non-loopback host in offline mode.
  /// Blocked attempts are recorded with allowed = false.
  void check(std::string_view host, std::uint16_t port) const;

 private:
  bool offline_;
  std::shared_ptr<ConnectionRecorder> recorder_;
};

}  // namespace dbchat::net
