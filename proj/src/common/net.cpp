// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/net.hpp"

#include <algorithm>
#include <charconv>

#include "dbchat/error.hpp"
#include "dbchat/text.hpp"

namespace dbchat::net {

Endpoint parse_url(std::string_view url) {
  Endpoint ep;
  const auto sep = url.find("://");
  if (sep == std::string_view::npos) throw Error(Errc::invalid_argument, "url without scheme: " + std::string(url));
  ep.scheme = text::to_lower_ascii(url.substr(0, sep));
  if (ep.scheme != "http" && ep.scheme != "https") {
    throw Error(Errc::unsupported, "unsupported url scheme: " + ep.scheme);
  }
  const std::string rest(url.substr(sep + 3));
  const auto slash = rest.find('/');
  std::string_view authority = std::string_view(rest).substr(0, slash);
  if (slash != std::string::npos) ep.path = rest.substr(slash);
  ep.port = ep.scheme == "https" ? 443 : 80;
  std::string_view host = authority;
  if (!authority.empty() && authority.front() == '[') {
    const auto close = authority.find(']');
    if (close == std::string_view::npos) throw Error(Errc::invalid_argument, "bad url host: " + std::string(url));
    host = authority.substr(1, close - 1);
    authority.remove_prefix(close + 1);
    if (!authority.empty() && authority.front() == ':') authority.remove_prefix(1);
    else authority = {};
  } else if (const auto colon = authority.rfind(':'); colon != std::string_view::npos) {
    host = authority.substr(0, colon);
    authority = authority.substr(colon + 1);
  } else {
    authority = {};
  }
  if (!authority.empty()) {
    unsigned p = 0;
    const auto [ptr, ec] = std::from_chars(authority.data(), authority.data() + authority.size(), p);
    if (ec != std::errc{} || ptr != authority.data() + authority.size() || p == 0 || p > 65535) {
      throw Error(Errc::invalid_argument, "bad url port: " + std::string(url));
    }
    ep.port = static_cast<std::uint16_t>(p);
  }
  if (host.empty()) throw Error(Errc::invalid_argument, "url without host: " + std::string(url));
  ep.host = std::string(host);
  return ep;
}

bool is_loopback(std::string_view host) {
  const std::string h = text::to_lower_ascii(host);
  if (h == "localhost" || h == "::1" || h == "[::1]") return true;
  return h.starts_with("127.") && std::all_of(h.begin(), h.end(), [](char c) {
           return c == '.' || (c >= '0' && c <= '9');
         });
}

void ConnectionRecorder::record(ConnectionAttempt a) {
  std::lock_guard lock(mu_);
  attempts_.push_back(std::move(a));
}

std::vector<ConnectionAttempt> ConnectionRecorder::attempts() const {
  std::lock_guard lock(mu_);
  return attempts_;
}

std::size_t ConnectionRecorder::non_loopback_connections() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count_if(attempts_.begin(), attempts_.end(),
                                                [](const auto& a) { return a.allowed && !is_loopback(a.host); }));
}

void ConnectionRecorder::clear() {
  std::lock_guard lock(mu_);
  attempts_.clear();
}

void NetworkPolicy::check(std::string_view host, std::uint16_t port) const {
  const bool allowed = !offline_ || is_loopback(host);
  if (recorder_) recorder_->record({std::string(host), port, allowed});
  if (!allowed) {
    throw Error(Errc::offline_blocked,
                "offline mode: connection to " + std::string(host) + " blocked");
  }
}

}  // namespace dbchat::net
