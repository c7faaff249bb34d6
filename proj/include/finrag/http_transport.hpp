#pragma once

// Live HTTPS transport. Only the CLI includes this header; it needs
// CPPHTTPLIB_OPENSSL_SUPPORT and OpenSSL at link time.

#include <httplib.h>

#include "finrag/http_providers.hpp"

namespace finrag::http {

class HttplibTransport final : public Transport {
 public:
  explicit HttplibTransport(int timeout_s = 60) : timeout_s_(timeout_s) {}

  Response post(const Request& request) override {
    httplib::Client client(request.base_url);
    client.set_connection_timeout(timeout_s_);
    client.set_read_timeout(timeout_s_);
    client.set_write_timeout(timeout_s_);
    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : request.headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        headers.emplace(k, v);
      }
    }
    auto res = client.Post(request.path, headers, request.body, content_type);
    if (!res) throw ProviderError("transport error: " + httplib::to_string(res.error()), true);
    return {res->status, res->body};
  }

 private:
  int timeout_s_;
};

}  // namespace finrag::http
