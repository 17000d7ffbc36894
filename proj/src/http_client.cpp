#include "http_client.hpp"

#include "taskgrasp/error.hpp"

#include <httplib.h>

namespace taskgrasp::detail {

Endpoint split_url(const std::string& base_url) {
  const auto scheme = base_url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::ConfigError, "backend url needs a scheme: " + base_url);
  const auto slash = base_url.find('/', scheme + 3);
  Endpoint ep;
  ep.origin = base_url.substr(0, slash);
  ep.prefix = slash == std::string::npos ? std::string{} : base_url.substr(slash);
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

nlohmann::json post_json(const std::string& base_url, const std::string& path, const nlohmann::json& body,
                         std::chrono::milliseconds timeout,
                         const std::vector<std::pair<std::string, std::string>>& headers) {
  const Endpoint ep = split_url(base_url);
  httplib::Client client(ep.origin);
  if (!client.is_valid()) throw Error(ErrorCode::BackendUnavailable, "unsupported backend url " + base_url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers hdrs;
  for (const auto& [k, v] : headers) hdrs.emplace(k, v);

  const auto result = client.Post(ep.prefix + path, hdrs, body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace),
                                  "application/json");
  if (!result) throw Error(ErrorCode::BackendUnavailable, base_url + path + ": " + httplib::to_string(result.error()));
  if (result->status < 200 || result->status >= 300)
    throw Error(ErrorCode::BackendUnavailable,
                base_url + path + ": HTTP " + std::to_string(result->status) + " " + result->body.substr(0, 200));
  auto parsed = nlohmann::json::parse(result->body, nullptr, false);
  if (parsed.is_discarded()) throw Error(ErrorCode::BackendUnavailable, base_url + path + ": reply is not JSON");
  return parsed;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

}  // namespace taskgrasp::detail
