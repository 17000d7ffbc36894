#pragma once

#include <json.hpp>

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace taskgrasp::detail {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

Endpoint split_url(const std::string& base_url);

/// POSTs a JSON body and parses a JSON reply. Transport errors, non-2xx
/// statuses and unparsable bodies all raise BackendUnavailable.
nlohmann::json post_json(const std::string& base_url, const std::string& path, const nlohmann::json& body,
                         std::chrono::milliseconds timeout,
                         const std::vector<std::pair<std::string, std::string>>& headers);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

}  // namespace taskgrasp::detail
