#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "stancemil/error.hpp"
#include "stancemil/explanations.hpp"

namespace stancemil {

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorKind::kConfig, "provider endpoint must be an absolute URL");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpProvider::HttpProvider(ProviderConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw Error(ErrorKind::kConfig, "http provider needs an endpoint");
  if (config_.model.empty()) throw Error(ErrorKind::kConfig, "http provider needs a model identifier");
  split_url(config_.endpoint);
}

std::string HttpProvider::generate(const ExplanationRequest&, const std::string& prompt) {
  count_call();
  const Endpoint ep = split_url(config_.endpoint);
  httplib::Client client(ep.base);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0')
    headers.emplace("Authorization", std::string("Bearer ") + key);

  const nlohmann::json body = {
      {"model", config_.model},
      {"temperature", 0},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
  };
  auto res = client.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) throw Error(ErrorKind::kProvider, "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw Error(ErrorKind::kProvider, "provider returned HTTP " + std::to_string(res->status));
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kProvider, std::string("malformed provider reply: ") + e.what());
  }
}

}  // namespace stancemil
