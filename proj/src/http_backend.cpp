#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "impact_gate/gateway.hpp"

namespace impact_gate {

namespace {

std::string base64(std::string_view data) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < data.size(); i += 3) {
    const auto n = (static_cast<unsigned char>(data[i]) << 16) | (static_cast<unsigned char>(data[i + 1]) << 8) |
                   static_cast<unsigned char>(data[i + 2]);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  if (i < data.size()) {
    auto n = static_cast<unsigned char>(data[i]) << 16;
    if (i + 1 < data.size()) {
      n |= static_cast<unsigned char>(data[i + 1]) << 8;
    }
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += i + 1 < data.size() ? kAlphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string mime_type(const std::filesystem::path &path) {
  const auto ext = to_lower(path.extension().string());
  if (ext == ".jpg" || ext == ".jpeg") {
    return "image/jpeg";
  }
  if (ext == ".webp") {
    return "image/webp";
  }
  return "image/png";
}

struct Endpoint {
  std::string base; // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string &url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::config_error, "endpoint url needs a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {url, "/"};
  }
  return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

HttpBackend::HttpBackend(BackendDescriptor descriptor) : Backend(std::move(descriptor)) {
  if (const char *key = std::getenv(api_key_env_var(this->descriptor().name).c_str())) {
    api_key_ = key;
  }
}

Json HttpBackend::request_body(const PromptBundle &bundle) const {
  Json parts = Json::array();
  for (const auto &part : bundle.content_parts) {
    switch (part.kind) {
    case ContentPart::Kind::text:
    case ContentPart::Kind::screen_html:
      parts.push_back({{"type", "text"}, {"text", part.text}});
      break;
    case ContentPart::Kind::screen_image: {
      std::ifstream in(part.image_ref, std::ios::binary);
      if (!in) {
        parts.push_back({{"type", "text"}, {"text", part.html}});
        break;
      }
      std::ostringstream bytes;
      bytes << in.rdbuf();
      parts.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:" + mime_type(part.image_ref) + ";base64," + base64(bytes.str())}}}});
      break;
    }
    }
  }
  Json body = {{"messages",
                Json::array({{{"role", "system"}, {"content", bundle.system_text}},
                             {{"role", "user"}, {"content", std::move(parts)}}})},
               {"temperature", descriptor().temperature.value_or(0.0)}};
  if (!descriptor().model.empty()) {
    body["model"] = descriptor().model;
  }
  return body;
}

std::string HttpBackend::complete(const PromptBundle &bundle) {
  const auto endpoint = split_url(descriptor().url);
  httplib::Client client(endpoint.base);
  const auto timeout = std::chrono::milliseconds(static_cast<long long>(descriptor().timeout_s * 1000.0));
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  httplib::Headers headers;
  if (!api_key_.empty()) {
    headers.emplace("Authorization", "Bearer " + api_key_);
  }
  const auto result = client.Post(endpoint.path, headers, request_body(bundle).dump(), "application/json");
  if (!result) {
    throw TransportError(descriptor().name + ": " + httplib::to_string(result.error()));
  }
  if (result->status != 200) {
    throw TransportError(descriptor().name + ": HTTP " + std::to_string(result->status));
  }
  try {
    const auto envelope = Json::parse(result->body);
    return envelope.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const Json::exception &e) {
    throw TransportError(descriptor().name + ": malformed completion envelope: " + e.what());
  }
}

} // namespace impact_gate
