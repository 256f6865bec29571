#include "logoid/http.hpp"

#include <httplib.h>

#include <fmt/format.h>
#include <stdexcept>

namespace logoid {

ParsedUrl parse_url(const std::string& url) {
  ParsedUrl out;
  const auto sep = url.find("://");
  if (sep == std::string::npos) throw std::invalid_argument(fmt::format("not a URL: '{}'", url));
  out.scheme = url.substr(0, sep);
  if (out.scheme != "http" && out.scheme != "https") {
    throw std::invalid_argument(fmt::format("unsupported URL scheme in '{}'", url));
  }
  const auto rest = url.substr(sep + 3);
  const auto slash = rest.find_first_of("/?");
  std::string authority = rest.substr(0, slash);
  out.target = slash == std::string::npos ? "/" : rest.substr(slash);
  if (!out.target.empty() && out.target[0] == '?') out.target = "/" + out.target;
  const auto colon = authority.rfind(':');
  if (colon != std::string::npos && authority.find(']') == std::string::npos) {
    out.host = authority.substr(0, colon);
    out.port = std::stoi(authority.substr(colon + 1));
  } else {
    out.host = authority;
    out.port = out.scheme == "https" ? 443 : 80;
  }
  if (out.host.empty()) throw std::invalid_argument(fmt::format("URL without host: '{}'", url));
  return out;
}

std::string url_encode(const std::string& text) {
  std::string out;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += fmt::format("%{:02X}", c);
    }
  }
  return out;
}

namespace {

template <typename Fn>
HttpResponse request(const std::string& url, const HttpOptions& options, Fn&& call) {
  const ParsedUrl u = parse_url(url);
  httplib::Client client(fmt::format("{}://{}:{}", u.scheme, u.host, u.port));
  client.set_follow_location(options.follow_redirects);
  client.set_connection_timeout(options.connect_timeout_s, 0);
  client.set_read_timeout(options.read_timeout_s, 0);
  client.set_write_timeout(options.read_timeout_s, 0);
  httplib::Headers headers{{"User-Agent", options.user_agent}};
  for (const auto& [k, v] : options.headers) headers.emplace(k, v);

  HttpResponse out;
  httplib::Result res = call(client, u.target, headers);
  if (!res) {
    out.error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = std::move(res->body);
  for (const auto& [k, v] : res->headers) out.headers.emplace(k, v);
  return out;
}

}  // namespace

HttpResponse http_get(const std::string& url, const HttpOptions& options) {
  return request(url, options,
                 [](httplib::Client& c, const std::string& target, const httplib::Headers& h) {
                   return c.Get(target, h);
                 });
}

HttpResponse http_post(const std::string& url, const std::string& body,
                       const std::string& content_type, const HttpOptions& options) {
  return request(url, options,
                 [&](httplib::Client& c, const std::string& target, const httplib::Headers& h) {
                   return c.Post(target, h, body, content_type);
                 });
}

}  // namespace logoid
