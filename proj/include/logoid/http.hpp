#pragma once

#include <map>
#include <string>

namespace logoid {

struct HttpOptions {
  std::string user_agent = "logoid/0.1";
  int connect_timeout_s = 10;
  int read_timeout_s = 60;
  bool follow_redirects = true;
  std::map<std::string, std::string> headers;
};

struct HttpResponse {
  /// HTTP status, or 0 when no response was received (see error).
  int status = 0;
  std::string body;
  std::map<std::string, std::string> headers;
  std::string error;

  bool ok() const { return status >= 200 && status < 300; }
};

struct ParsedUrl {
  std::string scheme;  // http or https
  std::string host;
  int port = 0;
  std::string target;  // path plus query, at least "/"
};

/// Splits an absolute http(s) URL. Throws std::invalid_argument otherwise.
ParsedUrl parse_url(const std::string& url);

/// Percent-encodes everything outside the unreserved set.
std::string url_encode(const std::string& text);

HttpResponse http_get(const std::string& url, const HttpOptions& options = {});
HttpResponse http_post(const std::string& url, const std::string& body,
                       const std::string& content_type, const HttpOptions& options = {});

}  // namespace logoid
