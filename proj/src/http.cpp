#include "biodistill/http.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <thread>

#include "biodistill/error.hpp"

namespace biodistill {

RequestLimiter::RequestLimiter(std::ptrdiff_t limit) : limit_(limit), slots_(limit) {
  if (limit < 1) throw Error(ErrorKind::config, "request concurrency limit must be >= 1");
}

std::string join_url(const std::string& base, const std::string& suffix) {
  if (base.empty()) return suffix;
  if (base.back() == '/' && !suffix.empty() && suffix.front() == '/') return base + suffix.substr(1);
  if (base.back() != '/' && !suffix.empty() && suffix.front() != '/') return base + "/" + suffix;
  return base + suffix;
}

namespace {

struct SplitUrl {
  std::string origin;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorKind::config, "url without scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

HttpResponse post_json(const std::string& url, const std::string& body,
                       const std::vector<std::pair<std::string, std::string>>& headers,
                       const RetryPolicy& policy, RequestLimiter* limiter) {
  auto [origin, path] = split_url(url);
  httplib::Headers hdrs;
  for (const auto& [k, v] : headers) hdrs.emplace(k, v);

  std::string last_failure;
  for (int attempt = 0;; ++attempt) {
    {
      RequestLimiter::Permit permit(limiter);
      httplib::Client client(origin);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(policy.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(policy.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());

      auto res = client.Post(path, hdrs, body, "application/json");
      if (!res) {
        last_failure = "request to " + url + " failed: " + httplib::to_string(res.error());
      } else if (res->status >= 200 && res->status < 300) {
        return {res->status, res->body, attempt};
      } else if (!retryable_status(res->status)) {
        throw Error(ErrorKind::transport, url + " returned HTTP " + std::to_string(res->status) + ": " + res->body);
      } else {
        last_failure = url + " returned HTTP " + std::to_string(res->status);
      }
    }
    if (attempt >= policy.max_retries) break;
    auto delay = policy.base_delay * (1LL << std::min(attempt, 16));
    spdlog::debug("{}; retry {} in {} ms", last_failure, attempt + 1, delay.count());
    std::this_thread::sleep_for(delay);
  }
  throw Error(ErrorKind::transport, last_failure + " (after " + std::to_string(policy.max_retries) + " retries)");
}

}  // namespace biodistill
