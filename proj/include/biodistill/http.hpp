#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <semaphore>
#include <string>
#include <utility>
#include <vector>

namespace biodistill {

// Caps the number of in-flight remote requests across every client that
// shares it.
class RequestLimiter {
 public:
  explicit RequestLimiter(std::ptrdiff_t limit);
  std::ptrdiff_t limit() const { return limit_; }

  class Permit {
   public:
    explicit Permit(RequestLimiter* owner) : owner_(owner) {
      if (owner_) owner_->slots_.acquire();
    }
    ~Permit() {
      if (owner_) owner_->slots_.release();
    }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;

   private:
    RequestLimiter* owner_;
  };

  Permit acquire() { return Permit(this); }

 private:
  std::ptrdiff_t limit_;
  std::counting_semaphore<1 << 16> slots_;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds timeout{std::chrono::seconds(60)};
};

struct HttpResponse {
  int status = 0;
  std::string body;
  int retries = 0;
};

// POSTs a JSON body to `url` (scheme://host[:port]/path). Transport failures,
// 429 and 5xx are retried with exponential backoff; exhausting the budget
// throws Error(transport). Other non-2xx statuses fail immediately.
HttpResponse post_json(const std::string& url, const std::string& body,
                       const std::vector<std::pair<std::string, std::string>>& headers,
                       const RetryPolicy& policy, RequestLimiter* limiter);

// Appends `suffix` to a base URL without doubling the slash.
std::string join_url(const std::string& base, const std::string& suffix);

}  // namespace biodistill
