#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biodistill/document.hpp"
#include "biodistill/http.hpp"
#include "biodistill/jsonl.hpp"
#include "biodistill/prompts.hpp"

namespace biodistill {

enum class BackendKind { openai, mock };

struct BackendConfig {
  std::string name;
  BackendKind kind = BackendKind::openai;
  std::string base_url;
  std::string model;
  std::string api_key_env;
  double temperature = 0.0;
  int max_tokens = 256;
  std::chrono::milliseconds timeout{std::chrono::seconds(60)};
  int max_retries = 3;
  std::chrono::milliseconds retry_base_delay{500};
  // Mock only: JSONL rules {"match","response"[,"fail"]} and the reply used
  // when no rule matches ({model} and {hash} are substituted).
  std::filesystem::path script;
  std::string fallback = "{model} question {hash}?";

  // Throws Error(config).
  void validate() const;
  // Two backends are the same agent when base_url and model coincide.
  std::string identity() const { return base_url + "#" + model; }
  Json to_json() const;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
};

struct Completion {
  std::string text;
  std::optional<std::vector<TokenLogprob>> logprobs;
  int retries = 0;

  // Sum of token log-probabilities when present.
  std::optional<double> sequence_logprob() const;
};

// Chat-completion client. Implementations must be safe to call from several
// threads at once.
class ChatBackend {
 public:
  explicit ChatBackend(BackendConfig config) : config_(std::move(config)) {}
  virtual ~ChatBackend() = default;

  const BackendConfig& config() const { return config_; }

  // Throws Error(validation) for an empty prompt; transport and protocol
  // failures propagate from the implementation.
  Completion complete(std::string_view prompt, bool want_logprobs = false);

 protected:
  virtual Completion do_complete(std::string_view prompt, bool want_logprobs) = 0;

 private:
  BackendConfig config_;
};

// OpenAI-compatible POST {base_url}/chat/completions with bearer auth read
// from the configured environment variable.
class OpenAiChatBackend final : public ChatBackend {
 public:
  OpenAiChatBackend(BackendConfig config, std::shared_ptr<RequestLimiter> limiter);

 protected:
  Completion do_complete(std::string_view prompt, bool want_logprobs) override;

 private:
  std::shared_ptr<RequestLimiter> limiter_;
};

// Parses an OpenAI chat-completions response body. Throws Error(protocol).
Completion parse_chat_response(std::string_view body);

struct MockRule {
  std::string match;
  std::string response;
  bool fail = false;
};

std::vector<MockRule> read_mock_script(const std::filesystem::path& path);

// Deterministic scripted backend: the first rule whose `match` is a substring
// of the prompt wins; a failing rule throws Error(transport).
class MockChatBackend final : public ChatBackend {
 public:
  explicit MockChatBackend(BackendConfig config);
  MockChatBackend(BackendConfig config, std::vector<MockRule> rules);

  std::size_t calls() const;
  std::vector<std::string> prompts() const;

 protected:
  Completion do_complete(std::string_view prompt, bool want_logprobs) override;

 private:
  std::vector<MockRule> rules_;
  mutable std::mutex mu_;
  std::vector<std::string> prompts_;
};

std::shared_ptr<ChatBackend> make_backend(const BackendConfig& config, std::shared_ptr<RequestLimiter> limiter);

// ---------------------------------------------------------------------------
// Agents

enum class GeneratorTag { a, b, star };
const char* to_string(GeneratorTag tag);
GeneratorTag parse_generator_tag(std::string_view text);

struct CandidateQuestion {
  std::string text;
  std::string source_doc;
  GeneratorTag tag = GeneratorTag::a;
  Json params;
};

// Renders `templ` with the document's Title and Context and asks the agent
// for one question. Throws Error(validation) when the document lacks a title
// or abstract and Error(generation) when the reply is blank.
CandidateQuestion generate_question(ChatBackend& agent, const Document& doc, GeneratorTag tag,
                                    const PromptTemplate& templ = qa_template());

std::string render_answer_prompt(std::string_view question, std::span<const std::string> contexts);
std::string generate_answer(ChatBackend& agent, std::string_view question, std::span<const std::string> contexts);

struct QaFinetuneExample {
  std::string input;
  std::string target;

  friend bool operator==(const QaFinetuneExample&, const QaFinetuneExample&) = default;
};

// {"input","target"} rows. Returns the row count.
std::size_t export_qa_finetune(std::span<const QaFinetuneExample> examples, const std::filesystem::path& path);
std::vector<QaFinetuneExample> read_qa_finetune(const std::filesystem::path& path);

// Mean negative log-likelihood over per-example sequence log-probabilities.
double qa_loss_audit(std::span<const double> logprob_sums);

}  // namespace biodistill
