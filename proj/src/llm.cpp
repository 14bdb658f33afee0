#include "biodistill/llm.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>

#include "biodistill/error.hpp"
#include "biodistill/hashing.hpp"

namespace biodistill {

namespace {

std::string trim_copy(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

}  // namespace

void BackendConfig::validate() const {
  const auto who = "backend '" + name + "'";
  if (base_url.empty()) throw Error(ErrorKind::config, who + ": base_url is empty");
  if (max_retries < 0) throw Error(ErrorKind::config, who + ": max_retries must be >= 0");
  if (temperature < 0 || !std::isfinite(temperature)) throw Error(ErrorKind::config, who + ": temperature must be >= 0");
  if (max_tokens <= 0) throw Error(ErrorKind::config, who + ": max_tokens must be positive");
  if (timeout.count() <= 0) throw Error(ErrorKind::config, who + ": timeout must be positive");
}

Json BackendConfig::to_json() const {
  Json j;
  j["kind"] = kind == BackendKind::mock ? "mock" : "openai";
  j["base_url"] = base_url;
  j["model"] = model;
  j["api_key_env"] = api_key_env;
  j["temperature"] = temperature;
  j["max_tokens"] = max_tokens;
  j["timeout_ms"] = timeout.count();
  j["max_retries"] = max_retries;
  if (kind == BackendKind::mock) j["script"] = script.filename().string();
  return j;
}

std::optional<double> Completion::sequence_logprob() const {
  if (!logprobs) return std::nullopt;
  double sum = 0.0;
  for (const auto& t : *logprobs) sum += t.logprob;
  return sum;
}

Completion ChatBackend::complete(std::string_view prompt, bool want_logprobs) {
  if (prompt.empty()) throw Error(ErrorKind::validation, "empty prompt for backend '" + config_.name + "'");
  return do_complete(prompt, want_logprobs);
}

// ---------------------------------------------------------------------------

OpenAiChatBackend::OpenAiChatBackend(BackendConfig config, std::shared_ptr<RequestLimiter> limiter)
    : ChatBackend(std::move(config)), limiter_(std::move(limiter)) {
  this->config().validate();
}

Completion parse_chat_response(std::string_view body) {
  Json parsed;
  try {
    parsed = Json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::protocol, std::string("response is not JSON: ") + e.what());
  }
  auto choices = parsed.find("choices");
  if (choices == parsed.end() || !choices->is_array() || choices->empty()) {
    throw Error(ErrorKind::protocol, "response has no choices");
  }
  const auto& choice = choices->front();
  Completion out;
  try {
    const auto& content = choice.at("message").at("content");
    if (!content.is_string()) throw Error(ErrorKind::protocol, "message content is not a string");
    out.text = content.get<std::string>();
    if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
      if (auto tokens = lp->find("content"); tokens != lp->end() && tokens->is_array()) {
        std::vector<TokenLogprob> list;
        for (const auto& t : *tokens) list.push_back({t.value("token", std::string{}), t.at("logprob").get<double>()});
        out.logprobs = std::move(list);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::protocol, std::string("malformed choice: ") + e.what());
  }
  return out;
}

Completion OpenAiChatBackend::do_complete(std::string_view prompt, bool want_logprobs) {
  const auto& cfg = config();
  Json body;
  body["model"] = cfg.model;
  body["messages"] = Json::array({Json{{"role", "user"}, {"content", std::string(prompt)}}});
  body["temperature"] = cfg.temperature;
  body["max_tokens"] = cfg.max_tokens;
  if (want_logprobs) body["logprobs"] = true;

  std::vector<std::pair<std::string, std::string>> headers;
  if (!cfg.api_key_env.empty()) {
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (!key) throw Error(ErrorKind::config, "environment variable " + cfg.api_key_env + " is not set");
    headers.emplace_back("Authorization", std::string("Bearer ") + key);
  }

  RetryPolicy policy{cfg.max_retries, cfg.retry_base_delay, cfg.timeout};
  auto res = post_json(join_url(cfg.base_url, "chat/completions"), body.dump(), headers, policy, limiter_.get());
  auto completion = parse_chat_response(res.body);
  completion.retries = res.retries;
  if (res.retries > 0) spdlog::info("backend '{}' succeeded after {} retries", cfg.name, res.retries);
  return completion;
}

// ---------------------------------------------------------------------------

std::vector<MockRule> read_mock_script(const std::filesystem::path& path) {
  std::vector<MockRule> rules;
  for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
    try {
      MockRule r;
      r.match = row.at("match").get<std::string>();
      r.response = row.value("response", std::string{});
      r.fail = row.value("fail", false);
      rules.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return rules;
}

MockChatBackend::MockChatBackend(BackendConfig config)
    : MockChatBackend(config, config.script.empty() ? std::vector<MockRule>{} : read_mock_script(config.script)) {}

MockChatBackend::MockChatBackend(BackendConfig config, std::vector<MockRule> rules)
    : ChatBackend(std::move(config)), rules_(std::move(rules)) {}

std::size_t MockChatBackend::calls() const {
  std::lock_guard lock(mu_);
  return prompts_.size();
}

std::vector<std::string> MockChatBackend::prompts() const {
  std::lock_guard lock(mu_);
  return prompts_;
}

Completion MockChatBackend::do_complete(std::string_view prompt, bool) {
  {
    std::lock_guard lock(mu_);
    prompts_.emplace_back(prompt);
  }
  for (const auto& rule : rules_) {
    if (prompt.find(rule.match) == std::string_view::npos) continue;
    if (rule.fail) throw Error(ErrorKind::transport, "mock backend '" + config().name + "' scripted failure");
    return {rule.response, std::nullopt, 0};
  }
  std::string reply = config().fallback;
  replace_all(reply, "{model}", config().model);
  replace_all(reply, "{hash}", hex64(fnv1a64(prompt)).substr(0, 8));
  return {reply, std::nullopt, 0};
}

std::shared_ptr<ChatBackend> make_backend(const BackendConfig& config, std::shared_ptr<RequestLimiter> limiter) {
  config.validate();
  if (config.kind == BackendKind::mock) return std::make_shared<MockChatBackend>(config);
  return std::make_shared<OpenAiChatBackend>(config, std::move(limiter));
}

// ---------------------------------------------------------------------------

const char* to_string(GeneratorTag tag) {
  switch (tag) {
    case GeneratorTag::a: return "a";
    case GeneratorTag::b: return "b";
    case GeneratorTag::star: return "star";
  }
  return "?";
}

GeneratorTag parse_generator_tag(std::string_view text) {
  if (text == "a") return GeneratorTag::a;
  if (text == "b") return GeneratorTag::b;
  if (text == "star") return GeneratorTag::star;
  throw Error(ErrorKind::parse, "unknown generator tag '" + std::string(text) + "'");
}

CandidateQuestion generate_question(ChatBackend& agent, const Document& doc, GeneratorTag tag,
                                    const PromptTemplate& templ) {
  if (doc.title.empty() || doc.abstract.empty()) {
    throw Error(ErrorKind::validation, "document " + doc.id + " needs a title and an abstract");
  }
  auto prompt = templ.render({{"Title", doc.title}, {"Context", doc.abstract}});
  auto reply = agent.complete(prompt);
  auto text = trim_copy(reply.text);
  if (text.empty()) {
    throw Error(ErrorKind::generation, "agent '" + agent.config().name + "' returned an empty question for " + doc.id);
  }
  const auto& cfg = agent.config();
  Json params;
  params["model"] = cfg.model;
  params["temperature"] = cfg.temperature;
  params["max_tokens"] = cfg.max_tokens;
  return {std::move(text), doc.id, tag, std::move(params)};
}

std::string render_answer_prompt(std::string_view question, std::span<const std::string> contexts) {
  return answer_template().render({{"Question", std::string(question)}, {"Contexts", numbered_contexts(contexts)}});
}

std::string generate_answer(ChatBackend& agent, std::string_view question, std::span<const std::string> contexts) {
  if (question.empty()) throw Error(ErrorKind::validation, "cannot answer an empty question");
  if (contexts.empty()) spdlog::info("answering without retrieved contexts");
  auto reply = agent.complete(render_answer_prompt(question, contexts));
  auto text = trim_copy(reply.text);
  if (text.empty()) throw Error(ErrorKind::generation, "answer agent returned an empty answer");
  return text;
}

std::size_t export_qa_finetune(std::span<const QaFinetuneExample> examples, const std::filesystem::path& path) {
  if (examples.empty()) throw Error(ErrorKind::validation, "no fine-tuning examples to export");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].input.empty() || examples[i].target.empty()) {
      throw Error(ErrorKind::validation, "example " + std::to_string(i) + " has an empty input or target");
    }
  }
  JsonlWriter out(path);
  for (const auto& ex : examples) out.write(Json{{"input", ex.input}, {"target", ex.target}});
  out.commit();
  return out.rows();
}

std::vector<QaFinetuneExample> read_qa_finetune(const std::filesystem::path& path) {
  std::vector<QaFinetuneExample> out;
  for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
    try {
      out.push_back({row.at("input").get<std::string>(), row.at("target").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

double qa_loss_audit(std::span<const double> logprob_sums) {
  if (logprob_sums.empty()) throw Error(ErrorKind::validation, "loss audit needs at least one example");
  // Neumaier summation.
  double sum = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < logprob_sums.size(); ++i) {
    const double v = logprob_sums[i];
    if (!std::isfinite(v)) throw Error(ErrorKind::validation, "log-probability " + std::to_string(i) + " is not finite");
    if (v > 0.0) throw Error(ErrorKind::validation, "log-probability " + std::to_string(i) + " is positive");
    const double term = -v;
    const double t = sum + term;
    comp += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
    sum = t;
  }
  return (sum + comp) / static_cast<double>(logprob_sums.size());
}

}  // namespace biodistill
