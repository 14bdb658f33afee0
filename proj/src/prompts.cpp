#include "biodistill/prompts.hpp"

#include "biodistill/error.hpp"

namespace biodistill {

PromptTemplate::PromptTemplate(std::string id, std::string text) : id_(std::move(id)), text_(std::move(text)) {
  std::size_t pos = 0;
  while ((pos = text_.find('{', pos)) != std::string::npos) {
    auto close = text_.find('}', pos);
    if (close == std::string::npos) throw Error(ErrorKind::render, "unterminated slot in template " + id_);
    slots_.push_back(text_.substr(pos + 1, close - pos - 1));
    pos = close + 1;
  }
}

std::string PromptTemplate::render(const std::map<std::string, std::string, std::less<>>& values) const {
  std::string out;
  out.reserve(text_.size() + 256);
  std::size_t pos = 0;
  for (const auto& slot : slots_) {
    auto open = text_.find('{', pos);
    out.append(text_, pos, open - pos);
    auto it = values.find(slot);
    if (it == values.end() || it->second.empty()) {
      throw Error(ErrorKind::render, "template " + id_ + ": slot {" + slot + "} is not bound");
    }
    out += it->second;
    pos = open + slot.size() + 2;
  }
  out.append(text_, pos, std::string::npos);
  return out;
}

const PromptTemplate& cpt_template() {
  static const PromptTemplate t(
      "cpt",
      "To address the challenges for the biomedical field, I reviewed the paper titled: {Title}, {Context}.\n"
      "Motivated by this study, I conducted a literature review to gather additional resources and contextualize "
      "its findings. During this process, I identified the following key materials: {Retrieved Context}.\n"
      "Reflecting on these insights, I formulated the following research question: {Question}.");
  return t;
}

const PromptTemplate& qa_template() {
  static const PromptTemplate t(
      "qa",
      "Please analyze the information in the title and context in the field of biomedical and generate a question:\n"
      "Title: {Title}\n"
      "Context: {Context}\n"
      "Response:");
  return t;
}

const PromptTemplate& answer_template() {
  static const PromptTemplate t(
      "answer",
      "Answer the following biomedical research question using the supporting contexts.\n"
      "Question: {Question}\n"
      "Contexts:\n"
      "{Contexts}\n"
      "Answer:");
  return t;
}

const PromptTemplate& judge_template() {
  static const PromptTemplate t(
      "judge",
      "Two candidate question-context pairs were generated from the same biomedical document. Decide which pair's "
      "question and retrieved contexts align better with the biomedical knowledge hierarchy of the document.\n\n"
      "Document:\n{Document}\n\n"
      "Pair A\nQuestion: {Question A}\nContexts:\n{Contexts A}\n\n"
      "Pair B\nQuestion: {Question B}\nContexts:\n{Contexts B}\n\n"
      "Answer with a single letter: A or B.");
  return t;
}

std::string render_cpt_prompt(std::string_view title, std::string_view context,
                              std::span<const std::string> retrieved, std::string_view question) {
  std::string joined;
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    if (retrieved[i].empty()) throw Error(ErrorKind::render, "retrieved context " + std::to_string(i + 1) + " is empty");
    if (i) joined += kRetrievedSeparator;
    joined += retrieved[i];
  }
  return cpt_template().render({{"Title", std::string(title)},
                                {"Context", std::string(context)},
                                {"Retrieved Context", joined},
                                {"Question", std::string(question)}});
}

std::string render_qa_prompt(std::string_view title, std::string_view context) {
  return qa_template().render({{"Title", std::string(title)}, {"Context", std::string(context)}});
}

std::string numbered_contexts(std::span<const std::string> contexts) {
  if (contexts.empty()) return "(none)";
  std::string out;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    if (i) out += '\n';
    out += "[" + std::to_string(i + 1) + "] " + contexts[i];
  }
  return out;
}

}  // namespace biodistill
