#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace biodistill {

// Text with {Slot Name} placeholders. Rendering fails with Error(render)
// naming the first slot that is unbound or bound to an empty string.
class PromptTemplate {
 public:
  PromptTemplate(std::string id, std::string text);

  const std::string& id() const { return id_; }
  const std::string& text() const { return text_; }
  const std::vector<std::string>& slots() const { return slots_; }

  std::string render(const std::map<std::string, std::string, std::less<>>& values) const;

 private:
  std::string id_;
  std::string text_;
  std::vector<std::string> slots_;
};

// Retrieved contexts are joined in rank order with this separator.
inline constexpr std::string_view kRetrievedSeparator = "\n- ";

// Continued pre-training narrative: {Title} {Context} {Retrieved Context} {Question}.
const PromptTemplate& cpt_template();
// Question-generation / QA inference prompt: {Title} {Context}.
const PromptTemplate& qa_template();
// Answer agent prompt: {Question} {Contexts}.
const PromptTemplate& answer_template();
// Pairwise judge prompt: {Document} {Question A} {Contexts A} {Question B} {Contexts B}.
const PromptTemplate& judge_template();

inline constexpr std::string_view kJudgeReprompt =
    "\n\nYour previous reply could not be parsed. Reply with exactly one character: A or B.";

std::string render_cpt_prompt(std::string_view title, std::string_view context,
                              std::span<const std::string> retrieved, std::string_view question);
std::string render_qa_prompt(std::string_view title, std::string_view context);

// "[1] first\n[2] second", or "(none)" for an empty list.
std::string numbered_contexts(std::span<const std::string> contexts);

}  // namespace biodistill
