#pragma once

#include "taskgrasp/image.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace taskgrasp {

constexpr std::size_t kMaxInstructionLength = 2000;

/// Whitespace-trimmed instruction text. Throws InvalidInstruction when empty or too long.
std::string validate_instruction(std::string_view text);

struct ReasoningResult {
  std::string task;
  std::string object;
  std::string part;
  std::string affordance;
  /// One entry per reasoning step, in order: task, object, part.
  std::vector<std::string> rationale;
  std::string raw_response;

  /// Field equality; raw_response is ignored.
  bool operator==(const ReasoningResult& o) const {
    return task == o.task && object == o.object && part == o.part && affordance == o.affordance &&
           rationale == o.rationale;
  }
};

/// Response block format understood by the parser.
inline constexpr std::string_view kResponseFormat = "taskgrasp.reasoning/1";
inline constexpr std::string_view kNoObject = "none";

struct PromptPayload {
  std::string instruction;  // trimmed, verbatim inside user_text
  std::string system_text;
  std::string user_text;
  const ColorImage* image = nullptr;  // borrowed; the backend encodes it if needed
  std::vector<std::string> output_schema;
  std::string format_version;

  /// Hash over every field, image pixels included.
  std::string digest() const;
};

PromptPayload build_prompt(std::string_view instruction, const ColorImage& rgb);

/// Appended to the user text when a previous response could not be parsed.
std::string repair_suffix(std::string_view problem);

struct ParseFailure {
  std::string field;     // missing or invalid field; empty when no block was found
  std::string fragment;  // offending text, truncated
  std::string message;
};

using ParseOutcome = std::variant<ReasoningResult, ParseFailure>;

/// Never throws. Accepts a ```json fenced block anywhere in the text, or
/// failing that the first balanced {...} object.
ParseOutcome parse_reasoning_response(std::string_view raw) noexcept;

/// Inverse of the parser: prose-free fenced block.
std::string format_reasoning_response(const ReasoningResult& r);

/// What the backend may know about the scene besides the image. Real VLMs
/// ignore it; the mock reads the visible object names from it.
struct ReasoningContext {
  std::vector<std::string> visible_objects;
};

class ReasoningBackend {
 public:
  virtual ~ReasoningBackend() = default;
  /// Raw model text for the prompt. Transport problems raise BackendUnavailable.
  virtual std::string complete(const PromptPayload& payload, const ReasoningContext& context) = 0;
  virtual std::string name() const = 0;
};

struct MockRule {
  std::vector<std::string> keywords;
  std::string task;
  std::vector<std::string> objects;  // preference order
};

struct MockRuleTable {
  std::vector<MockRule> rules;
  /// Part names tried first, in order, before falling back to the first part
  /// carrying the grasp tag.
  std::vector<std::string> part_preference;
  /// Class name -> implicit instruction used by the evaluation harness.
  std::map<std::string, std::string> canonical_instructions;

  static MockRuleTable defaults();
  static MockRuleTable from_json(const nlohmann::json& doc);
  static MockRuleTable load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Throws ConfigError for classes without an entry.
  const std::string& canonical_instruction(std::string_view object_class) const;
};

/// Deterministic backend: keyword rules intersected with the visible objects,
/// parts taken from the synthetic class catalogue.
class MockReasoningBackend final : public ReasoningBackend {
 public:
  explicit MockReasoningBackend(MockRuleTable table = MockRuleTable::defaults()) : table_(std::move(table)) {}
  std::string complete(const PromptPayload& payload, const ReasoningContext& context) override;
  std::string name() const override { return "mock"; }

  /// The structured answer before formatting; object "none" when nothing matches.
  ReasoningResult decide(std::string_view instruction, const ReasoningContext& context) const;

 private:
  MockRuleTable table_;
};

struct RemoteReasoningConfig {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string model;
  double temperature = 0.0;
  std::string api_key_env = "TASKGRASP_VLM_API_KEY";
  std::chrono::milliseconds timeout{30000};
};

/// Chat-completion client: POST {base_url}/chat/completions with a system
/// message and a user message carrying the text and one PNG data URL.
class RemoteReasoningBackend final : public ReasoningBackend {
 public:
  explicit RemoteReasoningBackend(RemoteReasoningConfig config);
  std::string complete(const PromptPayload& payload, const ReasoningContext& context) override;
  std::string name() const override { return "remote"; }

  nlohmann::json request_body(const PromptPayload& payload) const;

 private:
  RemoteReasoningConfig config_;
};

/// Memoizes responses by prompt hash. Safe to share between threads.
class CachingReasoningBackend final : public ReasoningBackend {
 public:
  explicit CachingReasoningBackend(std::shared_ptr<ReasoningBackend> inner) : inner_(std::move(inner)) {}
  std::string complete(const PromptPayload& payload, const ReasoningContext& context) override;
  std::string name() const override { return inner_->name(); }
  std::size_t size() const;

 private:
  std::shared_ptr<ReasoningBackend> inner_;
  mutable std::mutex mutex_;
  std::map<std::string, std::string> cache_;
};

/// Builds the prompt, queries the backend and parses the answer, re-asking
/// with a repair suffix after a malformed response. `max_attempts` counts
/// every call, the first included.
ReasoningResult infer_affordance(std::string_view instruction, const ColorImage& rgb, ReasoningBackend& backend,
                                 const ReasoningContext& context = {}, int max_attempts = 3);

}  // namespace taskgrasp
