#include "support.hpp"

#include "taskgrasp/error.hpp"

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <regex>

using namespace taskgrasp;

namespace {

ColorImage small_image() {
  ColorImage img(8, 6);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<std::uint8_t>(i * 7);
  return img;
}

ReasoningContext visible(std::vector<std::string> names) { return ReasoningContext{std::move(names)}; }

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

class ScriptedBackend final : public ReasoningBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const PromptPayload& payload, const ReasoningContext&) override {
    prompts.push_back(payload.user_text);
    const auto i = std::min(prompts.size() - 1, replies_.size() - 1);
    return replies_[i];
  }
  std::string name() const override { return "scripted"; }
  std::vector<std::string> prompts;

 private:
  std::vector<std::string> replies_;
};

class CountingBackend final : public ReasoningBackend {
 public:
  std::string complete(const PromptPayload& p, const ReasoningContext& c) override {
    ++calls;
    return MockReasoningBackend().complete(p, c);
  }
  std::string name() const override { return "counting"; }
  std::atomic<int> calls{0};
};

ReasoningResult sample_result() {
  return {"scoop", "spoon", "handle", "grasp", {"step one", "step two", "step three"}, ""};
}

std::string random_text(std::mt19937_64& rng, std::size_t max_len) {
  static const std::vector<std::string> atoms{"a", "Z", "0", " ", "\"", "\\", "`", "```", "{", "}", "[", "]",
                                              ",", ":", "\n", "\t", "json", "é", "日本", " ", "'", "/"};
  std::string out;
  const std::size_t n = rng() % (max_len + 1);
  for (std::size_t i = 0; i < n; ++i) out += atoms[rng() % atoms.size()];
  return out;
}

std::string non_blank(std::mt19937_64& rng) {
  std::string s = random_text(rng, 12);
  return "x" + s;
}

}  // namespace

TEST_SUITE("reasoning") {
  TEST_CASE("the prompt lists exactly three numbered steps and keeps the instruction verbatim") {
    const auto img = small_image();
    const auto p = build_prompt("  Pass me something to drink \"now\"  ", img);
    CHECK(p.instruction == "Pass me something to drink \"now\"");
    CHECK(p.user_text.find(p.instruction) != std::string::npos);
    const std::regex step(R"((^|\n)(\d+)\. )");
    std::vector<int> numbers;
    for (auto it = std::sregex_iterator(p.system_text.begin(), p.system_text.end(), step); it != std::sregex_iterator();
         ++it)
      numbers.push_back(std::stoi((*it)[2]));
    CHECK(numbers == std::vector<int>{1, 2, 3});
    CHECK(p.image == &img);
    CHECK(p.output_schema == std::vector<std::string>{"task", "object", "part", "affordance", "rationale"});
  }

  TEST_CASE("the prompt digest depends on text and pixels only") {
    const auto img = small_image();
    const auto a = build_prompt("I am thirsty", img);
    const auto b = build_prompt("I am thirsty", img);
    CHECK(a.digest() == b.digest());
    CHECK(build_prompt("I am hungry", img).digest() != a.digest());
    auto other = img;
    other.data[0] ^= 1;
    CHECK(build_prompt("I am thirsty", other).digest() != a.digest());
  }

  TEST_CASE("instructions are validated") {
    CHECK(validate_instruction("  hi \n") == "hi");
    CHECK(code_of([] { validate_instruction(" \t\n"); }) == ErrorCode::InvalidInstruction);
    CHECK(code_of([] { validate_instruction(std::string(kMaxInstructionLength + 1, 'a')); }) ==
          ErrorCode::InvalidInstruction);
    CHECK_NOTHROW(validate_instruction(std::string(kMaxInstructionLength, 'a')));
  }

  TEST_CASE("mock picks the spoon handle for scooping") {
    MockReasoningBackend mock;
    const auto img = small_image();
    const auto r = infer_affordance("I want to scoop some sugar", img, mock, visible({"mug", "spoon", "pan"}));
    CHECK(r.task == "scoop");
    CHECK(r.object == "spoon");
    CHECK(r.part == "handle");
    CHECK(r.affordance == "grasp");
    REQUIRE(r.rationale.size() == 3);
  }

  TEST_CASE("mock follows the object preference order and the visible set") {
    MockReasoningBackend mock;
    const auto img = small_image();
    CHECK(infer_affordance("I am thirsty", img, mock, visible({"bottle", "mug"})).object == "mug");
    CHECK(infer_affordance("I am thirsty", img, mock, visible({"bottle", "hammer"})).object == "bottle");
    CHECK(code_of([&] { infer_affordance("I am thirsty", img, mock, visible({"hammer"})); }) ==
          ErrorCode::NoRelevantObject);
    CHECK(code_of([&] { infer_affordance("fly me to the moon", img, mock, visible({"mug"})); }) ==
          ErrorCode::NoRelevantObject);
  }

  TEST_CASE("every mock answer names a part carrying the grasp tag") {
    MockReasoningBackend mock;
    const auto table = MockRuleTable::defaults();
    std::vector<std::string> all;
    for (auto c : kAllClasses) all.emplace_back(to_string(c));
    for (const auto& [cls, instruction] : table.canonical_instructions) {
      const auto r = mock.decide(instruction, visible(all));
      const auto c = parse_object_class(r.object);
      REQUIRE_MESSAGE(c, instruction);
      CHECK_MESSAGE(r.object == cls, instruction);
      const auto idx = part_index(*c, r.part);
      REQUIRE(idx);
      CHECK(class_parts(*c)[*idx].affords("grasp"));
    }
  }

  TEST_CASE("the shipped rules file matches the built-in table") {
    const auto loaded = MockRuleTable::load(std::filesystem::path(TASKGRASP_DATA_DIR) / "mock_rules.json");
    CHECK(loaded.to_json() == MockRuleTable::defaults().to_json());
    CHECK(MockRuleTable::from_json(loaded.to_json()).to_json() == loaded.to_json());
    CHECK(code_of([&] { loaded.canonical_instruction("unicorn"); }) == ErrorCode::ConfigError);
  }

  TEST_CASE("garbage replies stop after three calls with MalformedReasoning") {
    ScriptedBackend garbage({"I think you should hold the mug."});
    const auto img = small_image();
    CHECK(code_of([&] { infer_affordance("I am thirsty", img, garbage, visible({"mug"})); }) ==
          ErrorCode::MalformedReasoning);
    REQUIRE(garbage.prompts.size() == 3);
    CHECK(garbage.prompts[0].find("could not be used") == std::string::npos);
    CHECK(garbage.prompts[1].find("could not be used") != std::string::npos);
  }

  TEST_CASE("a repaired reply is accepted on the second call") {
    ScriptedBackend backend({"sorry", format_reasoning_response(sample_result())});
    const auto img = small_image();
    const auto r = infer_affordance("scoop", img, backend, visible({"spoon"}));
    CHECK(r == sample_result());
    CHECK(backend.prompts.size() == 2);
    CHECK(backend.prompts[1].size() > backend.prompts[0].size());
    CHECK(backend.prompts[1].substr(0, backend.prompts[0].size()) == backend.prompts[0]);
  }

  TEST_CASE("parsing") {
    SUBCASE("a well-formed block") {
      const auto out = parse_reasoning_response(format_reasoning_response(sample_result()));
      REQUIRE(std::holds_alternative<ReasoningResult>(out));
      CHECK(std::get<ReasoningResult>(out) == sample_result());
    }
    SUBCASE("prose around a fenced block") {
      const std::string raw = "Sure! Here is my answer.\n" + format_reasoning_response(sample_result()) +
                              "\nLet me know if anything else is needed {not json}.";
      const auto out = parse_reasoning_response(raw);
      REQUIRE(std::holds_alternative<ReasoningResult>(out));
      CHECK(std::get<ReasoningResult>(out) == sample_result());
      CHECK(std::get<ReasoningResult>(out).raw_response == raw);
    }
    SUBCASE("a bare object without a fence") {
      const auto out = parse_reasoning_response(
          R"(Answer: {"task": "t", "object": "mug", "part": "handle", "affordance": "grasp", "rationale": ["a", "b", "c"]} done)");
      REQUIRE(std::holds_alternative<ReasoningResult>(out));
      CHECK(std::get<ReasoningResult>(out).object == "mug");
    }
    SUBCASE("a missing part names the field") {
      const auto out = parse_reasoning_response(
          R"({"task": "t", "object": "mug", "affordance": "grasp", "rationale": ["a", "b", "c"]})");
      REQUIRE(std::holds_alternative<ParseFailure>(out));
      CHECK(std::get<ParseFailure>(out).field == "part");
    }
    SUBCASE("rationale must have three steps") {
      const auto out = parse_reasoning_response(
          R"({"task": "t", "object": "mug", "part": "handle", "affordance": "grasp", "rationale": ["a", "b"]})");
      REQUIRE(std::holds_alternative<ParseFailure>(out));
      CHECK(std::get<ParseFailure>(out).field == "rationale");
    }
    SUBCASE("no block at all") {
      const auto out = parse_reasoning_response("plain words");
      REQUIRE(std::holds_alternative<ParseFailure>(out));
      CHECK(std::get<ParseFailure>(out).field.empty());
    }
    SUBCASE("deep nesting is refused without recursion trouble") {
      const std::string deep = std::string(100000, '[') + std::string(100000, ']');
      CHECK(std::holds_alternative<ParseFailure>(parse_reasoning_response("{\"a\": " + deep + "}")));
    }
  }

  TEST_CASE("format then parse is the identity on awkward strings") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 500; ++i) {
      ReasoningResult r{non_blank(rng), non_blank(rng), non_blank(rng), non_blank(rng),
                        {non_blank(rng), non_blank(rng), non_blank(rng)}, ""};
      const auto out = parse_reasoning_response(format_reasoning_response(r));
      REQUIRE(std::holds_alternative<ReasoningResult>(out));
      CHECK(std::get<ReasoningResult>(out) == r);
    }
  }

  TEST_CASE("the parser never throws on arbitrary input") {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 2000; ++i) {
      std::string raw = random_text(rng, 60);
      if (i % 3 == 0) {
        std::string block = format_reasoning_response(sample_result());
        block.resize(rng() % block.size());
        raw += block;
      }
      if (i % 7 == 0)
        for (int k = 0; k < 8; ++k) raw.push_back(static_cast<char>(rng()));
      CHECK_NOTHROW(parse_reasoning_response(raw));
    }
  }

  TEST_CASE("the cache answers repeated prompts without calling the backend") {
    auto inner = std::make_shared<CountingBackend>();
    CachingReasoningBackend cache(inner);
    const auto img = small_image();
    const auto a = infer_affordance("I am thirsty", img, cache, visible({"mug"}));
    const auto b = infer_affordance("I am thirsty", img, cache, visible({"mug"}));
    CHECK(a == b);
    CHECK(inner->calls == 1);
    infer_affordance("I am thirsty", img, cache, visible({"bottle"}));
    CHECK(inner->calls == 2);
    CHECK(cache.size() == 2);
  }

  TEST_CASE("remote request carries system text, user text and one PNG image") {
    RemoteReasoningBackend remote({"http://127.0.0.1:9/v1", "vlm-test", 0.0, "TASKGRASP_TEST_KEY", std::chrono::milliseconds(500)});
    const auto img = small_image();
    const auto body = remote.request_body(build_prompt("I am thirsty", img));
    CHECK(body["model"] == "vlm-test");
    REQUIRE(body["messages"].size() == 2);
    CHECK(body["messages"][0]["role"] == "system");
    const auto& content = body["messages"][1]["content"];
    REQUIRE(content.size() == 2);
    CHECK(content[0]["text"].get<std::string>().find("I am thirsty") != std::string::npos);
    CHECK(content[1]["image_url"]["url"].get<std::string>().rfind("data:image/png;base64,", 0) == 0);
  }

  TEST_CASE("remote backend talks to a chat-completions endpoint") {
    testing::StubServer stub;
    std::string auth;
    stub.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
      auth = req.get_header_value("Authorization");
      const nlohmann::json reply{
          {"choices", {{{"message", {{"role", "assistant"}, {"content", format_reasoning_response(sample_result())}}}}}}};
      res.set_content(reply.dump(), "application/json");
    });
    stub.start();
    ::setenv("TASKGRASP_TEST_KEY", "secret-token", 1);
    RemoteReasoningBackend remote({stub.url("/v1"), "vlm-test", 0.0, "TASKGRASP_TEST_KEY", std::chrono::milliseconds(5000)});
    const auto img = small_image();
    CHECK(infer_affordance("scoop", img, remote) == sample_result());
    CHECK(auth == "Bearer secret-token");
    ::unsetenv("TASKGRASP_TEST_KEY");
  }

  TEST_CASE("an unreachable endpoint is BackendUnavailable") {
    RemoteReasoningBackend remote({"http://127.0.0.1:1/v1", "vlm-test", 0.0, "TASKGRASP_TEST_KEY", std::chrono::milliseconds(500)});
    const auto img = small_image();
    CHECK(code_of([&] { infer_affordance("scoop", img, remote); }) == ErrorCode::BackendUnavailable);
    CHECK(code_of([] { RemoteReasoningBackend({"", "m"}); }) == ErrorCode::ConfigError);
  }
}
