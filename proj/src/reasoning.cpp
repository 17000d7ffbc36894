#include "taskgrasp/reasoning.hpp"

#include "http_client.hpp"
#include "random.hpp"
#include "taskgrasp/error.hpp"
#include "taskgrasp/scene.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace taskgrasp {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::string truncate(std::string_view s, std::size_t n = 200) {
  return s.size() <= n ? std::string(s) : std::string(s.substr(0, n)) + "...";
}

const std::vector<std::string>& schema_fields() {
  static const std::vector<std::string> fields{"task", "object", "part", "affordance", "rationale"};
  return fields;
}

constexpr std::string_view kSystemText =
    "You are the reasoning module of a robot that grasps objects so that a task can be carried out.\n"
    "Given an instruction and an image of the workspace, reason in three steps:\n"
    "1. Task analysis: extract the explicit task and the functional requirements it implies.\n"
    "2. Object identification: name the single object visible in the image that is most relevant to the task.\n"
    "3. Part selection: decompose that object into functional parts with their affordances and choose the part "
    "the gripper should hold so the task stays possible.\n"
    "If no visible object fits the task, answer with object \"none\".";

// Bounded nesting keeps the recursive JSON parser far from the stack limit.
bool nesting_within(std::string_view block, int limit) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (char c : block) {
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{' || c == '[') {
      if (++depth > limit) return false;
    } else if (c == '}' || c == ']') {
      --depth;
    }
  }
  return true;
}

// End of the balanced object starting at `open`, or npos.
std::size_t match_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

std::optional<json> parse_object(std::string_view block) {
  if (!nesting_within(block, 32)) return std::nullopt;
  json doc = json::parse(block.begin(), block.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
  return doc;
}

// Candidate blocks in priority order: fenced blocks, then balanced braces.
std::optional<std::pair<json, std::string>> find_block(std::string_view raw) {
  std::size_t pos = 0;
  while ((pos = raw.find("```", pos)) != std::string_view::npos) {
    std::size_t body = raw.find('\n', pos + 3);
    if (body == std::string_view::npos) break;
    const std::size_t close = raw.find("```", body + 1);
    if (close == std::string_view::npos) break;
    const auto block = raw.substr(body + 1, close - body - 1);
    if (auto doc = parse_object(block)) return std::make_pair(std::move(*doc), std::string(block));
    pos = close + 3;
  }
  int tries = 0;
  for (std::size_t open = raw.find('{'); open != std::string_view::npos && tries < 16;
       open = raw.find('{', open + 1), ++tries) {
    const std::size_t close = match_brace(raw, open);
    if (close == std::string_view::npos) break;
    const auto block = raw.substr(open, close - open + 1);
    if (auto doc = parse_object(block)) return std::make_pair(std::move(*doc), std::string(block));
  }
  return std::nullopt;
}

}  // namespace

std::string validate_instruction(std::string_view text) {
  std::string t = trim(text);
  if (t.empty()) throw Error(ErrorCode::InvalidInstruction, "instruction is empty");
  if (t.size() > kMaxInstructionLength)
    throw Error(ErrorCode::InvalidInstruction,
                "instruction has " + std::to_string(t.size()) + " characters (limit " +
                    std::to_string(kMaxInstructionLength) + ")");
  return t;
}

std::string PromptPayload::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    const std::uint64_t n = s.size();
    h = detail::fnv1a(&n, sizeof n, h);
    h = detail::fnv1a(s.data(), s.size(), h);
  };
  mix(instruction);
  mix(system_text);
  mix(user_text);
  mix(format_version);
  for (const auto& f : output_schema) mix(f);
  if (image) {
    const int dims[2] = {image->width, image->height};
    h = detail::fnv1a(dims, sizeof dims, h);
    h = detail::fnv1a(image->data.data(), image->data.size(), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PromptPayload build_prompt(std::string_view instruction, const ColorImage& rgb) {
  if (rgb.empty()) throw Error(ErrorCode::InvalidArgument, "prompt image is empty");
  PromptPayload p;
  p.instruction = validate_instruction(instruction);
  p.system_text = std::string(kSystemText);
  p.user_text = "Instruction: " + p.instruction +
                "\n\nReply with exactly one fenced JSON block:\n"
                "```json\n"
                "{\"format\": \"" +
                std::string(kResponseFormat) +
                "\", \"task\": \"...\", \"object\": \"...\", \"part\": \"...\", \"affordance\": \"...\", "
                "\"rationale\": [\"step 1 ...\", \"step 2 ...\", \"step 3 ...\"]}\n"
                "```";
  p.image = &rgb;
  p.output_schema = schema_fields();
  p.format_version = std::string(kResponseFormat);
  return p;
}

std::string repair_suffix(std::string_view problem) {
  return "\n\nYour previous reply could not be used (" + truncate(problem, 160) +
         "). Answer again with only the fenced JSON block and all five fields.";
}

ParseOutcome parse_reasoning_response(std::string_view raw) noexcept {
  try {
    auto found = find_block(raw);
    if (!found) return ParseFailure{"", truncate(raw), "no structured block found"};
    const auto& [doc, block] = *found;
    ReasoningResult r;
    for (const char* field : {"task", "object", "part", "affordance"}) {
      auto it = doc.find(field);
      if (it == doc.end()) return ParseFailure{field, truncate(block), std::string("missing field '") + field + "'"};
      if (!it->is_string() || trim(it->get_ref<const std::string&>()).empty())
        return ParseFailure{field, truncate(block), std::string("field '") + field + "' must be a non-empty string"};
    }
    r.task = doc["task"].get<std::string>();
    r.object = doc["object"].get<std::string>();
    r.part = doc["part"].get<std::string>();
    r.affordance = doc["affordance"].get<std::string>();
    auto it = doc.find("rationale");
    if (it == doc.end()) return ParseFailure{"rationale", truncate(block), "missing field 'rationale'"};
    if (!it->is_array() || it->size() != 3)
      return ParseFailure{"rationale", truncate(block), "rationale must list the three steps"};
    for (const auto& step : *it) {
      if (!step.is_string() || trim(step.get_ref<const std::string&>()).empty())
        return ParseFailure{"rationale", truncate(block), "rationale steps must be non-empty strings"};
      r.rationale.push_back(step.get<std::string>());
    }
    if (auto f = doc.find("format"); f != doc.end() && !(f->is_string() && f->get<std::string>() == kResponseFormat))
      return ParseFailure{"format", truncate(block), "unsupported response format"};
    r.raw_response = std::string(raw);
    return r;
  } catch (const std::exception& e) {
    return ParseFailure{"", "", std::string("parser error: ") + e.what()};
  } catch (...) {
    return ParseFailure{"", "", "parser error"};
  }
}

std::string format_reasoning_response(const ReasoningResult& r) {
  const json doc{{"format", kResponseFormat}, {"task", r.task},     {"object", r.object},
                 {"part", r.part},            {"affordance", r.affordance}, {"rationale", r.rationale}};
  // Backticks only occur inside strings; escaping them keeps the fence unambiguous.
  std::string body = doc.dump(-1, ' ', false, json::error_handler_t::replace);
  std::string escaped;
  escaped.reserve(body.size());
  for (char c : body) {
    if (c == '`') escaped += "\\u0060";
    else escaped.push_back(c);
  }
  return "```json\n" + escaped + "\n```";
}

// ---------------------------------------------------------------------------
// Mock backend

MockRuleTable MockRuleTable::defaults() {
  static const char* kDefaults = R"({
  "version": 1,
  "rules": [
    {"keywords": ["thirsty", "thirst", "drink", "coffee", "tea"], "task": "drink", "objects": ["mug", "cup", "bottle"]},
    {"keywords": ["scoop", "stir", "spoon", "cereal"], "task": "scoop", "objects": ["spoon", "bowl"]},
    {"keywords": ["nail", "pound", "knock", "hammer"], "task": "pound", "objects": ["hammer"]},
    {"keywords": ["screw", "tighten", "loosen"], "task": "screw", "objects": ["screwdriver"]},
    {"keywords": ["soup", "salad", "serve", "fruit"], "task": "contain", "objects": ["bowl", "pan"]},
    {"keywords": ["pour", "water", "juice"], "task": "pour", "objects": ["bottle", "mug"]},
    {"keywords": ["fry", "egg", "cook", "pancake"], "task": "cook", "objects": ["pan"]}
  ],
  "part_preference": ["handle"],
  "canonical_instructions": {
    "mug": "I am thirsty",
    "spoon": "I want to scoop something",
    "hammer": "I need to drive a nail into the wall",
    "screwdriver": "I need to tighten a loose screw",
    "bowl": "I want to serve some soup",
    "bottle": "I want to pour some water",
    "pan": "I want to fry an egg"
  }
})";
  return from_json(json::parse(kDefaults));
}

MockRuleTable MockRuleTable::from_json(const json& doc) {
  try {
    if (doc.value("version", 1) != 1) throw Error(ErrorCode::ConfigError, "unsupported rule table version");
    MockRuleTable t;
    for (const auto& r : doc.at("rules")) {
      MockRule rule;
      for (const auto& k : r.at("keywords")) rule.keywords.push_back(lower(k.get<std::string>()));
      rule.task = r.at("task").get<std::string>();
      for (const auto& o : r.at("objects")) rule.objects.push_back(lower(o.get<std::string>()));
      if (rule.keywords.empty() || rule.objects.empty() || rule.task.empty())
        throw Error(ErrorCode::ConfigError, "rule needs keywords, a task and objects");
      t.rules.push_back(std::move(rule));
    }
    if (doc.contains("part_preference"))
      for (const auto& p : doc.at("part_preference")) t.part_preference.push_back(p.get<std::string>());
    if (doc.contains("canonical_instructions"))
      for (const auto& [k, v] : doc.at("canonical_instructions").items()) t.canonical_instructions[k] = v.get<std::string>();
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed rule table: ") + e.what());
  }
}

MockRuleTable MockRuleTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read rule table " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::ConfigError, "rule table is not valid JSON: " + path.string());
  return from_json(doc);
}

json MockRuleTable::to_json() const {
  json rules = json::array();
  for (const auto& r : this->rules) rules.push_back({{"keywords", r.keywords}, {"task", r.task}, {"objects", r.objects}});
  return {{"version", 1},
          {"rules", rules},
          {"part_preference", part_preference},
          {"canonical_instructions", canonical_instructions}};
}

const std::string& MockRuleTable::canonical_instruction(std::string_view object_class) const {
  auto it = canonical_instructions.find(std::string(object_class));
  if (it == canonical_instructions.end())
    throw Error(ErrorCode::ConfigError, "no canonical instruction for class " + std::string(object_class));
  return it->second;
}

ReasoningResult MockReasoningBackend::decide(std::string_view instruction, const ReasoningContext& context) const {
  const auto words = words_of(instruction);
  std::vector<std::string> visible;
  for (const auto& v : context.visible_objects) visible.push_back(lower(v));

  ReasoningResult r;
  for (const auto& rule : table_.rules) {
    const bool hit = std::any_of(rule.keywords.begin(), rule.keywords.end(), [&](const std::string& k) {
      return std::find(words.begin(), words.end(), k) != words.end();
    });
    if (!hit) continue;
    for (const auto& obj : rule.objects) {
      if (std::find(visible.begin(), visible.end(), obj) == visible.end()) continue;
      const auto cls = parse_object_class(obj);
      if (!cls) continue;
      const auto& parts = class_parts(*cls);
      const PartLabel* chosen = nullptr;
      for (const auto& pref : table_.part_preference) {
        for (const auto& p : parts)
          if (p.name == pref && p.affords("grasp")) chosen = &p;
        if (chosen) break;
      }
      if (!chosen)
        for (const auto& p : parts)
          if (p.affords("grasp")) {
            chosen = &p;
            break;
          }
      if (!chosen) continue;
      r.task = rule.task;
      r.object = obj;
      r.part = chosen->name;
      r.affordance = "grasp";
      r.rationale = {"task analysis: the instruction calls for the task '" + rule.task + "'",
                     "object identification: the " + obj + " is the visible object suited to '" + rule.task + "'",
                     "part selection: the " + chosen->name + " affords grasping and leaves the functional part free"};
      return r;
    }
  }
  r.task = "unknown";
  r.object = std::string(kNoObject);
  r.part = std::string(kNoObject);
  r.affordance = std::string(kNoObject);
  r.rationale = {"task analysis: no rule matches the instruction", "object identification: no suitable object is visible",
                 "part selection: nothing to select"};
  return r;
}

std::string MockReasoningBackend::complete(const PromptPayload& payload, const ReasoningContext& context) {
  return format_reasoning_response(decide(payload.instruction, context));
}

// ---------------------------------------------------------------------------
// Remote backend

RemoteReasoningBackend::RemoteReasoningBackend(RemoteReasoningConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw Error(ErrorCode::ConfigError, "remote reasoning needs a base_url");
  if (config_.model.empty()) throw Error(ErrorCode::ConfigError, "remote reasoning needs a model name");
  detail::split_url(config_.base_url);
}

json RemoteReasoningBackend::request_body(const PromptPayload& payload) const {
  json user_content = json::array();
  user_content.push_back({{"type", "text"}, {"text", payload.user_text}});
  if (payload.image) {
    const std::string url = "data:image/png;base64," + detail::base64_encode(encode_color_png(*payload.image));
    user_content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
  }
  return {{"model", config_.model},
          {"temperature", config_.temperature},
          {"messages",
           {{{"role", "system"}, {"content", payload.system_text}}, {{"role", "user"}, {"content", user_content}}}}};
}

std::string RemoteReasoningBackend::complete(const PromptPayload& payload, const ReasoningContext&) {
  std::vector<std::pair<std::string, std::string>> headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
    headers.emplace_back("Authorization", std::string("Bearer ") + key);
  const json reply = detail::post_json(config_.base_url, "/chat/completions", request_body(payload), config_.timeout,
                                       headers);
  try {
    const auto& content = reply.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    std::string text;
    for (const auto& part : content)
      if (part.value("type", "") == "text") text += part.value("text", "");
    return text;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("unexpected chat completion reply: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::string CachingReasoningBackend::complete(const PromptPayload& payload, const ReasoningContext& context) {
  std::string key = payload.digest();
  for (const auto& v : context.visible_objects) key += "|" + v;
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  std::string raw = inner_->complete(payload, context);
  std::lock_guard lock(mutex_);
  return cache_.emplace(std::move(key), std::move(raw)).first->second;
}

std::size_t CachingReasoningBackend::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

ReasoningResult infer_affordance(std::string_view instruction, const ColorImage& rgb, ReasoningBackend& backend,
                                 const ReasoningContext& context, int max_attempts) {
  if (max_attempts < 1) throw Error(ErrorCode::InvalidArgument, "max_attempts must be at least 1");
  PromptPayload payload = build_prompt(instruction, rgb);
  const std::string base_user_text = payload.user_text;
  std::string last_raw, problem;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    payload.user_text = attempt == 0 ? base_user_text : base_user_text + repair_suffix(problem);
    last_raw = backend.complete(payload, context);
    auto outcome = parse_reasoning_response(last_raw);
    if (auto* failure = std::get_if<ParseFailure>(&outcome)) {
      problem = failure->message;
      continue;
    }
    auto result = std::get<ReasoningResult>(std::move(outcome));
    if (lower(trim(result.object)) == kNoObject)
      throw Error(ErrorCode::NoRelevantObject, "no visible object is relevant to \"" + payload.instruction + "\"");
    return result;
  }
  throw Error(ErrorCode::MalformedReasoning, "after " + std::to_string(max_attempts) + " attempts (" + problem +
                                                 "); last reply: " + truncate(last_raw, 500));
}

}  // namespace taskgrasp
