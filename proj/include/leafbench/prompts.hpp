#pragma once

#include "leafbench/dataset.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace leafbench::prompts {

/// Bumped whenever either template constant changes; goldens pin both.
inline constexpr int kTemplateVersion = 1;

class PromptError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Role { user, assistant };
std::string_view to_string(Role role);

struct TextPart {
    std::string text;
    bool operator==(const TextPart&) const = default;
};

struct ImageUrlPart {
    std::string url;
    bool operator==(const ImageUrlPart&) const = default;
};

using Part = std::variant<TextPart, ImageUrlPart>;

/// A message whose only part is text serializes its content as a plain string;
/// anything else serializes as a typed-part array.
struct Message {
    Role role = Role::user;
    std::vector<Part> parts;

    bool operator==(const Message&) const = default;
    nlohmann::ordered_json to_json() const;
};

struct MessageSequence {
    std::vector<Message> messages;

    bool operator==(const MessageSequence&) const = default;
    /// The chat-completions "messages" array.
    nlohmann::ordered_json to_json() const;
    static MessageSequence from_json(const nlohmann::json& messages);

    /// First text part of the first user message.
    std::string text() const;
    /// First image URL anywhere in the sequence, empty when absent.
    std::string image_url() const;
};

struct PromptContext {
    dataset::Plant plant = dataset::Plant::apple;
    std::vector<std::string> categories;
    std::string image_url;
};

/// Context with the plant's class list, sorted.
PromptContext make_context(dataset::Plant plant, std::string image_url);

struct FineTuneRecord {
    MessageSequence request;
    Message completion;

    /// One JSONL line (no trailing newline).
    std::string to_jsonl_line() const;
};

/// Single user message: the classification text and the image URL.
MessageSequence render_classification_prompt(const PromptContext& ctx);

/// User text message, user image message, assistant completion.
FineTuneRecord render_finetune_record(const dataset::ImageSample& sample, const PromptContext& ctx);

/// `{\n  "category": "<label>" \n}`
std::string completion_text(std::string_view label);

/// One record per line, LF-terminated. Throws PromptError on an empty list and
/// std::runtime_error when the destination cannot be written.
void write_jsonl(const std::vector<FineTuneRecord>& records, const std::filesystem::path& dest);

enum class ParseError { none, no_json_found, missing_category_key, unknown_category };
std::string_view to_string(ParseError error);

struct ParsedCategory {
    std::string category; // canonical spelling from the allowed list
    ParseError error = ParseError::none;

    bool ok() const noexcept { return error == ParseError::none; }
};

/// Finds the first balanced {...} object that parses as JSON, reads its
/// "category" string and matches it case-insensitively against `allowed`.
/// In strict mode the whole response, trimmed, must be that object.
/// Never throws for any input bytes.
ParsedCategory parse_category_response(std::string_view raw, const std::vector<std::string>& allowed,
                                       bool strict = false);

/// Recovers the category list interpolated into a rendered prompt (either
/// template). Empty when none is found.
std::vector<std::string> prompt_categories(std::string_view prompt_text);

} // namespace leafbench::prompts
