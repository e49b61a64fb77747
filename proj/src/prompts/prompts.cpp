#include "leafbench/prompts.hpp"

#include "leafbench/io.hpp"

#include <algorithm>
#include <cctype>

namespace leafbench::prompts {

namespace {

using ojson = nlohmann::ordered_json;

// Classification request text, assembled as the fragments concatenate.
constexpr std::string_view kClassifyHead = "Analyze the provided image of an ";
constexpr std::string_view kClassifyMiddle =
    " leaf using your computer vision capabilities. Classify the leaf into the most appropriate category based on "
    "its condition, choosing from the predefined list: ";
constexpr std::string_view kClassifyTail =
    ". Provide your final classification in the following JSON format without explanations: "
    "{\"category\": \"chosen_category_name\"}";

// Fine-tune record text: fragments joined by single spaces.
constexpr std::string_view kRecordHead = "Analyze the provided image of an ";
constexpr std::string_view kRecordMiddle =
    " leaf using your computer vision capabilities. Classify the leaf into the most appropriate category based on "
    "its condition, choosing from the predefined list: ";
constexpr std::string_view kRecordTail =
    " Provide your final classification in the following JSON format without explanations: "
    "{\n  \"category\": \"chosen_category_name\" \n}";

std::string ascii_lower(std::string_view text)
{
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string_view trim(std::string_view text)
{
    const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!text.empty() && is_space(text.front())) {
        text.remove_prefix(1);
    }
    while (!text.empty() && is_space(text.back())) {
        text.remove_suffix(1);
    }
    return text;
}

bool is_valid_url(std::string_view url)
{
    if (url.empty()) {
        return false;
    }
    for (unsigned char c : url) {
        if (c <= 0x20 || c == 0x7f) {
            return false;
        }
    }
    if (url.starts_with("data:image/")) {
        return true;
    }
    const auto scheme = url.find("://");
    if (scheme == std::string_view::npos) {
        return true; // relative to the hosting base
    }
    const auto name = url.substr(0, scheme);
    return (name == "http" || name == "https") && scheme + 3 < url.size();
}

// ['a', 'b'] as Python's str() prints a list of plain strings.
std::string python_list(const std::vector<std::string>& items)
{
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) {
            out += ", ";
        }
        out += '\'' + items[i] + '\'';
    }
    out += ']';
    return out;
}

std::string pretty_categories(const std::vector<std::string>& items)
{
    std::string out = "{\n  \"categories\": [\n";
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) {
            out += ", \n";
        }
        out += "    \"" + items[i] + "\"";
    }
    out += " \n  ]\n}";
    return out;
}

std::vector<std::string> sorted_categories(const PromptContext& ctx)
{
    if (ctx.categories.empty()) {
        throw PromptError("prompt context has an empty category list");
    }
    auto categories = ctx.categories;
    std::sort(categories.begin(), categories.end());
    return categories;
}

// End of the balanced object starting at `open`, or npos.
std::size_t matching_brace(std::string_view text, std::size_t open)
{
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (c == '\\') {
                ++i;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) {
                return i;
            }
        }
    }
    return std::string_view::npos;
}

ParsedCategory read_category(const nlohmann::json& object, const std::vector<std::string>& allowed)
{
    auto it = object.find("category");
    if (it == object.end() || !it->is_string()) {
        return {{}, ParseError::missing_category_key};
    }
    const auto wanted = ascii_lower(trim(it->get_ref<const std::string&>()));
    for (const auto& candidate : allowed) {
        if (ascii_lower(candidate) == wanted) {
            return {candidate, ParseError::none};
        }
    }
    return {{}, ParseError::unknown_category};
}

} // namespace

std::string_view to_string(Role role)
{
    return role == Role::user ? "user" : "assistant";
}

nlohmann::ordered_json Message::to_json() const
{
    ojson out;
    out["role"] = std::string(to_string(role));
    if (parts.size() == 1 && std::holds_alternative<TextPart>(parts.front())) {
        out["content"] = std::get<TextPart>(parts.front()).text;
        return out;
    }
    ojson content = ojson::array();
    for (const auto& part : parts) {
        if (const auto* text = std::get_if<TextPart>(&part)) {
            ojson item;
            item["type"] = "text";
            item["text"] = text->text;
            content.push_back(std::move(item));
        } else {
            ojson item;
            item["type"] = "image_url";
            item["image_url"]["url"] = std::get<ImageUrlPart>(part).url;
            content.push_back(std::move(item));
        }
    }
    out["content"] = std::move(content);
    return out;
}

nlohmann::ordered_json MessageSequence::to_json() const
{
    ojson out = ojson::array();
    for (const auto& m : messages) {
        out.push_back(m.to_json());
    }
    return out;
}

MessageSequence MessageSequence::from_json(const nlohmann::json& messages)
{
    if (!messages.is_array()) {
        throw PromptError("messages must be an array");
    }
    MessageSequence seq;
    for (const auto& m : messages) {
        Message msg;
        const auto role = m.value("role", "");
        if (role == "user") {
            msg.role = Role::user;
        } else if (role == "assistant") {
            msg.role = Role::assistant;
        } else {
            throw PromptError("unsupported message role '" + role + "'");
        }
        const auto& content = m.at("content");
        if (content.is_string()) {
            msg.parts.emplace_back(TextPart{content.get<std::string>()});
        } else {
            for (const auto& part : content) {
                const auto type = part.value("type", "");
                if (type == "text") {
                    msg.parts.emplace_back(TextPart{part.at("text").get<std::string>()});
                } else if (type == "image_url") {
                    msg.parts.emplace_back(ImageUrlPart{part.at("image_url").at("url").get<std::string>()});
                } else {
                    throw PromptError("unsupported content part type '" + type + "'");
                }
            }
        }
        seq.messages.push_back(std::move(msg));
    }
    return seq;
}

std::string MessageSequence::text() const
{
    for (const auto& m : messages) {
        if (m.role != Role::user) {
            continue;
        }
        for (const auto& part : m.parts) {
            if (const auto* t = std::get_if<TextPart>(&part)) {
                return t->text;
            }
        }
    }
    return {};
}

std::string MessageSequence::image_url() const
{
    for (const auto& m : messages) {
        for (const auto& part : m.parts) {
            if (const auto* img = std::get_if<ImageUrlPart>(&part)) {
                return img->url;
            }
        }
    }
    return {};
}

PromptContext make_context(dataset::Plant plant, std::string image_url)
{
    return PromptContext{plant, dataset::class_labels(plant), std::move(image_url)};
}

MessageSequence render_classification_prompt(const PromptContext& ctx)
{
    const auto categories = sorted_categories(ctx);
    if (!is_valid_url(ctx.image_url)) {
        throw PromptError("malformed image URL '" + ctx.image_url + "'");
    }
    std::string text(kClassifyHead);
    text += dataset::display_name(ctx.plant);
    text += kClassifyMiddle;
    text += python_list(categories);
    text += kClassifyTail;

    Message msg;
    msg.role = Role::user;
    msg.parts.emplace_back(TextPart{std::move(text)});
    msg.parts.emplace_back(ImageUrlPart{ctx.image_url});
    return MessageSequence{{std::move(msg)}};
}

std::string completion_text(std::string_view label)
{
    return "{\n  \"category\": \"" + std::string(label) + "\" \n}";
}

FineTuneRecord render_finetune_record(const dataset::ImageSample& sample, const PromptContext& ctx)
{
    const auto categories = sorted_categories(ctx);
    if (!sample.public_url) {
        throw PromptError("sample '" + sample.id + "' has no public URL");
    }
    if (!is_valid_url(*sample.public_url)) {
        throw PromptError("sample '" + sample.id + "' has a malformed URL '" + *sample.public_url + "'");
    }
    if (std::find(categories.begin(), categories.end(), sample.label) == categories.end()) {
        throw PromptError("label '" + sample.label + "' of sample '" + sample.id + "' is not a prompt category");
    }

    std::string text(kRecordHead);
    text += dataset::to_string(ctx.plant);
    text += kRecordMiddle;
    text += pretty_categories(categories);
    text += kRecordTail;

    FineTuneRecord record;
    record.request.messages.push_back(Message{Role::user, {TextPart{std::move(text)}}});
    record.request.messages.push_back(Message{Role::user, {ImageUrlPart{*sample.public_url}}});
    record.completion = Message{Role::assistant, {TextPart{completion_text(sample.label)}}};
    return record;
}

std::string FineTuneRecord::to_jsonl_line() const
{
    ojson messages = request.to_json();
    messages.push_back(completion.to_json());
    ojson root;
    root["messages"] = std::move(messages);
    return io::dump_spaced(root);
}

void write_jsonl(const std::vector<FineTuneRecord>& records, const std::filesystem::path& dest)
{
    if (records.empty()) {
        throw PromptError("refusing to write an empty JSONL file");
    }
    std::string text;
    for (const auto& r : records) {
        text += r.to_jsonl_line();
        text += '\n';
    }
    io::write_text_atomic(dest, text);
}

std::string_view to_string(ParseError error)
{
    switch (error) {
    case ParseError::none:
        return "none";
    case ParseError::no_json_found:
        return "NoJsonFound";
    case ParseError::missing_category_key:
        return "MissingCategoryKey";
    case ParseError::unknown_category:
        return "UnknownCategory";
    }
    return "none";
}

ParsedCategory parse_category_response(std::string_view raw, const std::vector<std::string>& allowed, bool strict)
{
    if (strict) {
        auto value = nlohmann::json::parse(trim(raw), nullptr, false);
        if (value.is_discarded() || !value.is_object()) {
            return {{}, ParseError::no_json_found};
        }
        return read_category(value, allowed);
    }
    for (std::size_t open = raw.find('{'); open != std::string_view::npos; open = raw.find('{', open + 1)) {
        const auto close = matching_brace(raw, open);
        if (close == std::string_view::npos) {
            continue;
        }
        auto value = nlohmann::json::parse(raw.substr(open, close - open + 1), nullptr, false);
        if (!value.is_discarded() && value.is_object()) {
            return read_category(value, allowed);
        }
    }
    return {{}, ParseError::no_json_found};
}

std::vector<std::string> prompt_categories(std::string_view prompt_text)
{
    std::vector<std::string> out;
    const auto marker = prompt_text.find("predefined list:");
    if (marker == std::string_view::npos) {
        return out;
    }
    const auto open = prompt_text.find('[', marker);
    const auto close = prompt_text.find(']', open == std::string_view::npos ? marker : open);
    if (open == std::string_view::npos || close == std::string_view::npos) {
        return out;
    }
    const auto body = prompt_text.substr(open + 1, close - open - 1);
    for (std::size_t i = 0; i < body.size(); ++i) {
        const char quote = body[i];
        if (quote != '\'' && quote != '"') {
            continue;
        }
        const auto end = body.find(quote, i + 1);
        if (end == std::string_view::npos) {
            break;
        }
        out.emplace_back(body.substr(i + 1, end - i - 1));
        i = end;
    }
    return out;
}

} // namespace leafbench::prompts
