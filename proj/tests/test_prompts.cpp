#include "fixtures.hpp"

#include "leafbench/prompts.hpp"
#include "leafbench/rng.hpp"

#include <doctest.h>

#include <fstream>

using namespace leafbench;
using namespace leafbench::prompts;
using leafbench::testing::TempDir;

namespace {

std::string golden(const std::string& name)
{
    return testing::read_file(std::filesystem::path(LEAFBENCH_GOLDEN_DIR) / name);
}

const std::vector<std::string> kApple{"black-rot", "healthy", "rust", "scab"};

} // namespace

TEST_CASE("classification prompt matches the golden text for both plants")
{
    const auto apple = render_classification_prompt(make_context(dataset::Plant::apple, "https://x/a.JPG"));
    CHECK(apple.text() == golden("apple_prompt.txt"));
    const auto corn = render_classification_prompt(make_context(dataset::Plant::corn, "https://x/c.JPG"));
    CHECK(corn.text() == golden("corn_prompt.txt"));

    REQUIRE(apple.messages.size() == 1);
    CHECK(apple.messages[0].role == Role::user);
    CHECK(apple.image_url() == "https://x/a.JPG");
    const auto j = apple.to_json();
    CHECK(j[0]["content"][0]["type"] == "text");
    CHECK(j[0]["content"][1]["type"] == "image_url");
    CHECK(j[0]["content"][1]["image_url"]["url"] == "https://x/a.JPG");
}

TEST_CASE("category order in the context does not change the prompt")
{
    auto ctx = make_context(dataset::Plant::apple, "https://x/a.JPG");
    auto shuffled = ctx;
    std::reverse(shuffled.categories.begin(), shuffled.categories.end());
    CHECK(render_classification_prompt(ctx) == render_classification_prompt(shuffled));
    CHECK(render_classification_prompt(ctx).to_json().dump() == render_classification_prompt(ctx).to_json().dump());
}

TEST_CASE("fine-tune record matches the golden JSONL line")
{
    dataset::ImageSample s;
    s.id = "apple/black-rot/black-rot-256.JPG";
    s.plant = dataset::Plant::apple;
    s.label = "black-rot";
    s.public_url = "256/black-rot/black-rot-256.JPG";
    auto line = golden("fig5_record.jsonl");
    while (!line.empty() && line.back() == '\n') {
        line.pop_back();
    }
    const auto record = render_finetune_record(s, make_context(dataset::Plant::apple, *s.public_url));
    CHECK(record.to_jsonl_line() == line);

    const auto parsed = nlohmann::json::parse(line);
    CHECK(parsed["messages"].size() == 3);
    CHECK(parsed["messages"][2]["role"] == "assistant");
}

TEST_CASE("fine-tune record validation")
{
    dataset::ImageSample s;
    s.id = "apple/rust/r.JPG";
    s.label = "rust";
    const auto ctx = make_context(dataset::Plant::apple, "");
    CHECK_THROWS_AS(render_finetune_record(s, ctx), PromptError);
    s.public_url = "https://x/rust/r.JPG";
    CHECK_NOTHROW(render_finetune_record(s, ctx));
    s.label = "mildew";
    CHECK_THROWS_AS(render_finetune_record(s, ctx), PromptError);
}

TEST_CASE("prompt rendering rejects bad contexts")
{
    auto ctx = make_context(dataset::Plant::corn, "https://x/c.JPG");
    auto empty = ctx;
    empty.categories.clear();
    CHECK_THROWS_AS(render_classification_prompt(empty), PromptError);
    auto spaced = ctx;
    spaced.image_url = "https://x/a b.JPG";
    CHECK_THROWS_AS(render_classification_prompt(spaced), PromptError);
    auto scheme = ctx;
    scheme.image_url = "ftp://x/c.JPG";
    CHECK_THROWS_AS(render_classification_prompt(scheme), PromptError);
    auto control = ctx;
    control.image_url = "https://x/c\n.JPG";
    CHECK_THROWS_AS(render_classification_prompt(control), PromptError);
}

TEST_CASE("completion text renders then parses back to the label")
{
    for (auto plant : {dataset::Plant::apple, dataset::Plant::corn}) {
        const auto& labels = dataset::class_labels(plant);
        for (const auto& label : labels) {
            const auto parsed = parse_category_response(completion_text(label), labels, true);
            CHECK(parsed.ok());
            CHECK(parsed.category == label);
        }
    }
}

TEST_CASE("prompt categories round trip through both templates")
{
    const auto ctx = make_context(dataset::Plant::corn, "https://x/c.JPG");
    CHECK(prompt_categories(render_classification_prompt(ctx).text()) == ctx.categories);

    dataset::ImageSample s;
    s.label = "rust";
    s.public_url = "https://x/c.JPG";
    CHECK(prompt_categories(render_finetune_record(s, ctx).request.text()) == ctx.categories);
    CHECK(prompt_categories("no list here").empty());
}

TEST_CASE("message sequences survive JSON round trips")
{
    dataset::ImageSample s;
    s.label = "scab";
    s.public_url = "https://x/s.JPG";
    const auto record = render_finetune_record(s, make_context(dataset::Plant::apple, ""));
    CHECK(MessageSequence::from_json(record.request.to_json()) == record.request);
    const auto prompt = render_classification_prompt(make_context(dataset::Plant::apple, "https://x/s.JPG"));
    CHECK(MessageSequence::from_json(prompt.to_json()) == prompt);
    CHECK_THROWS(MessageSequence::from_json(nlohmann::json::parse(R"([{"role":"wizard","content":"x"}])")));
}

TEST_CASE("response parser cases")
{
    struct Case {
        std::string raw;
        ParseError error;
        std::string category;
    };
    const std::vector<Case> cases{
        {R"({"category": "rust"})", ParseError::none, "rust"},
        {"Sure! Here it is:\n```json\n{\"category\": \"Black-Rot \"}\n```\nHope that helps.", ParseError::none,
         "black-rot"},
        {R"(First {not json} then {"category": "scab"})", ParseError::none, "scab"},
        {R"({"note": "a } inside a string", "category": "healthy"})", ParseError::none, "healthy"},
        {R"({"label": "rust"})", ParseError::missing_category_key, ""},
        {R"({"category": 3})", ParseError::missing_category_key, ""},
        {R"({"category": "mildew"})", ParseError::unknown_category, ""},
        {"I cannot classify this image.", ParseError::no_json_found, ""},
        {"", ParseError::no_json_found, ""},
        {"{{{{", ParseError::no_json_found, ""},
    };
    for (const auto& c : cases) {
        CAPTURE(c.raw);
        const auto parsed = parse_category_response(c.raw, kApple);
        CHECK(parsed.error == c.error);
        CHECK(parsed.category == c.category);
    }
    CHECK(to_string(ParseError::no_json_found) == "NoJsonFound");
    CHECK(to_string(ParseError::missing_category_key) == "MissingCategoryKey");
    CHECK(to_string(ParseError::unknown_category) == "UnknownCategory");
}

TEST_CASE("strict parsing requires the whole response to be the object")
{
    CHECK(parse_category_response("  {\"category\": \"rust\"}\n", kApple, true).ok());
    CHECK(parse_category_response("Answer: {\"category\": \"rust\"}", kApple, true).error ==
          ParseError::no_json_found);
    CHECK(parse_category_response("Answer: {\"category\": \"rust\"}", kApple, false).ok());
}

TEST_CASE("fuzz: valid JSON embedded in arbitrary prose always parses")
{
    Rng rng(2024);
    const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ABC.,:;!?\n\t-_'()[]0123456789";
    for (int i = 0; i < 1000; ++i) {
        auto prose = [&] {
            std::string s;
            const auto n = rng.below(80);
            for (std::uint64_t k = 0; k < n; ++k) {
                s += alphabet[rng.below(alphabet.size())];
            }
            return s;
        };
        const auto& label = kApple[rng.below(kApple.size())];
        const auto raw = prose() + completion_text(label) + prose();
        const auto parsed = parse_category_response(raw, kApple);
        CAPTURE(raw);
        CHECK(parsed.ok());
        CHECK(parsed.category == label);
    }
}

TEST_CASE("fuzz: arbitrary bytes never throw")
{
    Rng rng(99);
    const std::string structural = "{}\"\\:, category rust \x01\xff\xc3";
    for (int i = 0; i < 5000; ++i) {
        std::string raw;
        const auto n = rng.below(120);
        for (std::uint64_t k = 0; k < n; ++k) {
            raw += rng.below(2) == 0 ? static_cast<char>(rng.below(256)) : structural[rng.below(structural.size())];
        }
        ParsedCategory parsed;
        CHECK_NOTHROW(parsed = parse_category_response(raw, kApple));
        if (parsed.ok()) {
            CHECK(std::find(kApple.begin(), kApple.end(), parsed.category) != kApple.end());
        }
    }
}

TEST_CASE("write_jsonl writes one parseable record per line")
{
    TempDir dir;
    const auto set = testing::synthetic_curated(dataset::Plant::apple);
    const auto ctx = make_context(dataset::Plant::apple, "");
    std::vector<FineTuneRecord> records;
    for (const auto& s : set.samples_in(set.split.train)) {
        records.push_back(render_finetune_record(s, ctx));
    }
    write_jsonl(records, dir / "train.jsonl");

    std::ifstream in(dir / "train.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        const auto seq = MessageSequence::from_json(j["messages"]);
        REQUIRE(seq.messages.size() == 3);
        const auto label = parse_category_response(std::get<TextPart>(seq.messages[2].parts[0]).text, kApple, true);
        CHECK(label.ok());
        CHECK(label.category == set.manifest.find(set.split.train[n])->label);
        ++n;
    }
    CHECK(n == 512);
    const auto text = testing::read_file(dir / "train.jsonl");
    CHECK(text.back() == '\n');

    CHECK_THROWS_AS(write_jsonl({}, dir / "empty.jsonl"), PromptError);
    CHECK_THROWS(write_jsonl(records, dir / "train.jsonl/sub.jsonl"));
}
