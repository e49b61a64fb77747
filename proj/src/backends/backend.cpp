#include "leafbench/backends.hpp"

#include "leafbench/csv.hpp"
#include "leafbench/dataset.hpp"
#include "leafbench/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

namespace leafbench::backends {

namespace fs = std::filesystem;
using nlohmann::json;

DataValidationError::DataValidationError(const fs::path& file, std::size_t line, const std::string& problem)
    : BackendError(file.string() + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + problem),
      line_(line)
{
}

void HyperParams::validate() const
{
    if (epochs < 1) {
        throw BackendError("epochs must be at least 1, got " + std::to_string(epochs));
    }
    if (batch_size < 1) {
        throw BackendError("batch_size must be at least 1, got " + std::to_string(batch_size));
    }
    if (learning_rate && !(*learning_rate > 0.0 && std::isfinite(*learning_rate))) {
        throw BackendError("learning_rate must be positive");
    }
}

json HyperParams::to_json() const
{
    json j{{"epochs", epochs}, {"batch_size", batch_size}};
    j["learning_rate"] = learning_rate ? json(*learning_rate) : json(nullptr);
    return j;
}

HyperParams HyperParams::from_json(const json& j)
{
    HyperParams hp;
    hp.epochs = j.at("epochs").get<int>();
    hp.batch_size = j.at("batch_size").get<int>();
    if (j.contains("learning_rate") && !j["learning_rate"].is_null()) {
        hp.learning_rate = j["learning_rate"].get<double>();
    }
    return hp;
}

std::string_view to_string(JobStatus status)
{
    switch (status) {
    case JobStatus::pending:
        return "pending";
    case JobStatus::running:
        return "running";
    case JobStatus::succeeded:
        return "succeeded";
    case JobStatus::failed:
        return "failed";
    }
    return "failed";
}

JobStatus parse_job_status(std::string_view text)
{
    for (auto s : {JobStatus::pending, JobStatus::running, JobStatus::succeeded, JobStatus::failed}) {
        if (text == to_string(s)) {
            return s;
        }
    }
    throw BackendError("unknown job status '" + std::string(text) + "'");
}

bool is_terminal(JobStatus status)
{
    return status == JobStatus::succeeded || status == JobStatus::failed;
}

json FineTuneJob::to_json() const
{
    json flagged = json::array();
    for (const auto& f : flagged_samples) {
        flagged.push_back({{"key", f.key}, {"reason", f.reason}});
    }
    json curve = json::array();
    for (const auto& e : epochs) {
        json item{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}};
        item["val_accuracy"] = e.val_accuracy ? json(*e.val_accuracy) : json(nullptr);
        curve.push_back(std::move(item));
    }
    json j{
        {"job_id", job_id},
        {"base_model", base_model},
        {"status", to_string(status)},
        {"output_model", output_model ? json(*output_model) : json(nullptr)},
        {"hyperparams", hyperparams.to_json()},
        {"train_loss", train_loss},
        {"full_validation_loss", full_validation_loss},
        {"trained_tokens", trained_tokens ? json(*trained_tokens) : json(nullptr)},
        {"duration_s", duration_s},
        {"cost_usd", cost_usd},
        {"submitted_samples", submitted_samples},
        {"trained_samples", trained_samples},
        {"flagged_samples", flagged},
        {"epochs", curve},
        {"error", error},
    };
    return j;
}

FineTuneJob FineTuneJob::from_json(const json& j)
{
    FineTuneJob job;
    job.job_id = j.at("job_id").get<std::string>();
    job.base_model = j.at("base_model").get<std::string>();
    job.status = parse_job_status(j.at("status").get<std::string>());
    if (!j.at("output_model").is_null()) {
        job.output_model = j["output_model"].get<std::string>();
    }
    job.hyperparams = HyperParams::from_json(j.at("hyperparams"));
    job.train_loss = j.at("train_loss").get<double>();
    job.full_validation_loss = j.at("full_validation_loss").get<double>();
    if (!j.at("trained_tokens").is_null()) {
        job.trained_tokens = j["trained_tokens"].get<long long>();
    }
    job.duration_s = j.at("duration_s").get<double>();
    job.cost_usd = j.at("cost_usd").get<double>();
    job.submitted_samples = j.at("submitted_samples").get<std::size_t>();
    job.trained_samples = j.at("trained_samples").get<std::size_t>();
    for (const auto& f : j.at("flagged_samples")) {
        job.flagged_samples.push_back({f.at("key").get<std::string>(), f.at("reason").get<std::string>()});
    }
    for (const auto& e : j.at("epochs")) {
        EpochMetrics m;
        m.epoch = e.at("epoch").get<int>();
        m.train_loss = e.at("train_loss").get<double>();
        m.val_loss = e.at("val_loss").get<double>();
        if (!e.at("val_accuracy").is_null()) {
            m.val_accuracy = e["val_accuracy"].get<double>();
        }
        job.epochs.push_back(m);
    }
    job.error = j.value("error", "");
    return job;
}

namespace {

std::vector<std::string> read_lines(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataValidationError(path, 0, "cannot open file");
    }
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        lines.push_back(std::move(line));
    }
    return lines;
}

std::string image_url_of(const json& record)
{
    for (const auto& message : record.at("messages")) {
        const auto& content = message.at("content");
        if (!content.is_array()) {
            continue;
        }
        for (const auto& part : content) {
            if (part.value("type", "") == "image_url") {
                return part.at("image_url").at("url").get<std::string>();
            }
        }
    }
    return {};
}

// Checks one JSONL record; returns its key or an error description.
std::string check_record(const json& record, std::string& problem)
{
    if (!record.is_object() || !record.contains("messages") || !record["messages"].is_array()) {
        problem = "record has no \"messages\" array";
        return {};
    }
    const auto& messages = record["messages"];
    if (messages.size() < 2) {
        problem = "record needs a prompt and a completion";
        return {};
    }
    try {
        const auto seq = prompts::MessageSequence::from_json(messages);
        if (seq.messages.back().role != prompts::Role::assistant) {
            problem = "last message is not the assistant completion";
            return {};
        }
    } catch (const std::exception& e) {
        problem = e.what();
        return {};
    }
    auto url = image_url_of(record);
    if (url.empty()) {
        problem = "record has no image_url part";
    }
    return url;
}

std::vector<std::string> scan_jsonl(const fs::path& path)
{
    const auto lines = read_lines(path);
    std::vector<std::string> keys;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) {
            if (i + 1 == lines.size()) {
                break;
            }
            throw DataValidationError(path, i + 1, "empty line");
        }
        const auto record = json::parse(lines[i], nullptr, false);
        if (record.is_discarded()) {
            throw DataValidationError(path, i + 1, "not valid JSON");
        }
        std::string problem;
        auto key = check_record(record, problem);
        if (!problem.empty()) {
            throw DataValidationError(path, i + 1, problem);
        }
        keys.push_back(std::move(key));
    }
    if (keys.empty()) {
        throw DataValidationError(path, 0, "file has no records");
    }
    return keys;
}

std::vector<std::string> scan_manifest(const fs::path& path)
{
    std::vector<csv::Row> rows;
    try {
        rows = csv::parse(io::read_text(path));
    } catch (const std::exception& e) {
        throw DataValidationError(path, 0, e.what());
    }
    if (rows.empty() || csv::format_row(rows.front()) != std::string(dataset::kManifestHeader) + "\n") {
        throw DataValidationError(path, 1, "missing or unexpected manifest header");
    }
    std::vector<std::string> keys;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.size() != 8) {
            throw DataValidationError(path, i + 1, "expected 8 fields, found " + std::to_string(row.size()));
        }
        try {
            const auto plant = dataset::parse_plant(row[1]);
            const auto& labels = dataset::class_labels(plant);
            if (std::find(labels.begin(), labels.end(), row[3]) == labels.end()) {
                throw std::invalid_argument("unknown label '" + row[3] + "'");
            }
        } catch (const std::exception& e) {
            throw DataValidationError(path, i + 1, e.what());
        }
        if (row[0].empty() || row[6].empty()) {
            throw DataValidationError(path, i + 1, "sample id and local path are required");
        }
        keys.push_back(row[0]);
    }
    if (keys.empty()) {
        throw DataValidationError(path, 0, "file has no records");
    }
    return keys;
}

} // namespace

std::vector<std::string> data_file_keys(const DataFile& file)
{
    if (!fs::exists(file.path)) {
        throw DataValidationError(file.path, 0, "file does not exist");
    }
    return file.format == DataFormat::jsonl ? scan_jsonl(file.path) : scan_manifest(file.path);
}

std::size_t validate_data_file(const DataFile& file)
{
    return data_file_keys(file).size();
}

void parse_into(ClassifyResult& result, const prompts::MessageSequence& prompt)
{
    const auto parsed = prompts::parse_category_response(result.raw_text, prompts::prompt_categories(prompt.text()));
    result.parse_error = parsed.error;
    if (parsed.ok()) {
        result.parsed_category = parsed.category;
    } else {
        result.parsed_category.reset();
    }
}

RetryingBackend::RetryingBackend(std::shared_ptr<Backend> inner, RetryPolicy policy)
    : inner_(std::move(inner)), policy_(policy)
{
    if (policy_.max_attempts < 1) {
        throw BackendError("retry policy needs at least one attempt");
    }
}

template <typename F>
auto RetryingBackend::with_retries(F&& call) -> decltype(call())
{
    for (int attempt = 1;; ++attempt) {
        try {
            return call();
        } catch (const TransportError&) {
            if (attempt >= policy_.max_attempts) {
                throw;
            }
            std::this_thread::sleep_for(policy_.base_delay * (1 << (attempt - 1)));
        }
    }
}

UploadedData RetryingBackend::upload_training_data(const DataFile& train, const DataFile& validation)
{
    return with_retries([&] { return inner_->upload_training_data(train, validation); });
}

FineTuneJob RetryingBackend::create_finetune(const FineTuneRequest& request)
{
    return with_retries([&] { return inner_->create_finetune(request); });
}

FineTuneJob RetryingBackend::poll_job(const std::string& job_id)
{
    return with_retries([&] { return inner_->poll_job(job_id); });
}

void RetryingBackend::cancel_job(const std::string& job_id)
{
    with_retries([&] { inner_->cancel_job(job_id); });
}

ClassifyResult RetryingBackend::classify(const std::string& model_id, const prompts::MessageSequence& prompt)
{
    std::string last_error;
    for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt) {
        try {
            auto result = inner_->classify(model_id, prompt);
            result.attempts = attempt;
            return result;
        } catch (const TransportError& e) {
            last_error = e.what();
            if (attempt < policy_.max_attempts) {
                std::this_thread::sleep_for(policy_.base_delay * (1 << (attempt - 1)));
            }
        }
    }
    ClassifyResult failed;
    failed.attempts = policy_.max_attempts;
    failed.transport_error = last_error;
    failed.parse_error = prompts::ParseError::no_json_found;
    return failed;
}

} // namespace leafbench::backends
