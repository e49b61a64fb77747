#include "leafbench/backends.hpp"

#include "leafbench/io.hpp"

#include <httplib.h>

#include <cstdlib>

namespace leafbench::backends {

using nlohmann::json;

std::string api_key_from_env()
{
    const char* key = std::getenv("LEAFBENCH_API_KEY");
    if (key == nullptr || *key == '\0') {
        throw BackendError("LEAFBENCH_API_KEY is not set");
    }
    return key;
}

struct RemoteBackend::Impl {
    RemoteConfig config;
    std::mutex mutex;
    std::map<std::string, std::size_t> records_by_file;

    std::unique_ptr<httplib::Client> client() const
    {
        auto cli = std::make_unique<httplib::Client>(config.base_url);
        cli->set_connection_timeout(config.timeout);
        cli->set_read_timeout(config.timeout);
        cli->set_write_timeout(config.timeout);
        cli->set_bearer_token_auth(config.api_key);
        return cli;
    }

    static json check(const httplib::Result& res, const std::string& what)
    {
        if (!res) {
            throw TransportError(what + ": " + httplib::to_string(res.error()));
        }
        if (res->status == 429 || res->status >= 500) {
            throw TransportError(what + ": HTTP " + std::to_string(res->status));
        }
        auto body = json::parse(res->body, nullptr, false);
        if (res->status >= 400) {
            std::string message = res->body;
            if (!body.is_discarded() && body.contains("error") && body["error"].is_object()) {
                message = body["error"].value("message", message);
            }
            throw BackendError(what + ": HTTP " + std::to_string(res->status) + ": " + message);
        }
        if (body.is_discarded()) {
            throw TransportError(what + ": response is not JSON");
        }
        return body;
    }

    std::string upload(const DataFile& file)
    {
        const auto records = validate_data_file(file);
        httplib::MultipartFormDataItems items{
            {"purpose", "fine-tune", "", ""},
            {"file", io::read_text(file.path), file.path.filename().string(), "application/jsonl"},
        };
        auto body = check(client()->Post("/v1/files", items), "upload " + file.path.filename().string());
        auto id = body.at("id").get<std::string>();
        std::lock_guard lock(mutex);
        records_by_file[id] = records;
        return id;
    }

    static JobStatus map_status(const std::string& status)
    {
        if (status == "validating_files" || status == "queued") {
            return JobStatus::pending;
        }
        if (status == "running") {
            return JobStatus::running;
        }
        if (status == "succeeded") {
            return JobStatus::succeeded;
        }
        return JobStatus::failed;
    }

    FineTuneJob to_job(const json& body)
    {
        FineTuneJob job;
        job.job_id = body.at("id").get<std::string>();
        job.base_model = body.value("model", "");
        job.status = map_status(body.value("status", "failed"));
        if (body.contains("fine_tuned_model") && body["fine_tuned_model"].is_string()) {
            job.output_model = body["fine_tuned_model"].get<std::string>();
        }
        if (body.contains("hyperparameters") && body["hyperparameters"].is_object()) {
            const auto& hp = body["hyperparameters"];
            if (hp.contains("n_epochs") && hp["n_epochs"].is_number_integer()) {
                job.hyperparams.epochs = hp["n_epochs"].get<int>();
            }
            if (hp.contains("batch_size") && hp["batch_size"].is_number_integer()) {
                job.hyperparams.batch_size = hp["batch_size"].get<int>();
            }
            if (hp.contains("learning_rate_multiplier") && hp["learning_rate_multiplier"].is_number()) {
                job.hyperparams.learning_rate = hp["learning_rate_multiplier"].get<double>();
            }
        }
        if (body.contains("trained_tokens") && body["trained_tokens"].is_number_integer()) {
            job.trained_tokens = body["trained_tokens"].get<long long>();
        }
        if (body.contains("error") && body["error"].is_object()) {
            job.error = body["error"].value("message", "");
        }
        if (body.contains("created_at") && body.contains("finished_at") && body["finished_at"].is_number()) {
            job.duration_s = body["finished_at"].get<double>() - body["created_at"].get<double>();
        }
        if (body.contains("training_file") && body["training_file"].is_string()) {
            std::lock_guard lock(mutex);
            auto it = records_by_file.find(body["training_file"].get<std::string>());
            if (it != records_by_file.end()) {
                job.submitted_samples = it->second;
            }
        }
        return job;
    }

    void fill_results(FineTuneJob& job)
    {
        auto cli = client();
        const auto base = "/v1/fine_tuning/jobs/" + job.job_id;
        const auto checkpoints = check(cli->Get(base + "/checkpoints"), "checkpoints of " + job.job_id);
        long long best_step = -1;
        for (const auto& cp : checkpoints.value("data", json::array())) {
            const auto step = cp.value("step_number", 0LL);
            if (step > best_step && cp.contains("metrics")) {
                best_step = step;
                const auto& m = cp["metrics"];
                job.train_loss = m.value("train_loss", 0.0);
                job.full_validation_loss = m.value("full_valid_loss", m.value("valid_loss", 0.0));
            }
        }
        const auto events = check(cli->Get(base + "/events?limit=1000"), "events of " + job.job_id);
        for (const auto& ev : events.value("data", json::array())) {
            if (ev.contains("data") && ev["data"].is_object() && ev["data"].contains("flagged_sample")) {
                const auto& d = ev["data"];
                job.flagged_samples.push_back({d["flagged_sample"].get<std::string>(), d.value("reason", ev.value("message", ""))});
            }
        }
        if (job.submitted_samples >= job.flagged_samples.size()) {
            job.trained_samples = job.submitted_samples - job.flagged_samples.size();
        }
        if (job.trained_tokens) {
            if (const auto* price = find_price(job.base_model)) {
                job.cost_usd = static_cast<double>(*job.trained_tokens) / 1000.0 * price->training_usd_per_1k;
            }
        }
    }

    const ModelPrice* find_price(const std::string& model) const
    {
        const ModelPrice* best = nullptr;
        std::size_t best_len = 0;
        for (const auto& [prefix, price] : config.pricing) {
            if (model.rfind(prefix, 0) == 0 && (best == nullptr || prefix.size() > best_len)) {
                best = &price;
                best_len = prefix.size();
            }
        }
        if (best == nullptr && model.rfind("ft:", 0) == 0) {
            return find_price(model.substr(3));
        }
        return best;
    }
};

RemoteBackend::RemoteBackend(RemoteConfig config) : impl_(std::make_unique<Impl>())
{
    if (config.base_url.empty()) {
        throw BackendError("remote backend needs a base URL");
    }
    while (config.base_url.back() == '/') {
        config.base_url.pop_back();
    }
    impl_->config = std::move(config);
}

RemoteBackend::~RemoteBackend() = default;

const ModelPrice* RemoteBackend::price_for(const std::string& model_id) const
{
    return impl_->find_price(model_id);
}

UploadedData RemoteBackend::upload_training_data(const DataFile& train, const DataFile& validation)
{
    if (train.format != DataFormat::jsonl || validation.format != DataFormat::jsonl) {
        throw BackendError("remote fine-tuning takes JSONL files");
    }
    UploadedData data;
    data.train.records = validate_data_file(train);
    data.validation.records = validate_data_file(validation);
    data.train.id = impl_->upload(train);
    data.validation.id = impl_->upload(validation);
    return data;
}

FineTuneJob RemoteBackend::create_finetune(const FineTuneRequest& request)
{
    json body{{"model", request.base_model},
              {"training_file", request.data.train.id},
              {"validation_file", request.data.validation.id}};
    if (request.hyperparams) {
        request.hyperparams->validate();
        json hp{{"n_epochs", request.hyperparams->epochs}, {"batch_size", request.hyperparams->batch_size}};
        if (request.hyperparams->learning_rate) {
            hp["learning_rate_multiplier"] = *request.hyperparams->learning_rate;
        }
        body["hyperparameters"] = hp;
    }
    httplib::Headers headers;
    if (!request.idempotency_key.empty()) {
        headers.emplace("Idempotency-Key", request.idempotency_key);
    }
    auto res = impl_->client()->Post("/v1/fine_tuning/jobs", headers, body.dump(), "application/json");
    auto job = impl_->to_job(Impl::check(res, "create fine-tune job"));
    if (job.submitted_samples == 0) {
        job.submitted_samples = request.data.train.records;
    }
    return job;
}

FineTuneJob RemoteBackend::poll_job(const std::string& job_id)
{
    auto res = impl_->client()->Get("/v1/fine_tuning/jobs/" + job_id);
    auto job = impl_->to_job(Impl::check(res, "poll " + job_id));
    if (job.status == JobStatus::succeeded) {
        impl_->fill_results(job);
    }
    return job;
}

void RemoteBackend::cancel_job(const std::string& job_id)
{
    auto res = impl_->client()->Post("/v1/fine_tuning/jobs/" + job_id + "/cancel", "", "application/json");
    Impl::check(res, "cancel " + job_id);
}

ClassifyResult RemoteBackend::classify(const std::string& model_id, const prompts::MessageSequence& prompt)
{
    const json body{{"model", model_id},
                    {"messages", json::parse(prompt.to_json().dump())},
                    {"temperature", impl_->config.temperature},
                    {"max_tokens", impl_->config.max_tokens}};
    const auto started = std::chrono::steady_clock::now();
    auto res = impl_->client()->Post("/v1/chat/completions", body.dump(), "application/json");
    const auto reply = Impl::check(res, "chat completion");

    ClassifyResult result;
    result.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const auto& choices = reply.value("choices", json::array());
    if (!choices.empty() && choices[0].contains("message")) {
        const auto& content = choices[0]["message"]["content"];
        if (content.is_string()) {
            result.raw_text = content.get<std::string>();
        }
    }
    if (reply.contains("usage") && reply["usage"].is_object()) {
        if (const auto* price = impl_->find_price(model_id)) {
            const auto& usage = reply["usage"];
            result.cost_usd = usage.value("prompt_tokens", 0.0) / 1000.0 * price->input_usd_per_1k +
                              usage.value("completion_tokens", 0.0) / 1000.0 * price->output_usd_per_1k;
        }
    }
    parse_into(result, prompt);
    return result;
}

} // namespace leafbench::backends
