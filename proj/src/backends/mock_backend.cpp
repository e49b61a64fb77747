#include "leafbench/backends.hpp"

#include "leafbench/io.hpp"
#include "leafbench/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace leafbench::backends {

namespace {

std::string hex(std::uint64_t value, int digits)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return std::string(buf + 16 - digits);
}

double hashed_unit(const std::string& text)
{
    std::uint64_t state = stable_hash(text);
    return unit_interval(splitmix64(state));
}

// Label folder of an image URL: .../<label>/<file>.
std::string label_from_url(const std::string& url)
{
    const auto slash = url.rfind('/');
    if (slash == std::string::npos || slash == 0) {
        return {};
    }
    const auto start = url.rfind('/', slash - 1);
    return url.substr(start == std::string::npos ? 0 : start + 1, slash - (start == std::string::npos ? 0 : start + 1));
}

std::string root_model(const std::string& model_id)
{
    if (model_id.rfind("ft:", 0) != 0) {
        return model_id;
    }
    const auto end = model_id.find(':', 3);
    return model_id.substr(3, end == std::string::npos ? std::string::npos : end - 3);
}

} // namespace

MockBackend::MockBackend(MockConfig config) : config_(std::move(config))
{
    if (config_.base_accuracy < 0.0 || config_.base_accuracy > 1.0) {
        throw BackendError("mock base accuracy must lie in [0, 1]");
    }
    if (config_.retention < 0.0 || config_.retention > 1.0) {
        throw BackendError("mock retention must lie in [0, 1]");
    }
}

void MockBackend::record_call(const std::string& operation, const std::string& detail)
{
    calls_.push_back({operation, detail});
}

void MockBackend::maybe_fail(const std::string& operation)
{
    auto it = pending_failures_.find(operation);
    if (it != pending_failures_.end() && it->second > 0) {
        --it->second;
        throw TransportError("injected transport failure in " + operation);
    }
}

bool MockBackend::is_flagged(const std::string& key) const
{
    if (config_.flag_keys.count(key) > 0) {
        return true;
    }
    return config_.flag_modulus > 0 && stable_hash(key) % config_.flag_modulus == 0;
}

std::size_t MockBackend::lineage_samples(const std::string& model_id)
{
    if (model_id.rfind("ft:", 0) != 0) {
        return 0;
    }
    const auto pos = model_id.find(":s", 3);
    if (pos == std::string::npos) {
        return 0;
    }
    return static_cast<std::size_t>(std::strtoull(model_id.c_str() + pos + 2, nullptr, 10));
}

double MockBackend::model_accuracy(const std::string& model_id) const
{
    const double phases = static_cast<double>(lineage_samples(model_id)) / 128.0;
    return 1.0 - (1.0 - config_.base_accuracy) * std::pow(config_.retention, phases);
}

double MockBackend::curve_quality(const HyperParams& hp) const
{
    double q = 1.0;
    if (hp.learning_rate) {
        const double z = (std::log10(*hp.learning_rate) + 3.5) / 0.8;
        q *= std::exp(-0.5 * z * z);
    }
    q *= 1.0 - 0.03 * std::abs(std::log2(static_cast<double>(hp.batch_size) / 16.0));
    return std::clamp(q, 0.05, 1.0);
}

UploadedData MockBackend::upload_training_data(const DataFile& train, const DataFile& validation)
{
    {
        std::lock_guard lock(mutex_);
        record_call("upload_training_data", train.path.string());
        maybe_fail("upload_training_data");
    }
    auto train_keys = data_file_keys(train);
    auto val_keys = data_file_keys(validation);

    std::lock_guard lock(mutex_);
    UploadedData data;
    auto store = [&](const DataFile& file, std::vector<std::string> keys) {
        DataHandle handle;
        handle.id = "file-" + hex(stable_hash(io::read_text(file.path)), 16);
        handle.records = keys.size();
        uploads_[handle.id] = Upload{std::move(keys)};
        return handle;
    };
    data.train = store(train, std::move(train_keys));
    data.validation = store(validation, std::move(val_keys));
    return data;
}

FineTuneJob MockBackend::create_finetune(const FineTuneRequest& request)
{
    std::lock_guard lock(mutex_);
    record_call("create_finetune", request.idempotency_key);
    maybe_fail("create_finetune");

    if (!request.idempotency_key.empty()) {
        auto existing = job_by_key_.find(request.idempotency_key);
        if (existing != job_by_key_.end()) {
            if (lost_creates_ > 0) {
                --lost_creates_;
                throw TransportError("connection reset before the create response arrived");
            }
            return jobs_.at(existing->second).job;
        }
    }
    auto upload = uploads_.find(request.data.train.id);
    if (upload == uploads_.end() || uploads_.count(request.data.validation.id) == 0) {
        throw BackendError("unknown training or validation file handle");
    }
    const HyperParams hp = request.hyperparams.value_or(config_.default_hyperparams);
    hp.validate();

    JobState state;
    auto& job = state.job;
    const std::string key = request.idempotency_key.empty() ? "job-" + std::to_string(jobs_.size())
                                                            : request.idempotency_key;
    job.job_id = "ftjob-" + hex(stable_hash(key), 16);
    while (jobs_.count(job.job_id) > 0) {
        job.job_id += "x";
    }
    job.base_model = request.base_model;
    job.hyperparams = hp;
    job.status = JobStatus::pending;
    job.submitted_samples = upload->second.keys.size();
    for (const auto& k : upload->second.keys) {
        if (is_flagged(k)) {
            job.flagged_samples.push_back({k, "excluded by content filter"});
        }
    }
    job.trained_samples = job.submitted_samples - job.flagged_samples.size();
    state.train_handle = request.data.train.id;
    state.fail = fail_jobs_ || (config_.strict_flagging && !job.flagged_samples.empty());
    if (config_.strict_flagging && !job.flagged_samples.empty()) {
        job.error = std::to_string(job.flagged_samples.size()) + " samples flagged in strict mode";
    }

    const auto id = job.job_id;
    jobs_[id] = std::move(state);
    if (!request.idempotency_key.empty()) {
        job_by_key_[request.idempotency_key] = id;
    }
    if (lost_creates_ > 0) {
        --lost_creates_;
        throw TransportError("connection reset before the create response arrived");
    }
    return jobs_.at(id).job;
}

FineTuneJob MockBackend::poll_job(const std::string& job_id)
{
    std::lock_guard lock(mutex_);
    record_call("poll_job", job_id);
    maybe_fail("poll_job");
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) {
        throw BackendError("unknown job '" + job_id + "'");
    }
    auto& state = it->second;
    auto& job = state.job;
    if (is_terminal(job.status)) {
        return job;
    }
    if (state.fail) {
        job.status = JobStatus::failed;
        if (job.error.empty()) {
            job.error = "injected job failure";
        }
        return job;
    }

    const auto& hp = job.hyperparams;
    const std::size_t total = lineage_samples(job.base_model) + job.trained_samples;
    const std::string output = "ft:" + root_model(job.base_model) + ":s" + std::to_string(total) + ":" +
                               hex(stable_hash(std::to_string(config_.seed) + "|" + job.base_model + "|" +
                                               state.train_handle + "|" + hp.to_json().dump()),
                                   8);
    const int done = static_cast<int>(job.epochs.size());
    if (done < hp.epochs) {
        job.status = JobStatus::running;
        const int e = done + 1;
        const double q = curve_quality(hp);
        const double start = model_accuracy(job.base_model);
        const double target = model_accuracy(output);
        const double progress = 1.0 - std::exp(-static_cast<double>(e) * q / 2.0);
        const double overfit = 0.004 * std::max(0, e - 10);
        const double noise = 0.01 * (hashed_unit(job.job_id + "|" + std::to_string(e)) - 0.5);
        EpochMetrics m;
        m.epoch = e;
        m.val_accuracy = std::clamp(start + (target - start) * q * progress - overfit + noise, 0.0, 1.0);
        m.train_loss = 0.05 + 1.2 * std::exp(-static_cast<double>(e) * q / 3.0);
        m.val_loss = m.train_loss * 1.4 + 0.02 + overfit;
        job.epochs.push_back(m);
        return job;
    }

    job.status = JobStatus::succeeded;
    job.output_model = output;
    job.train_loss = job.epochs.back().train_loss;
    job.full_validation_loss = job.epochs.back().val_loss;
    job.trained_tokens = static_cast<long long>(job.trained_samples) * hp.epochs * config_.tokens_per_sample;
    job.cost_usd = static_cast<double>(*job.trained_tokens) / 1000.0 * config_.training_usd_per_1k_tokens;
    job.duration_s = config_.epoch_duration_s * hp.epochs * static_cast<double>(job.trained_samples) / 128.0;
    return job;
}

void MockBackend::cancel_job(const std::string& job_id)
{
    std::lock_guard lock(mutex_);
    record_call("cancel_job", job_id);
    maybe_fail("cancel_job");
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) {
        throw BackendError("unknown job '" + job_id + "'");
    }
    auto& job = it->second.job;
    if (!is_terminal(job.status)) {
        job.status = JobStatus::failed;
        job.error = "cancelled";
    }
}

ClassifyResult MockBackend::classify(const std::string& model_id, const prompts::MessageSequence& prompt)
{
    {
        std::lock_guard lock(mutex_);
        record_call("classify", model_id);
        maybe_fail("classify");
    }
    if (model_id.empty()) {
        throw BackendError("model id is empty");
    }
    const auto url = prompt.image_url();
    const auto categories = prompts::prompt_categories(prompt.text());
    if (url.empty() || categories.empty()) {
        throw BackendError("prompt carries no image or no category list");
    }
    const std::string truth = label_from_url(url);
    const std::string base = std::to_string(config_.seed) + "|" + model_id + "|" + url;

    ClassifyResult result;
    if (hashed_unit(base + "|malformed") < config_.malformed_rate) {
        result.raw_text = "I am unable to determine the condition of this leaf.";
    } else {
        std::string answer;
        const bool known = std::find(categories.begin(), categories.end(), truth) != categories.end();
        if (known && hashed_unit(base) < model_accuracy(model_id)) {
            answer = truth;
        } else {
            std::vector<std::string> wrong;
            for (const auto& c : categories) {
                if (c != truth) {
                    wrong.push_back(c);
                }
            }
            answer = wrong[stable_hash(base + "|wrong") % wrong.size()];
        }
        result.raw_text = "{\"category\": \"" + answer + "\"}";
    }
    result.latency_s = config_.prediction_latency_s * (0.8 + 0.4 * hashed_unit(base + "|latency"));
    result.cost_usd = config_.prediction_usd;
    parse_into(result, prompt);
    return result;
}

void MockBackend::fail_next(const std::string& operation, int n)
{
    std::lock_guard lock(mutex_);
    pending_failures_[operation] = n;
}

void MockBackend::lose_create_responses(int n)
{
    std::lock_guard lock(mutex_);
    lost_creates_ = n;
}

void MockBackend::fail_jobs(bool on)
{
    std::lock_guard lock(mutex_);
    fail_jobs_ = on;
}

std::vector<MockCall> MockBackend::call_log() const
{
    std::lock_guard lock(mutex_);
    return calls_;
}

std::size_t MockBackend::jobs_created() const
{
    std::lock_guard lock(mutex_);
    return jobs_.size();
}

} // namespace leafbench::backends
