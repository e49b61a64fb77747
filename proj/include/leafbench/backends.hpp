#pragma once

#include "leafbench/prompts.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace leafbench::backends {

/// Network-level failure; safe to retry.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The backend understood the request and refused it.
class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataValidationError : public BackendError {
public:
    DataValidationError(const std::filesystem::path& file, std::size_t line, const std::string& problem);
    /// 1-based; 0 when the problem is the file as a whole.
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct HyperParams {
    int epochs = 3;
    int batch_size = 1;
    std::optional<double> learning_rate;

    /// Throws BackendError unless epochs >= 1, batch_size >= 1, learning_rate > 0.
    void validate() const;
    nlohmann::json to_json() const;
    static HyperParams from_json(const nlohmann::json& j);
    bool operator==(const HyperParams&) const = default;
};

enum class JobStatus { pending, running, succeeded, failed };
std::string_view to_string(JobStatus status);
JobStatus parse_job_status(std::string_view text);
bool is_terminal(JobStatus status);

struct FlaggedSample {
    /// The sample as it appears in the submitted data: its image URL for
    /// JSONL uploads, its manifest id for CSV uploads.
    std::string key;
    std::string reason;
    bool operator==(const FlaggedSample&) const = default;
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::optional<double> val_accuracy;
};

struct FineTuneJob {
    std::string job_id;
    std::string base_model;
    JobStatus status = JobStatus::pending;
    std::optional<std::string> output_model;
    HyperParams hyperparams;
    double train_loss = 0.0;
    double full_validation_loss = 0.0;
    std::optional<long long> trained_tokens;
    double duration_s = 0.0;
    double cost_usd = 0.0;
    std::size_t submitted_samples = 0;
    std::size_t trained_samples = 0;
    std::vector<FlaggedSample> flagged_samples;
    std::vector<EpochMetrics> epochs;
    std::string error;

    nlohmann::json to_json() const;
    static FineTuneJob from_json(const nlohmann::json& j);
};

struct ClassifyResult {
    std::string raw_text;
    std::optional<std::string> parsed_category;
    prompts::ParseError parse_error = prompts::ParseError::no_json_found;
    double latency_s = 0.0;
    double cost_usd = 0.0;
    int attempts = 1;
    /// Set when every attempt failed in transport; the result then counts as
    /// unparseable.
    std::string transport_error;
};

enum class DataFormat { jsonl, manifest_csv };

struct DataFile {
    std::filesystem::path path;
    DataFormat format = DataFormat::jsonl;
};

struct DataHandle {
    std::string id;
    std::size_t records = 0;
};

struct UploadedData {
    DataHandle train;
    DataHandle validation;
};

struct FineTuneRequest {
    std::string base_model;
    UploadedData data;
    /// Absent means the backend's own defaults.
    std::optional<HyperParams> hyperparams;
    /// Resubmitting with the same key returns the existing job.
    std::string idempotency_key;
};

/// Line-level checks shared by every backend before anything is sent.
/// JSONL: every line is an object with a "messages" array of three messages
/// whose last one is the assistant completion. CSV: a manifest export.
/// Returns the record count.
std::size_t validate_data_file(const DataFile& file);

/// The sample key of every record, in file order (see FlaggedSample::key).
std::vector<std::string> data_file_keys(const DataFile& file);

class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string name() const = 0;
    virtual UploadedData upload_training_data(const DataFile& train, const DataFile& validation) = 0;
    virtual FineTuneJob create_finetune(const FineTuneRequest& request) = 0;
    virtual FineTuneJob poll_job(const std::string& job_id) = 0;
    virtual void cancel_job(const std::string& job_id) = 0;
    virtual ClassifyResult classify(const std::string& model_id, const prompts::MessageSequence& prompt) = 0;
    /// Format the backend wants training data in.
    virtual DataFormat data_format() const { return DataFormat::jsonl; }
};

/// Fills parsed_category/parse_error from raw_text using the categories
/// interpolated into the prompt.
void parse_into(ClassifyResult& result, const prompts::MessageSequence& prompt);

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{500};
};

/// Retries TransportError with exponential backoff. A classify call that keeps
/// failing returns an unparseable result instead of throwing.
class RetryingBackend : public Backend {
public:
    RetryingBackend(std::shared_ptr<Backend> inner, RetryPolicy policy);

    std::string name() const override { return inner_->name(); }
    UploadedData upload_training_data(const DataFile& train, const DataFile& validation) override;
    FineTuneJob create_finetune(const FineTuneRequest& request) override;
    FineTuneJob poll_job(const std::string& job_id) override;
    void cancel_job(const std::string& job_id) override;
    ClassifyResult classify(const std::string& model_id, const prompts::MessageSequence& prompt) override;
    DataFormat data_format() const override { return inner_->data_format(); }

private:
    template <typename F>
    auto with_retries(F&& call) -> decltype(call());

    std::shared_ptr<Backend> inner_;
    RetryPolicy policy_;
};

// ---------------------------------------------------------------------------
// Mock

struct MockConfig {
    std::uint64_t seed = 42;
    /// Probability that the untuned base model answers correctly.
    double base_accuracy = 0.25;
    /// Error multiplier per 128 trained samples in the model's lineage.
    double retention = 0.5;
    /// Fraction of answers that come back without usable JSON.
    double malformed_rate = 0.0;
    /// Flag a sample when stable_hash(key) % flag_modulus == 0; 0 disables.
    std::uint64_t flag_modulus = 0;
    /// Keys that are always flagged.
    std::set<std::string> flag_keys;
    /// Abort a job instead of proceeding when anything is flagged.
    bool strict_flagging = false;
    HyperParams default_hyperparams{3, 1, std::nullopt};
    long long tokens_per_sample = 900;
    double training_usd_per_1k_tokens = 0.025;
    double prediction_usd = 0.0014;
    double prediction_latency_s = 1.2;
    double epoch_duration_s = 60.0;
};

struct MockCall {
    std::string operation;
    std::string detail; // idempotency key for create_finetune, model for classify
};

/// Deterministic in-process backend. Model ids carry their lineage
/// (`ft:<root>:s<trained samples>:<hash>`), so classification needs no stored
/// state and survives a process restart.
class MockBackend : public Backend {
public:
    explicit MockBackend(MockConfig config = {});

    std::string name() const override { return "mock"; }
    UploadedData upload_training_data(const DataFile& train, const DataFile& validation) override;
    FineTuneJob create_finetune(const FineTuneRequest& request) override;
    FineTuneJob poll_job(const std::string& job_id) override;
    void cancel_job(const std::string& job_id) override;
    ClassifyResult classify(const std::string& model_id, const prompts::MessageSequence& prompt) override;

    /// Probability of a correct answer for a model id.
    double model_accuracy(const std::string& model_id) const;
    /// Total trained samples encoded in a model id (0 for base models).
    static std::size_t lineage_samples(const std::string& model_id);

    // Fault injection.
    /// The next n calls of `operation` throw TransportError before acting.
    void fail_next(const std::string& operation, int n);
    /// The next n create_finetune calls register the job, then throw
    /// TransportError as if the response were lost.
    void lose_create_responses(int n);
    /// Jobs created from now on fail at their first epoch.
    void fail_jobs(bool on);

    std::vector<MockCall> call_log() const;
    std::size_t jobs_created() const;

private:
    struct Upload {
        std::vector<std::string> keys;
    };
    struct JobState {
        FineTuneJob job;
        std::string train_handle;
        bool fail = false;
        bool cancelled = false;
    };

    void record_call(const std::string& operation, const std::string& detail);
    void maybe_fail(const std::string& operation);
    bool is_flagged(const std::string& key) const;
    double curve_quality(const HyperParams& hp) const;

    MockConfig config_;
    mutable std::mutex mutex_;
    std::map<std::string, Upload> uploads_;
    std::map<std::string, JobState> jobs_;
    std::map<std::string, std::string> job_by_key_;
    std::map<std::string, int> pending_failures_;
    int lost_creates_ = 0;
    bool fail_jobs_ = false;
    std::vector<MockCall> calls_;
};

// ---------------------------------------------------------------------------
// Remote (OpenAI-compatible REST)

struct ModelPrice {
    double input_usd_per_1k = 0.0;
    double output_usd_per_1k = 0.0;
    double training_usd_per_1k = 0.0;
};

struct RemoteConfig {
    /// Scheme, host and optional port, e.g. https://api.openai.com
    std::string base_url = "https://api.openai.com";
    std::string api_key;
    /// Keyed by model-id prefix; the longest matching prefix wins. A fine-tuned
    /// id (`ft:<base>...`) falls back to its base model's price.
    std::map<std::string, ModelPrice> pricing;
    std::chrono::seconds timeout{120};
    double temperature = 0.0;
    int max_tokens = 50;
};

/// Reads LEAFBENCH_API_KEY; throws BackendError when unset.
std::string api_key_from_env();

class RemoteBackend : public Backend {
public:
    explicit RemoteBackend(RemoteConfig config);
    ~RemoteBackend() override;

    std::string name() const override { return "remote"; }
    UploadedData upload_training_data(const DataFile& train, const DataFile& validation) override;
    FineTuneJob create_finetune(const FineTuneRequest& request) override;
    FineTuneJob poll_job(const std::string& job_id) override;
    void cancel_job(const std::string& job_id) override;
    ClassifyResult classify(const std::string& model_id, const prompts::MessageSequence& prompt) override;

    const ModelPrice* price_for(const std::string& model_id) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Subprocess worker (line-delimited JSON over stdin/stdout)

struct SubprocessConfig {
    /// Program and arguments of the worker.
    std::vector<std::string> command;
    std::string architecture = "resnet50";
    /// Maps an image URL from a prompt to the local file the worker reads.
    std::function<std::filesystem::path(const std::string&)> resolve_image;
};

/// Runs one worker for training and one for predictions. Training data must be
/// manifest CSVs; output models are checkpoint paths.
class SubprocessBackend : public Backend {
public:
    explicit SubprocessBackend(SubprocessConfig config);
    ~SubprocessBackend() override;

    std::string name() const override { return "subprocess"; }
    UploadedData upload_training_data(const DataFile& train, const DataFile& validation) override;
    FineTuneJob create_finetune(const FineTuneRequest& request) override;
    FineTuneJob poll_job(const std::string& job_id) override;
    void cancel_job(const std::string& job_id) override;
    ClassifyResult classify(const std::string& model_id, const prompts::MessageSequence& prompt) override;
    DataFormat data_format() const override { return DataFormat::manifest_csv; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace leafbench::backends
