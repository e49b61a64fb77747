#include "leafbench/backends.hpp"

#include "leafbench/rng.hpp"

#include <boost/process.hpp>

#include <atomic>
#include <thread>

namespace leafbench::backends {

namespace bp = boost::process;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// One worker process and its pipes. Not thread-safe; callers serialize.
class Worker {
public:
    explicit Worker(const std::vector<std::string>& command)
    {
        if (command.empty()) {
            throw BackendError("subprocess backend has no worker command");
        }
        fs::path exe = command.front();
        if (!exe.has_parent_path()) {
            exe = bp::search_path(command.front()).string();
        }
        if (exe.empty() || !fs::exists(exe)) {
            throw BackendError("worker program not found: " + command.front());
        }
        std::vector<std::string> args(command.begin() + 1, command.end());
        try {
            child_ = bp::child(exe.string(), bp::args(args), bp::std_in < in_, bp::std_out > out_);
        } catch (const std::exception& e) {
            throw TransportError(std::string("cannot start worker: ") + e.what());
        }
        send({{"cmd", "hello"}});
        const auto reply = receive();
        if (!reply.value("ok", false) || reply.value("proto", 0) != 1) {
            throw BackendError("worker handshake failed: " + reply.dump());
        }
    }

    ~Worker()
    {
        std::error_code ec;
        in_.close();
        in_.pipe().close();
        if (child_.running(ec)) {
            if (!child_.wait_for(std::chrono::seconds(2), ec)) {
                child_.terminate(ec);
            }
        }
    }

    Worker(const Worker&) = delete;
    Worker& operator=(const Worker&) = delete;

    void send(const json& message)
    {
        std::lock_guard lock(write_mutex_);
        in_ << message.dump() << std::endl;
        if (!in_) {
            throw TransportError("worker stdin closed");
        }
    }

    json receive()
    {
        std::string line;
        while (std::getline(out_, line)) {
            if (line.empty()) {
                continue;
            }
            auto value = json::parse(line, nullptr, false);
            if (value.is_discarded() || !value.is_object()) {
                throw TransportError("worker wrote a non-protocol line: " + line);
            }
            return value;
        }
        throw TransportError("worker exited unexpectedly");
    }

    void kill()
    {
        std::error_code ec;
        child_.terminate(ec);
    }

private:
    bp::opstream in_;
    bp::ipstream out_;
    bp::child child_;
    std::mutex write_mutex_;
};

std::string hex16(std::uint64_t value)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

} // namespace

struct SubprocessBackend::Impl {
    struct Job {
        FineTuneJob state;
        std::unique_ptr<Worker> worker;
        std::thread thread;
        bool cancelled = false;
    };

    SubprocessConfig config;
    std::mutex mutex;
    std::map<std::string, std::unique_ptr<Job>> jobs;
    std::map<std::string, std::string> job_by_key;
    std::map<std::string, std::size_t> records;

    std::mutex predict_mutex;
    std::unique_ptr<Worker> predictor;

    void run_training(Job& job, json command)
    {
        try {
            job.worker->send(command);
            while (true) {
                const auto ev = job.worker->receive();
                const auto kind = ev.value("event", "");
                std::lock_guard lock(mutex);
                auto& s = job.state;
                if (kind == "epoch") {
                    s.status = JobStatus::running;
                    EpochMetrics m;
                    m.epoch = ev.value("epoch", static_cast<int>(s.epochs.size()) + 1);
                    m.train_loss = ev.value("train_loss", 0.0);
                    m.val_loss = ev.value("val_loss", 0.0);
                    if (ev.contains("val_acc") && ev["val_acc"].is_number()) {
                        m.val_accuracy = ev["val_acc"].get<double>();
                    }
                    s.epochs.push_back(m);
                } else if (kind == "warning") {
                    if (ev.contains("sample") && ev["sample"].is_string()) {
                        s.flagged_samples.push_back({ev["sample"].get<std::string>(), ev.value("message", "skipped")});
                    }
                } else if (kind == "done") {
                    s.duration_s = ev.value("duration_s", 0.0);
                    s.trained_samples = s.submitted_samples - std::min(s.submitted_samples, s.flagged_samples.size());
                    if (!s.epochs.empty()) {
                        s.train_loss = s.epochs.back().train_loss;
                        s.full_validation_loss = s.epochs.back().val_loss;
                    }
                    if (job.cancelled) {
                        s.status = JobStatus::failed;
                        s.error = "cancelled";
                    } else {
                        s.status = JobStatus::succeeded;
                        s.output_model = ev.value("checkpoint", "");
                    }
                    return;
                } else if (kind == "error") {
                    s.status = JobStatus::failed;
                    s.error = ev.value("message", "worker error");
                    return;
                }
            }
        } catch (const std::exception& e) {
            std::lock_guard lock(mutex);
            job.state.status = JobStatus::failed;
            job.state.error = job.cancelled ? "cancelled" : e.what();
        }
    }

    json predict(const json& request)
    {
        std::lock_guard lock(predict_mutex);
        if (!predictor) {
            predictor = std::make_unique<Worker>(config.command);
        }
        try {
            predictor->send(request);
            return predictor->receive();
        } catch (const TransportError&) {
            predictor.reset();
            throw;
        }
    }
};

SubprocessBackend::SubprocessBackend(SubprocessConfig config) : impl_(std::make_unique<Impl>())
{
    if (config.command.empty()) {
        throw BackendError("subprocess backend needs a worker command");
    }
    impl_->config = std::move(config);
}

SubprocessBackend::~SubprocessBackend()
{
    for (auto& [id, job] : impl_->jobs) {
        if (job->thread.joinable()) {
            bool running = false;
            {
                std::lock_guard lock(impl_->mutex);
                running = !is_terminal(job->state.status);
            }
            if (running) {
                job->worker->kill();
            }
            job->thread.join();
        }
    }
}

UploadedData SubprocessBackend::upload_training_data(const DataFile& train, const DataFile& validation)
{
    if (train.format != DataFormat::manifest_csv || validation.format != DataFormat::manifest_csv) {
        throw BackendError("the local trainer takes manifest CSV files");
    }
    UploadedData data;
    data.train = {fs::absolute(train.path).string(), validate_data_file(train)};
    data.validation = {fs::absolute(validation.path).string(), validate_data_file(validation)};
    std::lock_guard lock(impl_->mutex);
    impl_->records[data.train.id] = data.train.records;
    return data;
}

FineTuneJob SubprocessBackend::create_finetune(const FineTuneRequest& request)
{
    const HyperParams hp = request.hyperparams.value_or(HyperParams{});
    hp.validate();
    if (!fs::exists(request.data.train.id) || !fs::exists(request.data.validation.id)) {
        throw BackendError("training or validation manifest is missing");
    }

    std::lock_guard lock(impl_->mutex);
    if (!request.idempotency_key.empty()) {
        auto it = impl_->job_by_key.find(request.idempotency_key);
        if (it != impl_->job_by_key.end()) {
            return impl_->jobs.at(it->second)->state;
        }
    }
    auto job = std::make_unique<Impl::Job>();
    const auto key = request.idempotency_key.empty() ? std::to_string(impl_->jobs.size()) : request.idempotency_key;
    job->state.job_id = "local-" + hex16(stable_hash(key));
    job->state.base_model = request.base_model;
    job->state.hyperparams = hp;
    job->state.submitted_samples = request.data.train.records;
    job->worker = std::make_unique<Worker>(impl_->config.command);

    json command{{"cmd", "train"},
                 {"train_csv", request.data.train.id},
                 {"val_csv", request.data.validation.id},
                 {"epochs", hp.epochs},
                 {"batch_size", hp.batch_size},
                 {"learning_rate", hp.learning_rate.value_or(1e-3)},
                 {"resume_from", nullptr},
                 {"architecture", impl_->config.architecture}};
    if (!request.base_model.empty() && fs::exists(request.base_model)) {
        command["resume_from"] = request.base_model;
    } else if (!request.base_model.empty()) {
        command["architecture"] = request.base_model;
    }

    auto* raw = job.get();
    const auto id = job->state.job_id;
    impl_->jobs[id] = std::move(job);
    if (!request.idempotency_key.empty()) {
        impl_->job_by_key[request.idempotency_key] = id;
    }
    raw->thread = std::thread([this, raw, command] { impl_->run_training(*raw, command); });
    return raw->state;
}

FineTuneJob SubprocessBackend::poll_job(const std::string& job_id)
{
    std::lock_guard lock(impl_->mutex);
    auto it = impl_->jobs.find(job_id);
    if (it == impl_->jobs.end()) {
        throw BackendError("unknown job '" + job_id + "'");
    }
    return it->second->state;
}

void SubprocessBackend::cancel_job(const std::string& job_id)
{
    Impl::Job* job = nullptr;
    {
        std::lock_guard lock(impl_->mutex);
        auto it = impl_->jobs.find(job_id);
        if (it == impl_->jobs.end()) {
            throw BackendError("unknown job '" + job_id + "'");
        }
        job = it->second.get();
        if (is_terminal(job->state.status)) {
            return;
        }
        job->cancelled = true;
    }
    try {
        job->worker->send({{"cmd", "prune"}});
    } catch (const TransportError&) {
        // The worker is already gone; the reader thread records the failure.
    }
}

ClassifyResult SubprocessBackend::classify(const std::string& model_id, const prompts::MessageSequence& prompt)
{
    const auto url = prompt.image_url();
    if (url.empty()) {
        throw BackendError("prompt carries no image");
    }
    const fs::path image = impl_->config.resolve_image ? impl_->config.resolve_image(url) : fs::path(url);
    const auto started = std::chrono::steady_clock::now();
    const auto reply = impl_->predict({{"cmd", "predict"}, {"checkpoint", model_id}, {"image", image.string()}});

    ClassifyResult result;
    result.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (reply.contains("category") && reply["category"].is_string()) {
        result.raw_text = json{{"category", reply["category"]}}.dump();
    } else {
        result.raw_text = reply.value("message", reply.dump());
    }
    parse_into(result, prompt);
    return result;
}

} // namespace leafbench::backends
