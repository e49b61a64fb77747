#include "leafbench/scheduler.hpp"

#include "leafbench/io.hpp"
#include "leafbench/prompts.hpp"
#include "leafbench/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <future>
#include <thread>

namespace leafbench::scheduler {

namespace fs = std::filesystem;
using backends::FineTuneJob;
using backends::HyperParams;
using backends::JobStatus;
using nlohmann::json;

namespace {

std::string hex16(std::uint64_t value)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

// Same request, same key: resubmission after a crash dedupes at the backend.
std::string request_key(const std::string& prefix, const std::string& base_model, const backends::DataFile& train,
                        const std::optional<HyperParams>& hp)
{
    const std::string hp_text = hp ? hp->to_json().dump() : "default";
    return prefix + "/" + hex16(stable_hash(base_model + "|" + io::read_text(train.path) + "|" + hp_text));
}

bool progressed(const FineTuneJob& before, const FineTuneJob& after)
{
    return before.status != after.status || before.epochs.size() != after.epochs.size();
}

} // namespace

PredictionRecord classify_sample(backends::Backend& backend, const std::string& model_id,
                                 const dataset::ImageSample& sample, std::size_t index)
{
    PredictionRecord rec;
    rec.index = index;
    rec.sample_id = sample.id;
    rec.true_label = sample.label;
    rec.image_url = sample.public_url.value_or(sample.local_path.generic_string());
    rec.model_id = model_id;
    try {
        const auto prompt =
            prompts::render_classification_prompt(prompts::make_context(sample.plant, rec.image_url));
        const auto result = backend.classify(model_id, prompt);
        rec.raw_response = result.raw_text;
        rec.parsed_category = result.parsed_category;
        rec.parse_error = std::string(prompts::to_string(result.parse_error));
        rec.latency_s = result.latency_s;
        rec.cost_usd = result.cost_usd;
        rec.attempts = result.attempts;
        rec.error = result.transport_error;
    } catch (const std::exception& e) {
        rec.parsed_category.reset();
        rec.parse_error = "backend_error";
        rec.error = e.what();
    }
    return rec;
}

Scheduler::Scheduler(RunLayout layout, backends::Backend& backend, SchedulerOptions options)
    : layout_(std::move(layout)), backend_(backend), study_backend_(&backend), options_(options),
      journal_(layout_.journal())
{
    layout_.create();
    if (options_.sweep_parallelism == 0) {
        throw SchedulerError("sweep parallelism must be at least 1");
    }
}

JobLedgerEntry Scheduler::run_job(backends::Backend& backend, JobLedgerEntry entry, const backends::DataFile& train,
                                  const backends::DataFile& validation, const std::optional<HyperParams>& hp,
                                  const JobObserver& observer)
{
    if (auto previous = journal_.latest(entry.idempotency_key); previous && is_terminal(previous->job.status)) {
        if (observer) {
            observer(previous->job);
        }
        return *previous;
    }

    const auto data = backend.upload_training_data(train, validation);
    backends::FineTuneRequest request;
    request.base_model = entry.job.base_model;
    request.data = data;
    request.hyperparams = hp;
    request.idempotency_key = entry.idempotency_key;
    entry.job = backend.create_finetune(request);
    journal_.record(entry);

    bool cancelled = false;
    for (int polls = 0; !is_terminal(entry.job.status); ++polls) {
        if (polls >= options_.max_polls) {
            throw SchedulerError("job " + entry.job.job_id + " still " +
                                 std::string(backends::to_string(entry.job.status)) + " after " +
                                 std::to_string(polls) + " polls");
        }
        if (observer && !cancelled && observer(entry.job)) {
            backend.cancel_job(entry.job.job_id);
            cancelled = true;
        }
        if (polls > 0 && options_.poll_interval.count() > 0) {
            std::this_thread::sleep_for(options_.poll_interval);
        }
        auto next = backend.poll_job(entry.job.job_id);
        const bool changed = progressed(entry.job, next);
        entry.job = std::move(next);
        if (changed) {
            journal_.record(entry);
        }
    }
    if (observer && !cancelled) {
        observer(entry.job);
    }
    return entry;
}

JobLedgerEntry Scheduler::run_full_finetune(const ExperimentPlan& plan, const DomainData& data,
                                            const std::optional<HyperParams>& hp)
{
    plan.validate();
    if (plan.regime != Regime::full) {
        throw SchedulerError("plan " + plan.key() + " is not a full fine-tune");
    }
    if (hp) {
        hp->validate();
    }
    const auto& files = data.files(backend_.data_format());
    JobLedgerEntry entry;
    entry.plan = plan.key();
    entry.plant = plan.plant;
    entry.resolution_px = plan.resolution_px;
    entry.regime = Regime::full;
    entry.job.base_model = plan.base_model;
    entry.idempotency_key = request_key(plan.key(), plan.base_model, files.train, hp);
    return run_job(backend_, std::move(entry), files.train, files.validation, hp, nullptr);
}

std::vector<JobLedgerEntry> Scheduler::run_progressive(const ExperimentPlan& plan, const DomainData& data)
{
    plan.validate();
    if (plan.regime != Regime::progressive) {
        throw SchedulerError("plan " + plan.key() + " is not progressive");
    }
    const auto& files = data.files(backend_.data_format());
    if (files.phases.empty()) {
        throw SchedulerError("curated set for " + plan.key() + " has no phases");
    }
    std::vector<JobLedgerEntry> entries;
    std::string base = plan.base_model;
    for (std::size_t k = 0; k < files.phases.size(); ++k) {
        const int phase = static_cast<int>(k + 1);
        JobLedgerEntry entry;
        entry.plan = plan.key();
        entry.plant = plan.plant;
        entry.resolution_px = plan.resolution_px;
        entry.regime = Regime::progressive;
        entry.phase = phase;
        entry.job.base_model = base;
        entry.idempotency_key =
            request_key(plan.key() + "/phase-" + std::to_string(phase), base, files.phases[k], std::nullopt);
        entries.push_back(run_job(backend_, std::move(entry), files.phases[k], files.validation, std::nullopt, nullptr));
        const auto& job = entries.back().job;
        if (job.status != JobStatus::succeeded || !job.output_model) {
            break;
        }
        base = *job.output_model;
    }
    return entries;
}

SweepResult Scheduler::run_prediction_sweep(const SweepSpec& spec, const std::vector<dataset::ImageSample>& samples)
{
    if (spec.name.empty() || spec.name.find('/') != std::string::npos) {
        throw SchedulerError("sweep name '" + spec.name + "' is not a plain file stem");
    }
    if (spec.model_id.empty()) {
        throw SchedulerError("sweep " + spec.name + " has no model");
    }
    const auto path = layout_.predictions() / (spec.name + ".jsonl");
    const auto meta_path = layout_.predictions() / (spec.name + ".meta.json");
    auto meta = spec.to_json();
    meta["samples"] = samples.size();
    if (fs::exists(meta_path)) {
        const auto existing = json::parse(io::read_text(meta_path), nullptr, false);
        if (existing != meta) {
            throw SchedulerError("sweep " + spec.name + " already exists with a different definition");
        }
    } else {
        io::write_text_atomic(meta_path, meta.dump(2) + "\n");
    }

    SweepResult result;
    if (fs::exists(path)) {
        for (const auto& line : io::read_jsonl(path)) {
            auto rec = PredictionRecord::from_json(line);
            const auto i = result.records.size();
            if (i >= samples.size() || rec.index != i || rec.sample_id != samples[i].id) {
                throw SchedulerError("sweep " + spec.name + " has an out-of-order record at line " +
                                     std::to_string(i + 1));
            }
            result.records.push_back(std::move(rec));
        }
    }
    result.resumed = result.records.size();

    const auto width = options_.sweep_parallelism;
    for (std::size_t start = result.records.size(); start < samples.size(); start += width) {
        const auto end = std::min(samples.size(), start + width);
        std::vector<PredictionRecord> batch;
        if (width == 1) {
            batch.push_back(classify_sample(backend_, spec.model_id, samples[start], start));
        } else {
            std::vector<std::future<PredictionRecord>> pending;
            for (auto i = start; i < end; ++i) {
                pending.push_back(std::async(std::launch::async, [this, &spec, &samples, i] {
                    return classify_sample(backend_, spec.model_id, samples[i], i);
                }));
            }
            for (auto& f : pending) {
                batch.push_back(f.get());
            }
        }
        for (auto& rec : batch) {
            io::append_line(path, rec.to_json().dump());
            result.records.push_back(std::move(rec));
        }
    }
    for (const auto& rec : result.records) {
        result.duration_s += rec.latency_s;
        result.cost_usd += rec.cost_usd;
        if (!rec.error.empty()) {
            ++result.failures;
        }
    }
    return result;
}

tpe::StudyResult Scheduler::run_study(const ExperimentPlan& plan, const DomainData& data,
                                      const tpe::SearchSpace& space, const tpe::StudyOptions& options)
{
    if (plan.base_model.empty()) {
        throw SchedulerError("study for " + plan.key() + " has no base model");
    }
    for (const char* required : {"epochs", "batch_size"}) {
        (void)space.at(required);
    }
    const bool tunes_lr = std::any_of(space.params().begin(), space.params().end(),
                                      [](const tpe::ParamSpec& p) { return p.name == "learning_rate"; });
    const auto dir = layout_.study_dir(plan.plant, plan.resolution_px);
    fs::create_directories(dir);
    auto opts = options;
    if (!opts.ledger) {
        opts.ledger = dir / "trials.jsonl";
    }
    const auto& files = data.files(study_backend_->data_format());

    auto objective = [&](tpe::Trial& trial) -> double {
        HyperParams hp;
        hp.epochs = static_cast<int>(std::lround(trial.param("epochs")));
        hp.batch_size = static_cast<int>(std::lround(trial.param("batch_size")));
        if (tunes_lr) {
            hp.learning_rate = trial.param("learning_rate");
        }
        JobLedgerEntry entry;
        entry.plan = plan.key();
        entry.plant = plan.plant;
        entry.resolution_px = plan.resolution_px;
        entry.regime = Regime::full;
        entry.trial = trial.id();
        entry.job.base_model = plan.base_model;
        entry.idempotency_key = request_key(plan.key() + "/trial-" + std::to_string(trial.id()), plan.base_model,
                                            files.train, hp);

        std::size_t fed = 0;
        bool prune = false;
        auto observer = [&](const FineTuneJob& job) {
            while (!prune && fed < job.epochs.size() && job.epochs[fed].val_accuracy) {
                trial.report(static_cast<int>(fed + 1), *job.epochs[fed].val_accuracy);
                ++fed;
                prune = trial.should_prune();
            }
            return prune;
        };
        const auto done = run_job(*study_backend_, std::move(entry), files.train, files.validation, hp, observer);
        if (prune) {
            throw tpe::TrialPruned{};
        }
        if (done.job.status != JobStatus::succeeded || !done.job.output_model) {
            throw SchedulerError("trial " + std::to_string(trial.id()) + " job failed: " + done.job.error);
        }
        const auto& seen = trial.record().intermediate;
        if (!seen.empty()) {
            return *std::max_element(seen.begin(), seen.end());
        }
        std::vector<PredictionRecord> records;
        const auto samples = data.validation_samples();
        for (std::size_t i = 0; i < samples.size(); ++i) {
            records.push_back(classify_sample(*study_backend_, *done.job.output_model, samples[i], i));
        }
        return eval::compute_metrics(eval::build_confusion(records, dataset::class_labels(plan.plant))).accuracy;
    };

    auto result = tpe::run_study(objective, space, opts);
    tpe::write_study_summary(result, space, dir / "summary.csv");
    HyperParams best;
    best.epochs = static_cast<int>(std::lround(result.best.params.at("epochs")));
    best.batch_size = static_cast<int>(std::lround(result.best.params.at("batch_size")));
    if (tunes_lr) {
        best.learning_rate = result.best.params.at("learning_rate");
    }
    const json summary{{"trial_id", result.best.trial_id},
                       {"objective", result.best.objective.value_or(0.0)},
                       {"params", tpe::params_to_json(result.best.params)},
                       {"hyperparams", best.to_json()}};
    io::write_text_atomic(dir / "best.json", summary.dump(2) + "\n");
    return result;
}

std::optional<HyperParams> load_best_hyperparams(const RunLayout& layout, dataset::Plant plant, int resolution)
{
    const auto path = layout.study_dir(plant, resolution) / "best.json";
    if (!fs::exists(path)) {
        return std::nullopt;
    }
    const auto j = json::parse(io::read_text(path));
    return HyperParams::from_json(j.at("hyperparams"));
}

} // namespace leafbench::scheduler
