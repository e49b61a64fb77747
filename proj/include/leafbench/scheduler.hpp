#pragma once

#include "leafbench/backends.hpp"
#include "leafbench/dataset.hpp"
#include "leafbench/eval.hpp"
#include "leafbench/records.hpp"
#include "leafbench/tpe.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace leafbench::scheduler {

class SchedulerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// manifests/, jsonl/, studies/, jobs/, predictions/, reports/ under one root,
/// plus images/ for generated thumbnails.
class RunLayout {
public:
    explicit RunLayout(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }
    std::filesystem::path manifests() const { return root_ / "manifests"; }
    std::filesystem::path jsonl() const { return root_ / "jsonl"; }
    std::filesystem::path studies() const { return root_ / "studies"; }
    std::filesystem::path jobs() const { return root_ / "jobs"; }
    std::filesystem::path predictions() const { return root_ / "predictions"; }
    std::filesystem::path reports() const { return root_ / "reports"; }
    std::filesystem::path images() const { return root_ / "images"; }
    std::filesystem::path journal() const { return jobs() / "journal.jsonl"; }

    /// manifests/<plant>-<resolution>.csv
    std::filesystem::path manifest_csv(dataset::Plant plant, int resolution) const;
    std::filesystem::path study_dir(dataset::Plant plant, int resolution) const;

    void create() const;

private:
    std::filesystem::path root_;
};

enum class HpSource { tpe_study, backend_default };

struct ExperimentPlan {
    dataset::Plant plant = dataset::Plant::apple;
    int resolution_px = dataset::kNativeResolution;
    Regime regime = Regime::full;
    HpSource hp_source = HpSource::backend_default;
    std::string backend = "mock";
    std::string base_model;

    /// "<plant>-<resolution>-<regime>"
    std::string key() const;
    /// Throws SchedulerError for a progressive plan with study hyperparameters,
    /// an empty base model or an unsupported resolution.
    void validate() const;
};

/// Append-only JSON-lines record of every job transition. Replays the file on
/// construction; thread-safe.
class Journal {
public:
    explicit Journal(std::filesystem::path path);

    void record(const JobLedgerEntry& entry);
    std::optional<JobLedgerEntry> latest(const std::string& idempotency_key) const;
    /// Latest snapshot per idempotency key, in order of first appearance.
    std::vector<JobLedgerEntry> entries() const;
    std::size_t lines() const;

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::vector<JobLedgerEntry> latest_;
    std::map<std::string, std::size_t> by_key_;
    std::size_t lines_ = 0;
};

/// Training files for one backend data format.
struct DomainFiles {
    backends::DataFile train;
    backends::DataFile validation;
    std::vector<backends::DataFile> phases;
};

/// A curated (plant, resolution) with its rendered training files.
struct DomainData {
    dataset::CuratedSet set;
    DomainFiles jsonl;
    DomainFiles csv;

    dataset::Plant plant() const noexcept { return set.manifest.plant; }
    int resolution() const noexcept { return set.manifest.resolution_px; }
    const DomainFiles& files(backends::DataFormat format) const;
    std::vector<dataset::ImageSample> test_samples() const;
    std::vector<dataset::ImageSample> validation_samples() const;
};

/// Writes jsonl/<plant>-<res>-{train,validation,phase<k>}.jsonl and the
/// matching manifest CSV subsets. Re-running rewrites identical bytes.
DomainData prepare_domain(const RunLayout& layout, const dataset::CuratedSet& set);

/// Loads manifests/<plant>-<res>.csv and prepares it.
DomainData load_domain(const RunLayout& layout, dataset::Plant plant, int resolution);

struct CurateOptions {
    std::filesystem::path dataset_root;
    dataset::Plant plant = dataset::Plant::apple;
    std::size_t per_class = 200;
    std::uint64_t seed = 42;
    std::vector<int> resolutions{256, 150, 100};
    std::size_t phase_size = 128;
    std::string image_base_url;
};

struct CurateResult {
    std::vector<std::filesystem::path> manifests; // one per resolution
    std::vector<std::string> warnings;
};

/// Scan, balance, split, phase, thumbnail and export. Thumbnails go under
/// images/; every resolution shares the same split. Throws on any failure.
CurateResult curate(const RunLayout& layout, const CurateOptions& options);

struct SchedulerOptions {
    std::chrono::milliseconds poll_interval{0};
    int max_polls = 100000;
    std::size_t sweep_parallelism = 4;
    /// Send the tuned learning rate with full fine-tunes. Off by default: only
    /// epochs and batch size carry over from the study.
    bool transfer_learning_rate = false;
};

struct SweepResult {
    std::vector<PredictionRecord> records;
    double duration_s = 0.0;
    double cost_usd = 0.0;
    std::size_t failures = 0; // records with a backend error
    std::size_t resumed = 0;  // records read back from disk
};

/// Classifies one sample; backend and prompt failures land in the record.
PredictionRecord classify_sample(backends::Backend& backend, const std::string& model_id,
                                 const dataset::ImageSample& sample, std::size_t index);

/// Called with every job snapshot while polling; return true to cancel.
using JobObserver = std::function<bool(const backends::FineTuneJob&)>;

class Scheduler {
public:
    Scheduler(RunLayout layout, backends::Backend& backend, SchedulerOptions options = {});

    /// One fine-tune over the 512-sample train set. A completed entry for the
    /// same request in the journal is returned without touching the backend.
    JobLedgerEntry run_full_finetune(const ExperimentPlan& plan, const DomainData& data,
                                     const std::optional<backends::HyperParams>& hp);

    /// Phase k fine-tunes phase k-1's output on phase k's samples with backend
    /// defaults. Stops after the first failed phase.
    std::vector<JobLedgerEntry> run_progressive(const ExperimentPlan& plan, const DomainData& data);

    /// Persists records under predictions/<spec.name>.jsonl in sample order and
    /// resumes from the records already there.
    SweepResult run_prediction_sweep(const SweepSpec& spec, const std::vector<dataset::ImageSample>& samples);

    /// TPE study whose trials fine-tune on this backend. Objective: best epoch
    /// validation accuracy, or validation-set accuracy of the output model when
    /// the backend reports none. Writes trials.jsonl, summary.csv, best.json.
    tpe::StudyResult run_study(const ExperimentPlan& plan, const DomainData& data, const tpe::SearchSpace& space,
                               const tpe::StudyOptions& options);

    /// Backend that trains study trials; defaults to the main backend.
    void set_study_backend(backends::Backend& backend) noexcept { study_backend_ = &backend; }

    Journal& journal() noexcept { return journal_; }
    const RunLayout& layout() const noexcept { return layout_; }

private:
    JobLedgerEntry run_job(backends::Backend& backend, JobLedgerEntry entry, const backends::DataFile& train,
                           const backends::DataFile& validation,
                           const std::optional<backends::HyperParams>& hp, const JobObserver& observer);

    RunLayout layout_;
    backends::Backend& backend_;
    backends::Backend* study_backend_;
    SchedulerOptions options_;
    Journal journal_;
};

/// Best hyperparameters written by a study, if any.
std::optional<backends::HyperParams> load_best_hyperparams(const RunLayout& layout, dataset::Plant plant,
                                                           int resolution);

struct MatrixConfig {
    std::vector<dataset::Plant> plants{dataset::Plant::apple, dataset::Plant::corn};
    std::vector<int> resolutions{256, 150, 100};
    std::vector<Regime> regimes{Regime::full, Regime::progressive, Regime::zero_shot};
    HpSource full_hp_source = HpSource::tpe_study;
    std::string backend = "mock";
    std::string base_model;
    /// Defaults to {base_model} when empty.
    std::vector<std::string> zero_shot_models;
    tpe::SearchSpace space = tpe::SearchSpace::default_space();
    tpe::StudyOptions study;
    bool cross_resolution = true;
    bool cross_plant = true;
    /// Write reports/ at the end when any sweep exists.
    bool emit_report = true;
    /// Full fine-tunes use these instead of any study result.
    std::optional<backends::HyperParams> full_hp_override;
    /// Run the study for a domain without best.json; otherwise that plan fails.
    bool run_missing_study = true;
};

struct MatrixResult {
    std::vector<JobLedgerEntry> jobs; // full and progressive entries
    std::vector<eval::SweepReport> sweeps;
    std::vector<std::string> failures;
    std::optional<eval::ReportOutput> report;

    bool ok() const noexcept { return failures.empty(); }
};

/// Runs every configured plan over every (plant, resolution), then the cross
/// sweeps, then the report. Per-plan failures are collected, not thrown.
/// `study_backend` trains the study trials (often a cheaper local trainer).
MatrixResult run_matrix(const RunLayout& layout, const MatrixConfig& config, backends::Backend& backend,
                        backends::Backend& study_backend, const SchedulerOptions& options = {});

/// Sweep naming used by run_matrix. Names of sweeps over fine-tuned models end
/// in 8 hex digits of the model id's hash, so a new model never reuses a name.
std::string sweep_name(const SweepSpec& spec);

/// Complete sweeps and the latest non-study journal entries of a run.
eval::ReportInput load_report_input(const RunLayout& layout);

} // namespace leafbench::scheduler
