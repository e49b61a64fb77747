#include "fixtures.hpp"

#include "leafbench/io.hpp"
#include "leafbench/scheduler.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

using namespace leafbench;
using namespace leafbench::scheduler;
using backends::JobStatus;
using backends::MockBackend;
using backends::MockConfig;
using dataset::Plant;
using leafbench::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const std::string kBase = "gpt-4o-2024-08-06";

ExperimentPlan plan(Plant plant, int res, Regime regime)
{
    return {plant, res, regime, HpSource::backend_default, "mock", kBase};
}

DomainData domain(const RunLayout& layout, Plant plant, int res = 256)
{
    return prepare_domain(layout, testing::synthetic_curated(plant, res));
}

std::size_t count_calls(const MockBackend& mock, const std::string& operation)
{
    const auto log = mock.call_log();
    return static_cast<std::size_t>(
        std::count_if(log.begin(), log.end(), [&](const backends::MockCall& c) { return c.operation == operation; }));
}

SweepSpec zero_shot_spec(const DomainData& data, std::string model, std::string name = "zs")
{
    SweepSpec s;
    s.name = std::move(name);
    s.kind = SweepKind::zero_shot;
    s.model_id = std::move(model);
    s.train_plant = s.test_plant = data.plant();
    s.train_resolution = s.test_resolution = data.resolution();
    return s;
}

// Curated manifests for the given domains, as the curate step would leave them.
void seed_manifests(const RunLayout& layout, const std::vector<Plant>& plants, const std::vector<int>& resolutions)
{
    layout.create();
    for (auto plant : plants) {
        for (int res : resolutions) {
            dataset::export_manifest_csv(testing::synthetic_curated(plant, res), layout.manifest_csv(plant, res));
        }
    }
}

} // namespace

TEST_CASE("plans")
{
    CHECK(plan(Plant::corn, 150, Regime::progressive).key() == "corn-150-progressive");
    CHECK_NOTHROW(plan(Plant::apple, 256, Regime::full).validate());
    auto p = plan(Plant::apple, 256, Regime::progressive);
    p.hp_source = HpSource::tpe_study;
    CHECK_THROWS_AS(p.validate(), SchedulerError);
    auto q = plan(Plant::apple, 256, Regime::full);
    q.base_model.clear();
    CHECK_THROWS_AS(q.validate(), SchedulerError);
    auto r = plan(Plant::apple, 200, Regime::full);
    CHECK_THROWS_AS(r.validate(), SchedulerError);
}

TEST_CASE("prepared domain files")
{
    TempDir dir;
    RunLayout layout(dir.path());
    layout.create();
    const auto data = domain(layout, Plant::corn, 150);
    CHECK(data.jsonl.train.path == layout.jsonl() / "corn-150-train.jsonl");
    CHECK(data.jsonl.phases.size() == 4);
    CHECK(backends::validate_data_file(data.jsonl.train) == 512);
    CHECK(backends::validate_data_file(data.jsonl.validation) == 128);
    CHECK(backends::validate_data_file(data.csv.phases[3]) == 128);
    CHECK(data.test_samples().size() == 160);
    const auto before = testing::read_file(data.jsonl.train.path);
    domain(layout, Plant::corn, 150);
    CHECK(testing::read_file(data.jsonl.train.path) == before);
    CHECK_THROWS_WITH_AS(load_domain(layout, Plant::apple, 256), doctest::Contains("run curate first"),
                         SchedulerError);
}

TEST_CASE("curate builds every resolution from one split")
{
    TempDir dir;
    testing::make_corpus(dir / "raw", Plant::apple,
                         {{"black-rot", 200}, {"healthy", 210}, {"rust", 200}, {"scab", 205}}, true, 64, 48);
    RunLayout layout(dir / "run");
    CurateOptions options;
    options.dataset_root = dir / "raw";
    options.plant = Plant::apple;
    const auto result = curate(layout, options);
    REQUIRE(result.manifests.size() == 3);
    std::optional<dataset::SplitSpec> first;
    for (int res : {256, 150, 100}) {
        const auto data = load_domain(layout, Plant::apple, res);
        CHECK(data.set.manifest.samples.size() == 800);
        CHECK(fs::exists(data.set.manifest.samples.front().local_path));
        if (!first) {
            first = data.set.split;
        } else {
            CHECK(data.set.split.train == first->train);
            CHECK(data.set.split.test == first->test);
            CHECK(data.set.split.phases == first->phases);
        }
    }
    CurateOptions empty = options;
    empty.dataset_root = dir / "nothing";
    fs::create_directories(empty.dataset_root);
    CHECK_THROWS(curate(layout, empty));
}

TEST_CASE("full fine-tune")
{
    TempDir dir;
    RunLayout layout(dir.path());
    MockBackend mock;
    Scheduler scheduler(layout, mock);
    const auto data = domain(layout, Plant::apple);

    const auto entry = scheduler.run_full_finetune(plan(Plant::apple, 256, Regime::full), data,
                                                   backends::HyperParams{10, 16, std::nullopt});
    CHECK(entry.job.status == JobStatus::succeeded);
    CHECK(entry.job.hyperparams.epochs == 10);
    CHECK(entry.job.hyperparams.batch_size == 16);
    CHECK(entry.job.trained_samples == 512);
    CHECK(entry.job.epochs.size() == 10);
    CHECK(MockBackend::lineage_samples(*entry.job.output_model) == 512);
    CHECK(entry.plan == "apple-256-full");
    CHECK(entry.subset_identifier() == "Resolution-256");
    CHECK(entry.idempotency_key.rfind("apple-256-full/", 0) == 0);

    const auto latest = scheduler.journal().latest(entry.idempotency_key);
    REQUIRE(latest);
    CHECK(latest->job.to_json() == entry.job.to_json());

    CHECK_THROWS_AS(scheduler.run_full_finetune(plan(Plant::apple, 256, Regime::progressive), data, std::nullopt),
                    SchedulerError);
    CHECK_THROWS(scheduler.run_full_finetune(plan(Plant::apple, 256, Regime::full), data,
                                             backends::HyperParams{0, 16, std::nullopt}));
}

TEST_CASE("six domains give six journal entries and a rerun is free")
{
    TempDir dir;
    RunLayout layout(dir.path());
    MockBackend mock;
    std::vector<std::string> outputs;
    {
        Scheduler scheduler(layout, mock);
        for (auto plant : {Plant::apple, Plant::corn}) {
            for (int res : {256, 150, 100}) {
                const auto entry =
                    scheduler.run_full_finetune(plan(plant, res, Regime::full), domain(layout, plant, res), std::nullopt);
                CHECK(entry.job.status == JobStatus::succeeded);
                outputs.push_back(*entry.job.output_model);
            }
        }
        CHECK(scheduler.journal().entries().size() == 6);
    }
    CHECK(std::set<std::string>(outputs.begin(), outputs.end()).size() == 6);

    const auto calls = mock.call_log().size();
    const auto lines = Journal(layout.journal()).lines();
    Scheduler again(layout, mock);
    std::size_t i = 0;
    for (auto plant : {Plant::apple, Plant::corn}) {
        for (int res : {256, 150, 100}) {
            const auto entry =
                again.run_full_finetune(plan(plant, res, Regime::full), domain(layout, plant, res), std::nullopt);
            CHECK(*entry.job.output_model == outputs[i++]);
        }
    }
    CHECK(mock.call_log().size() == calls);
    CHECK(Journal(layout.journal()).lines() == lines);
    CHECK(mock.jobs_created() == 6);
}

TEST_CASE("progressive phases chain their models")
{
    TempDir dir;
    RunLayout layout(dir.path());
    MockBackend mock;
    Scheduler scheduler(layout, mock);
    const auto data = domain(layout, Plant::corn);

    const auto entries = scheduler.run_progressive(plan(Plant::corn, 256, Regime::progressive), data);
    REQUIRE(entries.size() == 4);
    std::string base = kBase;
    for (std::size_t k = 0; k < 4; ++k) {
        const auto& e = entries[k];
        CHECK(e.phase == static_cast<int>(k + 1));
        CHECK(e.job.base_model == base);
        CHECK(e.job.status == JobStatus::succeeded);
        CHECK(e.job.trained_samples == 128);
        CHECK(e.job.hyperparams.epochs == 3);
        CHECK(e.job.hyperparams.batch_size == 1);
        CHECK(MockBackend::lineage_samples(*e.job.output_model) == 128 * (k + 1));
        CHECK(e.subset_identifier() == "Phase-" + std::to_string(k + 1) + "-Resolution-256");
        base = *e.job.output_model;
    }
    CHECK(mock.model_accuracy(*entries[3].job.output_model) > mock.model_accuracy(*entries[0].job.output_model));

    const auto log = mock.call_log();
    std::vector<std::string> uploads;
    for (const auto& c : log) {
        if (c.operation == "upload_training_data") {
            uploads.push_back(c.detail);
        }
    }
    REQUIRE(uploads.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(uploads[k] == data.jsonl.phases[k].path.string());
    }
}

TEST_CASE("a flagged sample is excluded from its phase only")
{
    TempDir dir;
    RunLayout layout(dir.path());
    const auto data = domain(layout, Plant::apple);
    const auto phase3 = data.set.samples_in(data.set.split.phases[2]);
    MockConfig config;
    config.flag_keys = {*phase3[17].public_url};
    MockBackend mock(config);
    Scheduler scheduler(layout, mock);

    const auto entries = scheduler.run_progressive(plan(Plant::apple, 256, Regime::progressive), data);
    REQUIRE(entries.size() == 4);
    const std::size_t trained[4]{128, 128, 127, 128};
    const std::size_t errors[4]{0, 0, 1, 0};
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(entries[k].job.submitted_samples == 128);
        CHECK(entries[k].job.trained_samples == trained[k]);
        CHECK(entries[k].errors() == errors[k]);
    }
    CHECK(entries[2].job.flagged_samples[0].key == *phase3[17].public_url);
    CHECK(MockBackend::lineage_samples(*entries[3].job.output_model) == 511);
}

TEST_CASE("a phase size of the whole train set gives one phase")
{
    TempDir dir;
    RunLayout layout(dir.path());
    auto set = testing::synthetic_curated(Plant::apple);
    set.split = dataset::partition_phases(set.split, 512);
    const auto data = prepare_domain(layout, set);
    MockBackend mock;
    Scheduler scheduler(layout, mock);
    const auto entries = scheduler.run_progressive(plan(Plant::apple, 256, Regime::progressive), data);
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].job.trained_samples == 512);
}

TEST_CASE("progressive stops after a failed phase")
{
    TempDir dir;
    RunLayout layout(dir.path());
    MockBackend mock;
    mock.fail_jobs(true);
    Scheduler scheduler(layout, mock);
    const auto entries =
        scheduler.run_progressive(plan(Plant::apple, 256, Regime::progressive), domain(layout, Plant::apple));
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].job.status == JobStatus::failed);
}

TEST_CASE("prediction sweeps")
{
    TempDir dir;
    RunLayout layout(dir.path());
    MockConfig perfect;
    perfect.base_accuracy = 1.0;
    MockBackend mock(perfect);
    Scheduler scheduler(layout, mock);
    const auto data = domain(layout, Plant::apple);
    const auto test = data.test_samples();

    SUBCASE("a perfect model is always right")
    {
        const auto result = scheduler.run_prediction_sweep(zero_shot_spec(data, kBase), test);
        REQUIRE(result.records.size() == 160);
        double latency = 0.0;
        for (std::size_t i = 0; i < 160; ++i) {
            CHECK(result.records[i].index == i);
            CHECK(result.records[i].sample_id == test[i].id);
            CHECK(result.records[i].parsed_category == test[i].label);
            latency += result.records[i].latency_s;
        }
        CHECK(result.cost_usd == doctest::Approx(160 * 0.0014).epsilon(1e-12));
        CHECK(result.duration_s == doctest::Approx(latency).epsilon(1e-12));
        CHECK(result.failures == 0);
        const auto report = eval::summarize_sweep(zero_shot_spec(data, kBase), result.records);
        CHECK(report.metrics.accuracy == 1.0);
        CHECK(report.metrics.total == 160);
        CHECK(io::read_jsonl(layout.predictions() / "zs.jsonl").size() == 160);
    }
    SUBCASE("a finished sweep is read back without classifying")
    {
        scheduler.run_prediction_sweep(zero_shot_spec(data, kBase), test);
        const auto calls = count_calls(mock, "classify");
        const auto again = scheduler.run_prediction_sweep(zero_shot_spec(data, kBase), test);
        CHECK(again.resumed == 160);
        CHECK(count_calls(mock, "classify") == calls);
    }
    SUBCASE("a different definition under the same name is refused")
    {
        scheduler.run_prediction_sweep(zero_shot_spec(data, kBase), test);
        CHECK_THROWS_AS(scheduler.run_prediction_sweep(zero_shot_spec(data, "other-model"), test), SchedulerError);
        CHECK_THROWS_AS(scheduler.run_prediction_sweep(zero_shot_spec(data, kBase, "a/b"), test), SchedulerError);
    }
    SUBCASE("transport failures land in the records")
    {
        mock.fail_next("classify", 3);
        SchedulerOptions serial;
        serial.sweep_parallelism = 1;
        Scheduler one(layout, mock, serial);
        const auto result = one.run_prediction_sweep(zero_shot_spec(data, kBase, "flaky"), test);
        CHECK(result.failures == 3);
        CHECK(result.records[0].parse_error == "backend_error");
        CHECK_FALSE(result.records[0].parsed_category);
        CHECK(result.records[3].parsed_category == test[3].label);
    }
}

TEST_CASE("an interrupted sweep resumes without duplicates")
{
    TempDir dir;
    MockBackend mock;
    const auto spec_for = [](const DomainData& d) { return zero_shot_spec(d, kBase, "resume"); };

    RunLayout reference(dir / "ref");
    const auto ref_data = domain(reference, Plant::corn);
    Scheduler(reference, mock).run_prediction_sweep(spec_for(ref_data), ref_data.test_samples());
    const auto expected = testing::read_file(reference.predictions() / "resume.jsonl");

    for (std::size_t kept : {0u, 1u, 57u, 159u}) {
        CAPTURE(kept);
        RunLayout layout(dir / ("cut-" + std::to_string(kept)));
        const auto data = domain(layout, Plant::corn);
        Scheduler scheduler(layout, mock);
        scheduler.run_prediction_sweep(spec_for(data), data.test_samples());
        const auto path = layout.predictions() / "resume.jsonl";

        // Keep `kept` whole lines and half of the next one.
        std::size_t cut = 0;
        for (std::size_t n = 0; n < kept; ++n) {
            cut = expected.find('\n', cut) + 1;
        }
        const auto next_end = expected.find('\n', cut);
        io::write_text_atomic(path, expected.substr(0, cut) + expected.substr(cut, (next_end - cut) / 2));

        const auto before = count_calls(mock, "classify");
        const auto result = scheduler.run_prediction_sweep(spec_for(data), data.test_samples());
        CHECK(result.resumed == kept);
        CHECK(result.records.size() == 160);
        CHECK(count_calls(mock, "classify") - before == 160 - kept);
        CHECK(testing::read_file(path) == expected);
    }
}

TEST_CASE("interrupted jobs resume to the same final state")
{
    TempDir dir;
    const backends::HyperParams hp{6, 8, std::nullopt};

    RunLayout reference(dir / "ref");
    MockBackend ref_mock;
    const auto expected = Scheduler(reference, ref_mock)
                              .run_full_finetune(plan(Plant::apple, 256, Regime::full),
                                                 domain(reference, Plant::apple), hp);

    SUBCASE("process dies while polling")
    {
        RunLayout layout(dir / "run");
        const auto data = domain(layout, Plant::apple);
        {
            MockBackend first;
            SchedulerOptions short_lived;
            short_lived.max_polls = 3;
            CHECK_THROWS_AS(Scheduler(layout, first, short_lived)
                                .run_full_finetune(plan(Plant::apple, 256, Regime::full), data, hp),
                            SchedulerError);
            const auto pending = Journal(layout.journal()).entries();
            REQUIRE(pending.size() == 1);
            CHECK_FALSE(backends::is_terminal(pending[0].job.status));
        }
        MockBackend fresh;
        const auto resumed =
            Scheduler(layout, fresh).run_full_finetune(plan(Plant::apple, 256, Regime::full), data, hp);
        CHECK(resumed.job.to_json() == expected.job.to_json());
        CHECK(resumed.idempotency_key == expected.idempotency_key);
        CHECK(Journal(layout.journal()).entries().size() == 1);
    }
    SUBCASE("create response lost in transit")
    {
        RunLayout layout(dir / "lost");
        const auto data = domain(layout, Plant::apple);
        MockBackend mock;
        mock.lose_create_responses(1);
        Scheduler scheduler(layout, mock);
        CHECK_THROWS_AS(scheduler.run_full_finetune(plan(Plant::apple, 256, Regime::full), data, hp),
                        backends::TransportError);
        const auto entry = scheduler.run_full_finetune(plan(Plant::apple, 256, Regime::full), data, hp);
        CHECK(mock.jobs_created() == 1);
        CHECK(entry.job.to_json() == expected.job.to_json());
    }
    SUBCASE("journal torn mid-line")
    {
        RunLayout layout(dir / "torn");
        const auto data = domain(layout, Plant::apple);
        MockBackend mock;
        Scheduler(layout, mock).run_full_finetune(plan(Plant::apple, 256, Regime::full), data, hp);
        {
            std::ofstream out(layout.journal(), std::ios::binary | std::ios::app);
            out << "{\"type\":\"job\",\"plan\":\"app";
        }
        Journal replay(layout.journal());
        REQUIRE(replay.entries().size() == 1);
        CHECK(replay.entries()[0].job.to_json() == expected.job.to_json());
        const auto calls = mock.call_log().size();
        Scheduler(layout, mock).run_full_finetune(plan(Plant::apple, 256, Regime::full), data, hp);
        CHECK(mock.call_log().size() == calls);
    }
}

TEST_CASE("journal keeps the latest snapshot per key")
{
    TempDir dir;
    const auto path = dir / "journal.jsonl";
    JobLedgerEntry a;
    a.plan = "apple-256-full";
    a.idempotency_key = "k1";
    a.job.job_id = "j1";
    JobLedgerEntry b = a;
    b.idempotency_key = "k2";
    b.job.job_id = "j2";
    {
        Journal journal(path);
        journal.record(a);
        journal.record(b);
        a.job.status = JobStatus::running;
        journal.record(a);
        a.job.status = JobStatus::succeeded;
        a.job.output_model = "ft:x:s512:00000000";
        journal.record(a);
    }
    Journal replay(path);
    CHECK(replay.lines() == 4);
    const auto entries = replay.entries();
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].idempotency_key == "k1");
    CHECK(entries[0].job.status == JobStatus::succeeded);
    CHECK(entries[1].job.status == JobStatus::pending);
    CHECK_FALSE(replay.latest("k3"));
}

TEST_CASE("study trials prune through job cancellation")
{
    TempDir dir;
    RunLayout layout(dir.path());
    MockBackend mock;
    Scheduler scheduler(layout, mock);
    const auto data = domain(layout, Plant::apple);
    tpe::StudyOptions options;
    options.n_trials = 12;
    const auto result = scheduler.run_study(plan(Plant::apple, 256, Regime::full), data,
                                            tpe::SearchSpace::default_space(), options);

    const auto dir_of = layout.study_dir(Plant::apple, 256);
    CHECK(io::read_jsonl(dir_of / "trials.jsonl").size() == 12);
    CHECK(fs::exists(dir_of / "summary.csv"));
    const auto best = load_best_hyperparams(layout, Plant::apple, 256);
    REQUIRE(best);
    CHECK(best->epochs == static_cast<int>(result.best.params.at("epochs")));
    CHECK(best->batch_size == static_cast<int>(result.best.params.at("batch_size")));
    CHECK(best->learning_rate == doctest::Approx(result.best.params.at("learning_rate")));

    std::size_t pruned = 0;
    for (const auto& r : result.history.records()) {
        pruned += r.state == tpe::TrialState::pruned ? 1 : 0;
    }
    CHECK(pruned > 0);
    CHECK(count_calls(mock, "cancel_job") == pruned);
    for (const auto& entry : scheduler.journal().entries()) {
        CHECK(entry.trial.has_value());
    }
    CHECK(result.best.objective.value() > 0.25);
}

TEST_CASE("matrix")
{
    TempDir dir;
    RunLayout layout(dir.path());
    MockBackend mock;

    SUBCASE("nothing configured is a clean no-op")
    {
        MatrixConfig config;
        config.plants.clear();
        const auto result = run_matrix(layout, config, mock, mock);
        CHECK(result.ok());
        CHECK(result.sweeps.empty());
        CHECK_FALSE(result.report);
    }
    SUBCASE("zero-shot only submits no jobs")
    {
        seed_manifests(layout, {Plant::apple, Plant::corn}, {256, 100});
        MatrixConfig config;
        config.resolutions = {256, 100};
        config.regimes = {Regime::zero_shot};
        config.base_model = kBase;
        config.zero_shot_models = {kBase, "gpt-4o-mini"};
        const auto result = run_matrix(layout, config, mock, mock);
        CHECK(result.ok());
        CHECK(result.jobs.empty());
        CHECK(mock.jobs_created() == 0);
        CHECK(result.sweeps.size() == 8);
        REQUIRE(result.report);
        const auto rows = testing::read_file(layout.reports() / "zeroshot_results.csv");
        CHECK(std::count(rows.begin(), rows.end(), '\n') == 9);
    }
    SUBCASE("a missing domain and failing jobs are collected")
    {
        seed_manifests(layout, {Plant::apple}, {256});
        mock.fail_jobs(true);
        MatrixConfig config;
        config.resolutions = {256, 150};
        config.plants = {Plant::apple};
        config.full_hp_source = HpSource::backend_default;
        config.base_model = kBase;
        const auto result = run_matrix(layout, config, mock, mock);
        CHECK_FALSE(result.ok());
        CHECK(result.failures.size() == 3); // no 150 manifest, full job, phase 1
        CHECK(result.jobs.size() == 2);
        CHECK(result.sweeps.size() == 1); // zero-shot still ran
        CHECK(result.report);
    }
    SUBCASE("full pipeline over two plants and two resolutions")
    {
        seed_manifests(layout, {Plant::apple, Plant::corn}, {256, 100});
        MatrixConfig config;
        config.resolutions = {256, 100};
        config.base_model = kBase;
        config.study.n_trials = 3;
        const auto result = run_matrix(layout, config, mock, mock);
        for (const auto& f : result.failures) {
            MESSAGE(f);
        }
        REQUIRE(result.ok());
        CHECK(result.jobs.size() == 4 * (1 + 4));
        std::map<SweepKind, int> kinds;
        for (const auto& s : result.sweeps) {
            ++kinds[s.spec.kind];
        }
        CHECK(kinds[SweepKind::few_shot] == 4);
        CHECK(kinds[SweepKind::progressive] == 16);
        CHECK(kinds[SweepKind::zero_shot] == 4);
        CHECK(kinds[SweepKind::cross_resolution] == 4);
        CHECK(kinds[SweepKind::cross_plant] == 4);
        REQUIRE(result.report);
        for (const auto& m : result.report->cross_resolution) {
            CHECK(m.holes() == 0);
        }
        for (const auto& m : result.report->cross_plant) {
            CHECK(m.holes() == 0);
        }
        for (const auto& entry : result.jobs) {
            if (entry.regime == Regime::full) {
                const auto tuned = load_best_hyperparams(layout, entry.plant, entry.resolution_px);
                REQUIRE(tuned);
                CHECK(entry.job.hyperparams.epochs == tuned->epochs);
                CHECK(entry.job.hyperparams.batch_size == tuned->batch_size);
            }
        }

        const auto report_input = load_report_input(layout);
        CHECK(report_input.sweeps.size() == result.sweeps.size());
        CHECK(report_input.jobs.size() == result.jobs.size());

        const auto calls = mock.call_log().size();
        const auto again = run_matrix(layout, config, mock, mock);
        CHECK(again.ok());
        CHECK(mock.call_log().size() == calls);
    }
}
