#include "leafbench/config.hpp"
#include "leafbench/eval.hpp"
#include "leafbench/io.hpp"
#include "leafbench/scheduler.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using namespace leafbench;
using nlohmann::json;

namespace {

// Raw flag values; each is applied only when given on the command line.
struct Flags {
    std::string config, run_dir, dataset_root, plants, resolutions, regimes, backend, study_backend, base_model,
        zero_shot_models, base_url, image_base_url, hyperparameters;
    std::uint64_t seed = 0;
    std::size_t parallelism = 0, per_class = 0, phase_size = 0;
    long poll_interval_ms = 0;
    int n_trials = 0;
    bool no_cross = false;

    // finetune
    int epochs = 0, batch_size = 0;
    double learning_rate = 0.0;
    // predict
    std::string model, test;
    std::size_t limit = 0, offset = 0;
    // evaluate
    std::string sweep;

    std::map<std::string, CLI::Option*> given;
};

class Cli {
public:
    Cli() : app_("Fine-tuning benchmark harness for leaf disease classification.", "leafbench")
    {
        app_.require_subcommand(1);
        app_.set_version_flag("--version", "leafbench 0.1.0");

        auto* curate = add("curate", "Scan, balance, split, thumbnail and export manifests");
        common(curate);
        domains(curate);
        flag(curate, "--dataset-root", f_.dataset_root, "Directory holding <Plant>/<label>/ images");
        flag(curate, "--per-class", f_.per_class, "Images kept per class");
        flag(curate, "--phase-size", f_.phase_size, "Train samples per progressive phase");
        flag(curate, "--image-base-url", f_.image_base_url, "Prefix for public image URLs");

        auto* optimize = add("optimize", "Run the hyperparameter study for each domain");
        common(optimize);
        domains(optimize);
        flag(optimize, "--n-trials", f_.n_trials, "Trials per study");

        auto* finetune = add("finetune", "Full fine-tune on the train set, then predict the test set");
        common(finetune);
        domains(finetune);
        flag(finetune, "--hyperparameters", f_.hyperparameters, "study or default");
        flag(finetune, "--epochs", f_.epochs, "Explicit epochs (needs --batch-size)");
        flag(finetune, "--batch-size", f_.batch_size, "Explicit batch size (needs --epochs)");
        flag(finetune, "--learning-rate", f_.learning_rate, "Explicit learning rate");

        auto* progressive = add("progressive", "Four chained fine-tunes of 128 samples, each predicted");
        common(progressive);
        domains(progressive);

        auto* zeroshot = add("zeroshot", "Predict the test sets with untuned models");
        common(zeroshot);
        domains(zeroshot);
        flag(zeroshot, "--zero-shot-models", f_.zero_shot_models, "Comma-separated model ids");

        auto* predict = add("predict", "Classify test images with one model and print the records");
        common(predict);
        predict->add_option("--model", f_.model, "Model id")->required();
        predict->add_option("--test", f_.test, "Test set as <plant>/<resolution>, e.g. corn/256")->required();
        predict->add_option("--limit", f_.limit, "Classify at most this many samples (0 = all)");
        predict->add_option("--offset", f_.offset, "Skip this many samples first");

        auto* evaluate = add("evaluate", "Metrics and heatmaps for completed sweeps");
        common(evaluate);
        evaluate->add_option("--sweep", f_.sweep, "Only sweeps whose name starts with this");

        auto* report = add("report", "Write the report tables, heatmaps and summary");
        common(report);

        auto* matrix = add("matrix", "Run every regime over every domain, then cross sweeps and the report");
        common(matrix);
        domains(matrix);
        flag(matrix, "--regimes", f_.regimes, "Comma-separated: full, progressive, zero_shot");
        flag(matrix, "--hyperparameters", f_.hyperparameters, "study or default");
        flag(matrix, "--n-trials", f_.n_trials, "Trials per study");
        flag(matrix, "--zero-shot-models", f_.zero_shot_models, "Comma-separated model ids");
        matrix->add_flag("--no-cross", f_.no_cross, "Skip cross-resolution and cross-plant sweeps");
    }

    int run(int argc, char** argv)
    {
        try {
            app_.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            return app_.exit(e);
        }
        const auto* sub = app_.get_subcommands().front();
        try {
            auto config = resolve();
            return dispatch(sub->get_name(), config);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    }

private:
    CLI::App* add(const std::string& name, const std::string& description)
    {
        auto* sub = app_.add_subcommand(name, description);
        sub->footer("Settings come from flags, then LEAFBENCH_* variables, then the TOML file.");
        return sub;
    }

    template <typename T>
    void flag(CLI::App* sub, const std::string& name, T& target, const std::string& description)
    {
        f_.given[sub->get_name() + name] = sub->add_option(name, target, description);
    }

    void common(CLI::App* sub)
    {
        flag(sub, "--config", f_.config, "TOML config file (default: $LEAFBENCH_CONFIG)");
        flag(sub, "--run-dir", f_.run_dir, "Run directory");
        flag(sub, "--seed", f_.seed, "Random seed");
        flag(sub, "--backend", f_.backend, "mock, remote or subprocess");
        flag(sub, "--study-backend", f_.study_backend, "Backend for study trials");
        flag(sub, "--base-model", f_.base_model, "Base model id");
        flag(sub, "--parallelism", f_.parallelism, "Concurrent predictions per sweep");
        flag(sub, "--poll-interval-ms", f_.poll_interval_ms, "Delay between job polls");
        flag(sub, "--base-url", f_.base_url, "Remote API base URL");
    }

    void domains(CLI::App* sub)
    {
        flag(sub, "--plants,--plant", f_.plants, "Comma-separated plants");
        flag(sub, "--resolutions,--resolution", f_.resolutions, "Comma-separated resolutions");
    }

    bool given(const std::string& name) const
    {
        const auto* sub = app_.get_subcommands().front();
        const auto it = f_.given.find(sub->get_name() + name);
        return it != f_.given.end() && it->second->count() > 0;
    }

    config::RunConfig resolve() const
    {
        std::optional<fs::path> file;
        if (given("--config")) {
            file = f_.config;
        }
        auto c = config::load(file, config::process_env());
        if (given("--run-dir")) {
            c.run_dir = f_.run_dir;
        }
        if (given("--dataset-root")) {
            c.dataset_root = f_.dataset_root;
        }
        if (given("--plants,--plant")) {
            c.plants = config::parse_plants(f_.plants);
        }
        if (given("--resolutions,--resolution")) {
            c.resolutions = config::parse_resolutions(f_.resolutions);
        }
        if (given("--regimes")) {
            c.regimes = config::parse_regimes(f_.regimes);
        }
        if (given("--seed")) {
            c.seed = f_.seed;
        }
        if (given("--backend")) {
            c.backend = f_.backend;
        }
        if (given("--study-backend")) {
            c.study_backend = f_.study_backend;
        }
        if (given("--base-model")) {
            c.base_model = f_.base_model;
        }
        if (given("--zero-shot-models")) {
            c.zero_shot_models = config::split_list(f_.zero_shot_models);
        }
        if (given("--parallelism")) {
            c.parallelism = f_.parallelism;
        }
        if (given("--poll-interval-ms")) {
            c.poll_interval = std::chrono::milliseconds(f_.poll_interval_ms);
        }
        if (given("--base-url")) {
            c.remote.base_url = f_.base_url;
        }
        if (given("--image-base-url")) {
            c.image_base_url = f_.image_base_url;
        }
        if (given("--per-class")) {
            c.per_class = f_.per_class;
        }
        if (given("--phase-size")) {
            c.phase_size = f_.phase_size;
        }
        if (given("--n-trials")) {
            c.n_trials = f_.n_trials;
        }
        if (given("--hyperparameters")) {
            if (f_.hyperparameters != "study" && f_.hyperparameters != "default") {
                throw config::ConfigError("--hyperparameters must be study or default");
            }
            c.full_hp_source = f_.hyperparameters == "study" ? scheduler::HpSource::tpe_study
                                                            : scheduler::HpSource::backend_default;
        }
        if (f_.no_cross) {
            c.cross_resolution = c.cross_plant = false;
        }
        c.run_dir = fs::absolute(c.run_dir).lexically_normal();
        if (!c.dataset_root.empty()) {
            c.dataset_root = fs::absolute(c.dataset_root).lexically_normal();
        }
        c.validate();
        return c;
    }

    int dispatch(const std::string& name, const config::RunConfig& c)
    {
        if (name == "curate") {
            return curate(c);
        }
        if (name == "optimize") {
            return optimize(c);
        }
        if (name == "predict") {
            return predict(c);
        }
        if (name == "evaluate") {
            return evaluate(c);
        }
        if (name == "report") {
            return report(c);
        }
        auto m = c.matrix_config();
        if (name == "finetune") {
            m.regimes = {Regime::full};
            m.run_missing_study = false;
            if (given("--epochs") || given("--batch-size") || given("--learning-rate")) {
                if (!given("--epochs") || !given("--batch-size")) {
                    throw config::ConfigError("--epochs and --batch-size go together");
                }
                backends::HyperParams hp{f_.epochs, f_.batch_size, std::nullopt};
                if (given("--learning-rate")) {
                    hp.learning_rate = f_.learning_rate;
                }
                hp.validate();
                m.full_hp_override = hp;
            }
        } else if (name == "progressive") {
            m.regimes = {Regime::progressive};
        } else if (name == "zeroshot") {
            m.regimes = {Regime::zero_shot};
        }
        if (name != "matrix") {
            m.cross_resolution = m.cross_plant = false;
            m.emit_report = false;
        }
        return matrix(c, m);
    }

    int curate(const config::RunConfig& c)
    {
        if (c.dataset_root.empty()) {
            throw config::ConfigError("curate needs --dataset-root");
        }
        const auto layout = c.layout();
        for (auto plant : c.plants) {
            scheduler::CurateOptions o;
            o.dataset_root = c.dataset_root;
            o.plant = plant;
            o.per_class = c.per_class;
            o.seed = c.seed;
            o.resolutions = c.resolutions;
            o.phase_size = c.phase_size;
            o.image_base_url = c.image_base_url;
            const auto result = scheduler::curate(layout, o);
            for (const auto& w : result.warnings) {
                std::cerr << "warning: " << w << "\n";
            }
            for (const auto& m : result.manifests) {
                std::cout << m.string() << "\n";
            }
        }
        return 0;
    }

    int optimize(const config::RunConfig& c)
    {
        const auto study_name = c.study_backend.empty() ? c.backend : c.study_backend;
        auto backend = config::make_backend(c, study_name);
        auto options = c.scheduler_options();
        options.poll_interval = c.effective_poll_interval(study_name);
        scheduler::Scheduler sched(c.layout(), *backend, options);
        int failures = 0;
        for (auto plant : c.plants) {
            for (int res : c.resolutions) {
                scheduler::ExperimentPlan plan{plant,       res, Regime::full, scheduler::HpSource::tpe_study,
                                               study_name, c.base_model};
                try {
                    const auto data = scheduler::load_domain(c.layout(), plant, res);
                    const auto result = sched.run_study(plan, data, c.space, c.study_options());
                    json line{{"domain", std::string(dataset::to_string(plant)) + "/" + std::to_string(res)},
                              {"trial_id", result.best.trial_id},
                              {"objective", result.best.objective.value_or(0.0)},
                              {"params", tpe::params_to_json(result.best.params)}};
                    std::cout << line.dump() << "\n";
                } catch (const std::exception& e) {
                    std::cerr << "error: " << plan.key() << ": " << e.what() << "\n";
                    ++failures;
                }
            }
        }
        return failures == 0 ? 0 : 1;
    }

    int matrix(const config::RunConfig& c, const scheduler::MatrixConfig& m)
    {
        auto backend = config::make_backend(c, c.backend);
        std::unique_ptr<backends::Backend> study;
        const bool needs_study = !c.study_backend.empty() && c.study_backend != c.backend &&
                                 std::count(m.regimes.begin(), m.regimes.end(), Regime::full) > 0;
        if (needs_study) {
            study = config::make_backend(c, c.study_backend);
        }
        const auto result =
            scheduler::run_matrix(c.layout(), m, *backend, study ? *study : *backend, c.scheduler_options());

        std::printf("jobs: %zu\n", result.jobs.size());
        for (const auto& s : result.sweeps) {
            std::printf("%-48s %-40s accuracy %.4f\n", s.spec.name.c_str(), s.spec.model_id.c_str(),
                        s.metrics.accuracy);
        }
        if (result.report) {
            std::printf("report: %s\n", result.report->summary.string().c_str());
        }
        for (const auto& f : result.failures) {
            std::cerr << "error: " << f << "\n";
        }
        return result.ok() ? 0 : 1;
    }

    int predict(const config::RunConfig& c)
    {
        const auto slash = f_.test.find('/');
        if (slash == std::string::npos) {
            throw config::ConfigError("--test must look like <plant>/<resolution>");
        }
        const auto plant = dataset::parse_plant(f_.test.substr(0, slash));
        const auto res = config::parse_resolutions(f_.test.substr(slash + 1));
        if (res.size() != 1) {
            throw config::ConfigError("--test must name one resolution");
        }
        const auto manifest = c.layout().manifest_csv(plant, res[0]);
        if (!fs::exists(manifest)) {
            throw config::ConfigError("no curated manifest " + manifest.string() + "; run curate first");
        }
        const auto set = dataset::import_manifest_csv(manifest);
        const auto samples = set.samples_in(set.split.test);
        auto backend = config::make_backend(c, c.backend);
        const auto end = f_.limit == 0 ? samples.size() : std::min(samples.size(), f_.offset + f_.limit);
        int errors = 0;
        for (auto i = f_.offset; i < end; ++i) {
            const auto rec = scheduler::classify_sample(*backend, f_.model, samples[i], i);
            std::cout << rec.to_json().dump() << "\n";
            errors += rec.error.empty() ? 0 : 1;
        }
        return errors == 0 ? 0 : 1;
    }

    int evaluate(const config::RunConfig& c)
    {
        const auto layout = c.layout();
        const auto input = scheduler::load_report_input(layout);
        int shown = 0;
        for (const auto& s : input.sweeps) {
            if (!f_.sweep.empty() && s.spec.name.rfind(f_.sweep, 0) != 0) {
                continue;
            }
            const auto dir = layout.reports() / "heatmaps";
            eval::emit_heatmap(s.cm, dir / (s.spec.name + ".svg"), dir / (s.spec.name + ".csv"), s.spec.name);
            json line{{"sweep", s.spec.name},         {"model", s.spec.model_id},
                      {"accuracy", s.metrics.accuracy}, {"precision", s.metrics.precision},
                      {"recall", s.metrics.recall},     {"f1", s.metrics.f1},
                      {"total", s.metrics.total},       {"duration_s", s.metrics.duration_s},
                      {"cost_usd", s.metrics.cost_usd}};
            std::cout << line.dump() << "\n";
            ++shown;
        }
        if (shown == 0) {
            throw config::ConfigError(f_.sweep.empty() ? "no completed sweeps" : "no completed sweep " + f_.sweep);
        }
        return 0;
    }

    int report(const config::RunConfig& c)
    {
        const auto layout = c.layout();
        const auto out = eval::emit_report(scheduler::load_report_input(layout), layout.reports());
        for (const auto& t : out.tables) {
            std::cout << t.string() << "\n";
        }
        std::cout << out.summary.string() << "\n";
        return 0;
    }

    CLI::App app_;
    Flags f_;
};

} // namespace

int main(int argc, char** argv)
{
    Cli cli;
    return cli.run(argc, argv);
}
