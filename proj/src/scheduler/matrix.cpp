#include "leafbench/scheduler.hpp"

#include "leafbench/io.hpp"
#include "leafbench/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace leafbench::scheduler {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sweep_name(const SweepSpec& spec)
{
    const std::string train_plant(dataset::to_string(spec.train_plant));
    const std::string test_plant(dataset::to_string(spec.test_plant));
    const auto res = [](int px) { return std::to_string(px); };
    char tag[10];
    std::snprintf(tag, sizeof(tag), "-%08llx",
                  static_cast<unsigned long long>(stable_hash(spec.model_id) & 0xffffffffULL));
    switch (spec.kind) {
    case SweepKind::few_shot:
        return "fewshot-" + test_plant + "-" + res(spec.test_resolution) + tag;
    case SweepKind::progressive:
        return "progressive-" + test_plant + "-" + res(spec.test_resolution) + "-phase" +
               std::to_string(spec.phase.value_or(0)) + tag;
    case SweepKind::zero_shot: {
        std::string model;
        for (char c : spec.model_id) {
            model += std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ? c : '_';
        }
        return "zeroshot-" + test_plant + "-" + res(spec.test_resolution) + "-" + model;
    }
    case SweepKind::cross_resolution:
        return "crossres-" + test_plant + "-" + res(spec.train_resolution) + "-to-" + res(spec.test_resolution) + tag;
    case SweepKind::cross_plant:
        return "crossplant-" + train_plant + "-to-" + test_plant + "-" + res(spec.test_resolution) + tag;
    }
    return spec.name;
}

MatrixResult run_matrix(const RunLayout& layout, const MatrixConfig& config, backends::Backend& backend,
                        backends::Backend& study_backend, const SchedulerOptions& options)
{
    MatrixResult result;
    Scheduler scheduler(layout, backend, options);
    scheduler.set_study_backend(study_backend);

    const auto wants = [&](Regime r) {
        return std::find(config.regimes.begin(), config.regimes.end(), r) != config.regimes.end();
    };
    const bool any_plan = !config.plants.empty() && !config.resolutions.empty() && !config.regimes.empty();
    if (any_plan && config.base_model.empty()) {
        throw SchedulerError("matrix needs a base model");
    }
    auto zero_shot_models = config.zero_shot_models;
    if (zero_shot_models.empty()) {
        zero_shot_models.push_back(config.base_model);
    }

    std::map<std::pair<dataset::Plant, int>, DomainData> domains;
    if (any_plan) {
        for (auto plant : config.plants) {
            for (int res : config.resolutions) {
                try {
                    domains.emplace(std::make_pair(plant, res), load_domain(layout, plant, res));
                } catch (const std::exception& e) {
                    result.failures.push_back(e.what());
                }
            }
        }
    }

    const auto sweep = [&](SweepSpec spec, const std::vector<dataset::ImageSample>& samples) {
        spec.name = sweep_name(spec);
        try {
            const auto run = scheduler.run_prediction_sweep(spec, samples);
            result.sweeps.push_back(eval::summarize_sweep(spec, run.records));
        } catch (const std::exception& e) {
            result.failures.push_back("sweep " + spec.name + ": " + e.what());
        }
    };
    const auto same_domain = [](SweepKind kind, const DomainData& d, std::string model) {
        SweepSpec s;
        s.kind = kind;
        s.model_id = std::move(model);
        s.train_plant = s.test_plant = d.plant();
        s.train_resolution = s.test_resolution = d.resolution();
        return s;
    };

    for (auto plant : config.plants) {
        for (int res : config.resolutions) {
            auto found = domains.find({plant, res});
            if (found == domains.end()) {
                continue;
            }
            const auto& data = found->second;
            const auto test = data.test_samples();

            if (wants(Regime::full)) {
                ExperimentPlan plan{plant, res, Regime::full, config.full_hp_source, config.backend, config.base_model};
                try {
                    std::optional<backends::HyperParams> hp = config.full_hp_override;
                    if (!hp && plan.hp_source == HpSource::tpe_study) {
                        auto tuned = load_best_hyperparams(layout, plant, res);
                        if (!tuned && !config.run_missing_study) {
                            throw SchedulerError("no study results; run optimize first");
                        }
                        if (!tuned) {
                            scheduler.run_study(plan, data, config.space, config.study);
                            tuned = load_best_hyperparams(layout, plant, res);
                        }
                        if (!options.transfer_learning_rate) {
                            tuned->learning_rate.reset();
                        }
                        hp = tuned;
                    }
                    auto entry = scheduler.run_full_finetune(plan, data, hp);
                    result.jobs.push_back(entry);
                    if (entry.job.status == backends::JobStatus::succeeded && entry.job.output_model) {
                        sweep(same_domain(SweepKind::few_shot, data, *entry.job.output_model), test);
                    } else {
                        result.failures.push_back(plan.key() + ": job " + entry.job.job_id + " failed: " +
                                                  entry.job.error);
                    }
                } catch (const std::exception& e) {
                    result.failures.push_back(plan.key() + ": " + e.what());
                }
            }

            if (wants(Regime::progressive)) {
                ExperimentPlan plan{plant, res, Regime::progressive, HpSource::backend_default, config.backend,
                                    config.base_model};
                try {
                    const auto entries = scheduler.run_progressive(plan, data);
                    for (const auto& entry : entries) {
                        result.jobs.push_back(entry);
                        if (entry.job.status == backends::JobStatus::succeeded && entry.job.output_model) {
                            auto spec = same_domain(SweepKind::progressive, data, *entry.job.output_model);
                            spec.phase = entry.phase;
                            sweep(spec, test);
                        } else {
                            result.failures.push_back(plan.key() + ": phase " +
                                                      std::to_string(entry.phase.value_or(0)) + " failed: " +
                                                      entry.job.error);
                        }
                    }
                } catch (const std::exception& e) {
                    result.failures.push_back(plan.key() + ": " + e.what());
                }
            }

            if (wants(Regime::zero_shot)) {
                for (const auto& model : zero_shot_models) {
                    sweep(same_domain(SweepKind::zero_shot, data, model), test);
                }
            }
        }
    }

    if (wants(Regime::full) || wants(Regime::progressive)) {
        if (config.cross_resolution) {
            for (auto plant : config.plants) {
                for (int train_res : config.resolutions) {
                    const auto* best = eval::select_best(result.sweeps, plant, train_res);
                    if (best == nullptr) {
                        continue;
                    }
                    const auto model = best->spec.model_id;
                    for (int test_res : config.resolutions) {
                        auto target = domains.find({plant, test_res});
                        if (test_res == train_res || target == domains.end()) {
                            continue;
                        }
                        SweepSpec spec;
                        spec.kind = SweepKind::cross_resolution;
                        spec.model_id = model;
                        spec.train_plant = spec.test_plant = plant;
                        spec.train_resolution = train_res;
                        spec.test_resolution = test_res;
                        sweep(spec, target->second.test_samples());
                    }
                }
            }
        }
        if (config.cross_plant) {
            for (int res : config.resolutions) {
                for (auto train_plant : config.plants) {
                    const auto* best = eval::select_best(result.sweeps, train_plant, res);
                    if (best == nullptr) {
                        continue;
                    }
                    const auto model = best->spec.model_id;
                    for (auto test_plant : config.plants) {
                        auto target = domains.find({test_plant, res});
                        if (test_plant == train_plant || target == domains.end()) {
                            continue;
                        }
                        SweepSpec spec;
                        spec.kind = SweepKind::cross_plant;
                        spec.model_id = model;
                        spec.train_plant = train_plant;
                        spec.test_plant = test_plant;
                        spec.train_resolution = spec.test_resolution = res;
                        sweep(spec, target->second.test_samples());
                    }
                }
            }
        }
    }

    if (config.emit_report && !result.sweeps.empty()) {
        try {
            result.report = eval::emit_report(load_report_input(layout), layout.reports());
        } catch (const std::exception& e) {
            result.failures.push_back(std::string("report: ") + e.what());
        }
    }
    return result;
}

eval::ReportInput load_report_input(const RunLayout& layout)
{
    eval::ReportInput input;
    if (fs::exists(layout.journal())) {
        for (auto& entry : Journal(layout.journal()).entries()) {
            if (!entry.trial) {
                input.jobs.push_back(std::move(entry));
            }
        }
    }
    if (!fs::exists(layout.predictions())) {
        return input;
    }
    std::vector<fs::path> metas;
    for (const auto& item : fs::directory_iterator(layout.predictions())) {
        const auto name = item.path().filename().string();
        if (name.size() > 10 && name.compare(name.size() - 10, 10, ".meta.json") == 0) {
            metas.push_back(item.path());
        }
    }
    std::sort(metas.begin(), metas.end());
    for (const auto& meta_path : metas) {
        const auto meta = json::parse(io::read_text(meta_path));
        const auto spec = SweepSpec::from_json(meta);
        const auto expected = meta.value("samples", std::size_t{0});
        const auto records_path = layout.predictions() / (spec.name + ".jsonl");
        if (expected == 0 || !fs::exists(records_path)) {
            continue;
        }
        std::vector<PredictionRecord> records;
        for (const auto& line : io::read_jsonl(records_path)) {
            records.push_back(PredictionRecord::from_json(line));
        }
        if (records.size() == expected) {
            input.sweeps.push_back(eval::summarize_sweep(spec, records));
        }
    }
    return input;
}

} // namespace leafbench::scheduler
