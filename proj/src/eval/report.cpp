#include "leafbench/eval.hpp"

#include "leafbench/csv.hpp"
#include "leafbench/io.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

namespace leafbench::eval {

namespace fs = std::filesystem;

namespace {

std::string fixed(double value, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, value);
    return buf;
}

std::string opt_fixed(const std::optional<double>& value, int digits)
{
    return value ? fixed(*value, digits) : std::string();
}

csv::Row split_header(std::string_view header)
{
    return csv::parse(std::string(header) + "\n").at(0);
}

std::string plant_name(dataset::Plant plant)
{
    return std::string(dataset::display_name(plant));
}

// Apple before corn, high resolution first, then phase.
auto domain_order(dataset::Plant plant, int resolution, int phase)
{
    return std::make_tuple(static_cast<int>(plant), -resolution, phase);
}

csv::Row metric_cells(const MetricsReport& m)
{
    return {fixed(m.accuracy, 4), fixed(m.precision, 4), fixed(m.recall, 4),
            fixed(m.f1, 4),       fixed(m.duration_s, 2), fixed(m.cost_usd, 4)};
}

csv::Row hole_cells()
{
    return csv::Row(6);
}

std::vector<const SweepReport*> sweeps_of(const ReportInput& input, SweepKind kind)
{
    std::vector<const SweepReport*> out;
    for (const auto& s : input.sweeps) {
        if (s.spec.kind == kind) {
            out.push_back(&s);
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const SweepReport* a, const SweepReport* b) {
        const auto ka = std::make_tuple(static_cast<int>(a->spec.train_plant), static_cast<int>(a->spec.test_plant),
                                        -a->spec.train_resolution, -a->spec.test_resolution,
                                        a->spec.phase.value_or(0), a->spec.model_id);
        const auto kb = std::make_tuple(static_cast<int>(b->spec.train_plant), static_cast<int>(b->spec.test_plant),
                                        -b->spec.train_resolution, -b->spec.test_resolution,
                                        b->spec.phase.value_or(0), b->spec.model_id);
        return ka < kb;
    });
    return out;
}

std::vector<const JobLedgerEntry*> jobs_of(const ReportInput& input, Regime regime)
{
    std::vector<const JobLedgerEntry*> out;
    for (const auto& j : input.jobs) {
        if (j.regime == regime && !j.trial) {
            out.push_back(&j);
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const JobLedgerEntry* a, const JobLedgerEntry* b) {
        return domain_order(a->plant, a->resolution_px, a->phase.value_or(0)) <
               domain_order(b->plant, b->resolution_px, b->phase.value_or(0));
    });
    return out;
}

std::vector<csv::Row> result_rows(const std::vector<const SweepReport*>& sweeps)
{
    std::vector<csv::Row> rows;
    for (const auto* s : sweeps) {
        csv::Row row{plant_name(s->spec.test_plant), s->spec.prediction_column(), s->spec.model_id};
        const auto cells = metric_cells(s->metrics);
        row.insert(row.end(), cells.begin(), cells.end());
        rows.push_back(std::move(row));
    }
    return rows;
}

// Domains (plant, resolution) that have a best fine-tuned model.
std::map<std::pair<dataset::Plant, int>, const SweepReport*> best_models(const ReportInput& input)
{
    std::map<std::pair<dataset::Plant, int>, const SweepReport*> best;
    for (const auto& s : input.sweeps) {
        const auto key = std::make_pair(s.spec.test_plant, s.spec.test_resolution);
        if (best.count(key) == 0) {
            if (const auto* b = select_best(input.sweeps, key.first, key.second)) {
                best[key] = b;
            }
        }
    }
    return best;
}

} // namespace

ReportOutput emit_report(const ReportInput& input, const fs::path& out_dir)
{
    if (input.sweeps.empty()) {
        throw EvalError("nothing to report");
    }
    ReportOutput out;
    auto write = [&](const std::string& file, std::string_view header, const std::vector<csv::Row>& rows) {
        const auto path = out_dir / file;
        csv::write_file(path, split_header(header), rows);
        out.tables.push_back(path);
    };

    std::vector<csv::Row> rows;
    for (const auto* j : jobs_of(input, Regime::full)) {
        const auto& job = j->job;
        rows.push_back({plant_name(j->plant), j->subset_identifier(), std::to_string(job.hyperparams.epochs),
                        std::to_string(job.hyperparams.batch_size), opt_fixed(job.train_loss, 4),
                        opt_fixed(job.full_validation_loss, 4), opt_fixed(job.duration_s, 1),
                        opt_fixed(job.cost_usd, 4), job.base_model, job.output_model.value_or(""),
                        std::string(backends::to_string(job.status))});
    }
    write("finetune_ledger.csv", kFinetuneLedgerHeader, rows);

    write("fewshot_results.csv", kFewShotHeader, result_rows(sweeps_of(input, SweepKind::few_shot)));

    rows.clear();
    for (const auto* j : jobs_of(input, Regime::progressive)) {
        const auto& job = j->job;
        rows.push_back({plant_name(j->plant), j->subset_identifier(),
                        job.trained_tokens ? std::to_string(*job.trained_tokens) : std::string(),
                        std::to_string(job.trained_samples), opt_fixed(job.train_loss, 4),
                        opt_fixed(job.full_validation_loss, 4), opt_fixed(job.duration_s, 1),
                        opt_fixed(job.cost_usd, 4), job.base_model, job.output_model.value_or(""),
                        std::to_string(j->errors()), std::string(backends::to_string(job.status))});
    }
    write("progressive_ledger.csv", kProgressiveLedgerHeader, rows);

    write("progressive_results.csv", kProgressiveResultsHeader,
          result_rows(sweeps_of(input, SweepKind::progressive)));
    write("zeroshot_results.csv", kZeroShotHeader, result_rows(sweeps_of(input, SweepKind::zero_shot)));

    const auto best = best_models(input);
    std::set<dataset::Plant> plants;
    std::map<dataset::Plant, std::set<int, std::greater<>>> resolutions_of;
    std::map<int, std::set<dataset::Plant>, std::greater<>> plants_at;
    for (const auto& [key, sweep] : best) {
        plants.insert(key.first);
        resolutions_of[key.first].insert(key.second);
        plants_at[key.second].insert(key.first);
    }

    rows.clear();
    for (auto plant : plants) {
        std::vector<std::string> keys;
        for (int r : resolutions_of[plant]) {
            keys.push_back(std::to_string(r));
        }
        std::vector<CrossInput> inputs;
        for (int r : resolutions_of[plant]) {
            const auto* b = best.at({plant, r});
            inputs.push_back({Axis::resolution, std::to_string(r), std::to_string(r), b->spec.model_id, b->metrics});
        }
        for (const auto* s : sweeps_of(input, SweepKind::cross_resolution)) {
            if (s->spec.train_plant == plant && resolutions_of[plant].count(s->spec.train_resolution) &&
                resolutions_of[plant].count(s->spec.test_resolution)) {
                inputs.push_back({Axis::resolution, std::to_string(s->spec.train_resolution),
                                  std::to_string(s->spec.test_resolution), s->spec.model_id, s->metrics});
            }
        }
        auto matrix = build_cross_matrix(Axis::resolution, keys, keys, inputs);
        for (const auto& cell : matrix.cells) {
            SweepSpec spec;
            spec.kind = cell.train_key == cell.test_key ? SweepKind::few_shot : SweepKind::cross_resolution;
            spec.train_plant = spec.test_plant = plant;
            spec.train_resolution = std::stoi(cell.train_key);
            spec.test_resolution = std::stoi(cell.test_key);
            csv::Row row{plant_name(plant), cell.train_key, cell.test_key,
                         spec.prediction_column(), cell.model_id};
            const auto cells = cell.report ? metric_cells(*cell.report) : hole_cells();
            row.insert(row.end(), cells.begin(), cells.end());
            rows.push_back(std::move(row));
        }
        out.cross_resolution.push_back(std::move(matrix));
    }
    write("cross_resolution.csv", kCrossResolutionHeader, rows);

    rows.clear();
    for (const auto& [resolution, present] : plants_at) {
        std::vector<std::string> keys;
        for (auto p : present) {
            keys.emplace_back(dataset::to_string(p));
        }
        std::vector<CrossInput> inputs;
        for (auto p : present) {
            const auto* b = best.at({p, resolution});
            inputs.push_back({Axis::plant, std::string(dataset::to_string(p)), std::string(dataset::to_string(p)),
                              b->spec.model_id, b->metrics});
        }
        for (const auto* s : sweeps_of(input, SweepKind::cross_plant)) {
            if (s->spec.test_resolution == resolution && present.count(s->spec.train_plant) &&
                present.count(s->spec.test_plant)) {
                inputs.push_back({Axis::plant, std::string(dataset::to_string(s->spec.train_plant)),
                                  std::string(dataset::to_string(s->spec.test_plant)), s->spec.model_id, s->metrics});
            }
        }
        auto matrix = build_cross_matrix(Axis::plant, keys, keys, inputs);
        for (const auto& cell : matrix.cells) {
            SweepSpec spec;
            spec.kind = SweepKind::cross_plant;
            spec.train_plant = dataset::parse_plant(cell.train_key);
            spec.test_plant = dataset::parse_plant(cell.test_key);
            spec.train_resolution = spec.test_resolution = resolution;
            if (spec.train_plant == spec.test_plant) {
                spec.kind = SweepKind::few_shot;
            }
            csv::Row row{plant_name(spec.train_plant), plant_name(spec.test_plant), std::to_string(resolution),
                         spec.prediction_column(), cell.model_id};
            const auto cells = cell.report ? metric_cells(*cell.report) : hole_cells();
            row.insert(row.end(), cells.begin(), cells.end());
            rows.push_back(std::move(row));
        }
        out.cross_plant.push_back(std::move(matrix));
    }
    write("cross_plant.csv", kCrossPlantHeader, rows);

    for (const auto& s : input.sweeps) {
        const auto svg = out_dir / "heatmaps" / (s.spec.name + ".svg");
        const auto grid = out_dir / "heatmaps" / (s.spec.name + ".csv");
        emit_heatmap(s.cm, svg, grid, plant_name(s.spec.test_plant) + " " + s.spec.prediction_column() + " (" +
                                          s.spec.model_id + ")");
        out.heatmaps.push_back(svg);
        out.heatmaps.push_back(grid);
    }

    // Summary: best fine-tuned model per domain against the best zero-shot run.
    std::map<std::pair<dataset::Plant, int>, double> zero_shot;
    for (const auto& s : input.sweeps) {
        if (s.spec.kind == SweepKind::zero_shot) {
            const auto key = std::make_pair(s.spec.test_plant, s.spec.test_resolution);
            auto it = zero_shot.find(key);
            if (it == zero_shot.end() || s.metrics.accuracy > it->second) {
                zero_shot[key] = s.metrics.accuracy;
            }
        }
    }
    std::set<std::pair<dataset::Plant, int>> domains;
    for (const auto& [key, b] : best) {
        domains.insert(key);
    }
    for (const auto& [key, acc] : zero_shot) {
        domains.insert(key);
    }
    std::vector<std::pair<dataset::Plant, int>> ordered(domains.begin(), domains.end());
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        return domain_order(a.first, a.second, 0) < domain_order(b.first, b.second, 0);
    });

    const bool with_zero_shot = !zero_shot.empty();
    std::string md = "# Run summary\n\n";
    md += "Sweeps: " + std::to_string(input.sweeps.size()) + ", fine-tune jobs: " + std::to_string(input.jobs.size()) +
          "\n\n## Fine-tuned vs zero-shot\n\n";
    md += "| Plant | Resolution | Best model | Fine-tuned accuracy |";
    md += with_zero_shot ? " Zero-shot accuracy | Improvement (points) |\n" : "\n";
    md += with_zero_shot ? "|---|---|---|---|---|---|\n" : "|---|---|---|---|\n";
    for (const auto& key : ordered) {
        const auto b = best.find(key);
        const auto z = zero_shot.find(key);
        md += "| " + plant_name(key.first) + " | " + std::to_string(key.second) + " | ";
        md += b != best.end() ? b->second->spec.model_id + " | " + fixed(b->second->metrics.accuracy, 4) + " |"
                              : std::string(" |  |");
        if (with_zero_shot) {
            md += z != zero_shot.end() ? " " + fixed(z->second, 4) + " |" : std::string("  |");
            if (b != best.end() && z != zero_shot.end()) {
                md += " " + fixed(improvement_points(b->second->metrics.accuracy, z->second), 2) + " |";
            } else {
                md += "  |";
            }
        }
        md += "\n";
    }
    md += "\n## Tables\n\n";
    for (const auto& t : out.tables) {
        md += "- " + t.filename().string() + "\n";
    }
    md += "\nHeatmaps: " + std::to_string(input.sweeps.size()) + " in heatmaps/\n";
    out.summary = out_dir / "summary.md";
    io::write_text_atomic(out.summary, md);
    return out;
}

} // namespace leafbench::eval
