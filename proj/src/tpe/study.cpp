#include "leafbench/tpe.hpp"

#include "leafbench/csv.hpp"
#include "leafbench/io.hpp"
#include "leafbench/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

namespace leafbench::tpe {

namespace {

double median(std::vector<double> values)
{
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string format_number(double value)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", value);
    return buf;
}

} // namespace

bool should_prune(const TrialRecord& trial, const TrialHistory& history, int epoch, const TpeSettings& settings)
{
    if (epoch < 1 || static_cast<std::size_t>(epoch) > trial.intermediate.size()) {
        throw TpeError("trial " + std::to_string(trial.trial_id) + " has no value at epoch " + std::to_string(epoch));
    }
    if (epoch < settings.warmup) {
        return false;
    }
    std::vector<double> peers;
    for (const auto& r : history.records()) {
        if (r.state == TrialState::complete && r.trial_id != trial.trial_id &&
            r.intermediate.size() >= static_cast<std::size_t>(epoch)) {
            peers.push_back(r.intermediate[static_cast<std::size_t>(epoch - 1)]);
        }
    }
    if (peers.size() < static_cast<std::size_t>(std::max(settings.min_trials, 1))) {
        return false;
    }
    return trial.intermediate[static_cast<std::size_t>(epoch - 1)] < median(std::move(peers));
}

Trial::Trial(int id, Params params, const TrialHistory& history, const TpeSettings& settings)
    : history_(history), settings_(settings)
{
    record_.trial_id = id;
    record_.params = std::move(params);
}

double Trial::param(std::string_view name) const
{
    auto it = record_.params.find(std::string(name));
    if (it == record_.params.end()) {
        throw TpeError("trial has no parameter '" + std::string(name) + "'");
    }
    return it->second;
}

void Trial::report(int epoch, double value)
{
    if (epoch != static_cast<int>(record_.intermediate.size()) + 1) {
        throw TpeError("epochs must be reported consecutively; got " + std::to_string(epoch));
    }
    record_.intermediate.push_back(value);
}

bool Trial::should_prune() const
{
    if (record_.intermediate.empty()) {
        return false;
    }
    return tpe::should_prune(record_, history_, static_cast<int>(record_.intermediate.size()), settings_);
}

StudyError::StudyError(std::string what, TrialHistory history)
    : TpeError(std::move(what)), history_(std::move(history))
{
}

StudyResult run_study(const Objective& objective, const SearchSpace& space, const StudyOptions& options)
{
    if (options.n_trials < 1) {
        throw TpeError("a study needs at least one trial");
    }
    TrialHistory history(options.tpe.gamma);
    if (options.ledger) {
        for (const auto& line : io::read_jsonl(*options.ledger)) {
            history.add(TrialRecord::from_json(line));
        }
    }

    for (int id = static_cast<int>(history.records().size()); id < options.n_trials; ++id) {
        auto suggestion = suggest(history, space, options.tpe, mix_seed(options.seed, static_cast<std::uint64_t>(id)));
        Trial trial(id, std::move(suggestion.params), history, options.tpe);

        const auto started = std::chrono::steady_clock::now();
        TrialRecord record;
        try {
            const double value = objective(trial);
            record = trial.record();
            record.objective = value;
            record.state = TrialState::complete;
        } catch (const TrialPruned&) {
            record = trial.record();
            record.state = record.intermediate.empty() ? TrialState::failed : TrialState::pruned;
            if (record.state == TrialState::failed) {
                record.message = "pruned before reporting any value";
            }
        } catch (const std::exception& e) {
            record = trial.record();
            record.state = TrialState::failed;
            record.message = e.what();
        }
        record.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (options.ledger) {
            io::append_line(*options.ledger, record.to_json().dump());
        }
        history.add(std::move(record));
    }

    const auto complete = history.complete();
    if (complete.empty()) {
        throw StudyError("all " + std::to_string(history.records().size()) + " trials failed or were pruned",
                         std::move(history));
    }
    // Highest objective; earliest trial on ties.
    const auto best = std::min_element(complete.begin(), complete.end(), [](const TrialRecord& a, const TrialRecord& b) {
        if (*a.objective != *b.objective) {
            return *a.objective > *b.objective;
        }
        return a.trial_id < b.trial_id;
    });
    return StudyResult{*best, std::move(history)};
}

void write_study_summary(const StudyResult& result, const SearchSpace& space, const std::filesystem::path& dest)
{
    csv::Row header{"trial_id", "state", "objective"};
    csv::Row row{std::to_string(result.best.trial_id), std::string(to_string(result.best.state)),
                 format_number(result.best.objective.value_or(0.0))};
    for (const auto& p : space.params()) {
        header.push_back(p.name);
        auto it = result.best.params.find(p.name);
        row.push_back(it == result.best.params.end() ? std::string() : format_number(it->second));
    }
    csv::write_file(dest, header, {row});
}

} // namespace leafbench::tpe
