#include "leafbench/tpe.hpp"

#include "leafbench/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace leafbench::tpe {

ParamSpec ParamSpec::uniform(std::string name, double low, double high)
{
    return ParamSpec{std::move(name), ParamKind::uniform, low, high, {}};
}

ParamSpec ParamSpec::log_uniform(std::string name, double low, double high)
{
    return ParamSpec{std::move(name), ParamKind::log_uniform, low, high, {}};
}

ParamSpec ParamSpec::int_uniform(std::string name, long low, long high)
{
    return ParamSpec{std::move(name), ParamKind::int_uniform, static_cast<double>(low), static_cast<double>(high), {}};
}

ParamSpec ParamSpec::categorical(std::string name, std::vector<double> choices)
{
    return ParamSpec{std::move(name), ParamKind::categorical, 0.0, 0.0, std::move(choices)};
}

double ParamSpec::to_internal(double value) const
{
    return kind == ParamKind::log_uniform ? std::log(value) : value;
}

double ParamSpec::from_internal(double internal) const
{
    switch (kind) {
    case ParamKind::uniform:
        return std::clamp(internal, low, high);
    case ParamKind::log_uniform:
        return std::clamp(std::exp(internal), low, high);
    case ParamKind::int_uniform:
        return std::clamp(std::round(internal), low, high);
    case ParamKind::categorical:
        return internal;
    }
    return internal;
}

std::pair<double, double> ParamSpec::internal_bounds() const
{
    switch (kind) {
    case ParamKind::log_uniform:
        return {std::log(low), std::log(high)};
    case ParamKind::int_uniform:
        return {low - 0.5, high + 0.5};
    default:
        return {low, high};
    }
}

bool ParamSpec::contains(double value) const
{
    if (!std::isfinite(value)) {
        return false;
    }
    switch (kind) {
    case ParamKind::uniform:
    case ParamKind::log_uniform:
        return value >= low && value <= high;
    case ParamKind::int_uniform:
        return value >= low && value <= high && value == std::round(value);
    case ParamKind::categorical:
        return std::find(choices.begin(), choices.end(), value) != choices.end();
    }
    return false;
}

SearchSpace::SearchSpace(std::vector<ParamSpec> params) : params_(std::move(params))
{
    std::set<std::string> names;
    for (const auto& p : params_) {
        if (!names.insert(p.name).second) {
            throw TpeError("duplicate parameter '" + p.name + "'");
        }
        if (p.kind == ParamKind::categorical) {
            if (p.choices.empty()) {
                throw TpeError("categorical parameter '" + p.name + "' has no choices");
            }
            continue;
        }
        if (!(p.low < p.high)) {
            throw TpeError("parameter '" + p.name + "' needs low < high");
        }
        if (p.kind == ParamKind::log_uniform && p.low <= 0.0) {
            throw TpeError("log-uniform parameter '" + p.name + "' needs a positive lower bound");
        }
    }
}

SearchSpace SearchSpace::default_space()
{
    return SearchSpace({
        ParamSpec::int_uniform("epochs", 3, 15),
        ParamSpec::categorical("batch_size", {8, 16, 32}),
        ParamSpec::log_uniform("learning_rate", 1e-5, 1e-2),
    });
}

const ParamSpec& SearchSpace::at(std::string_view name) const
{
    for (const auto& p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw TpeError("unknown parameter '" + std::string(name) + "'");
}

bool SearchSpace::contains(const Params& params) const
{
    if (params.size() != params_.size()) {
        return false;
    }
    return std::all_of(params_.begin(), params_.end(), [&](const ParamSpec& p) {
        auto it = params.find(p.name);
        return it != params.end() && p.contains(it->second);
    });
}

std::string_view to_string(TrialState state)
{
    switch (state) {
    case TrialState::complete:
        return "complete";
    case TrialState::pruned:
        return "pruned";
    case TrialState::failed:
        return "failed";
    }
    return "failed";
}

TrialState parse_trial_state(std::string_view text)
{
    if (text == "complete") {
        return TrialState::complete;
    }
    if (text == "pruned") {
        return TrialState::pruned;
    }
    if (text == "failed") {
        return TrialState::failed;
    }
    throw TpeError("unknown trial state '" + std::string(text) + "'");
}

nlohmann::json params_to_json(const Params& params)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, value] : params) {
        j[name] = value;
    }
    return j;
}

Params params_from_json(const nlohmann::json& j)
{
    Params params;
    for (const auto& [name, value] : j.items()) {
        params[name] = value.get<double>();
    }
    return params;
}

nlohmann::json TrialRecord::to_json() const
{
    nlohmann::json j;
    j["trial_id"] = trial_id;
    j["params"] = params_to_json(params);
    j["intermediates"] = intermediate;
    j["objective"] = objective ? nlohmann::json(*objective) : nlohmann::json(nullptr);
    j["state"] = std::string(to_string(state));
    j["wall_time_s"] = wall_time_s;
    if (!message.empty()) {
        j["message"] = message;
    }
    return j;
}

TrialRecord TrialRecord::from_json(const nlohmann::json& j)
{
    TrialRecord r;
    r.trial_id = j.at("trial_id").get<int>();
    r.params = params_from_json(j.at("params"));
    r.intermediate = j.at("intermediates").get<std::vector<double>>();
    if (!j.at("objective").is_null()) {
        r.objective = j.at("objective").get<double>();
    }
    r.state = parse_trial_state(j.at("state").get<std::string>());
    r.wall_time_s = j.value("wall_time_s", 0.0);
    r.message = j.value("message", "");
    return r;
}

TrialHistory::TrialHistory(double gamma) : gamma_(gamma)
{
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw TpeError("gamma must lie in (0, 1]");
    }
}

void TrialHistory::add(TrialRecord record)
{
    if (record.state == TrialState::complete) {
        if (!record.objective || !std::isfinite(*record.objective)) {
            throw TpeError("complete trial " + std::to_string(record.trial_id) + " has no finite objective");
        }
        if (!y_best_ || *record.objective > *y_best_) {
            y_best_ = record.objective;
        }
    }
    if (record.state == TrialState::pruned && record.intermediate.empty()) {
        throw TpeError("pruned trial " + std::to_string(record.trial_id) + " has no intermediate values");
    }
    records_.push_back(std::move(record));
}

std::vector<TrialRecord> TrialHistory::complete() const
{
    std::vector<TrialRecord> out;
    std::copy_if(records_.begin(), records_.end(), std::back_inserter(out),
                 [](const TrialRecord& r) { return r.state == TrialState::complete; });
    return out;
}

std::size_t TrialHistory::n_complete() const
{
    return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(), [](const TrialRecord& r) {
        return r.state == TrialState::complete;
    }));
}

std::size_t good_count(double gamma, std::size_t n)
{
    if (n == 0) {
        return 0;
    }
    // The epsilon keeps products like 0.1 * 30 = 3.0000000000000004 at 3.
    const auto k = static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(n) - 1e-9));
    return std::clamp<std::size_t>(k, 1, n);
}

GoodBad split_good_bad(const TrialHistory& history)
{
    auto records = history.complete();
    if (records.empty()) {
        throw TpeError("cannot partition a history without complete trials");
    }
    std::stable_sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
        if (*a.objective != *b.objective) {
            return *a.objective > *b.objective;
        }
        return a.trial_id < b.trial_id;
    });
    const auto k = good_count(history.gamma(), records.size());
    GoodBad out;
    out.good.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(k));
    out.bad.assign(records.begin() + static_cast<std::ptrdiff_t>(k), records.end());
    return out;
}

Params sample_prior(const SearchSpace& space, std::uint64_t rng_seed)
{
    Rng rng(rng_seed);
    Params params;
    for (const auto& p : space.params()) {
        double value = 0.0;
        switch (p.kind) {
        case ParamKind::uniform:
            value = rng.uniform(p.low, p.high);
            break;
        case ParamKind::log_uniform:
            value = std::clamp(std::exp(rng.uniform(std::log(p.low), std::log(p.high))), p.low, p.high);
            break;
        case ParamKind::int_uniform: {
            const auto span = static_cast<std::uint64_t>(p.high - p.low) + 1;
            value = p.low + static_cast<double>(rng.below(span));
            break;
        }
        case ParamKind::categorical:
            value = p.choices[rng.below(p.choices.size())];
            break;
        }
        params[p.name] = value;
    }
    return params;
}

} // namespace leafbench::tpe
