#include "leafbench/tpe.hpp"

#include "leafbench/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace leafbench::tpe {

namespace {

double normal_cdf(double z)
{
    return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double truncated_normal_pdf(double x, double mu, double sigma, double low, double high)
{
    if (x < low || x > high) {
        return 0.0;
    }
    const double mass = normal_cdf((high - mu) / sigma) - normal_cdf((low - mu) / sigma);
    const double z = (x - mu) / sigma;
    const double pdf = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
    return pdf / std::max(mass, std::numeric_limits<double>::min());
}

NumericDensity fit_numeric(const ParamSpec& spec, const std::vector<double>& observations)
{
    const auto [low, high] = spec.internal_bounds();
    const double width = high - low;
    // Few observations get wide kernels; the floor tightens to width/100.
    const double floor_bw = width / std::min(100.0, 1.0 + static_cast<double>(observations.size()));

    NumericDensity d;
    d.low = low;
    d.high = high;

    std::vector<double> sorted = observations;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double left = i == 0 ? low : sorted[i - 1];
        const double right = i + 1 == sorted.size() ? high : sorted[i + 1];
        const double gap = std::min(sorted[i] - left, right - sorted[i]);
        d.centers.push_back(sorted[i]);
        d.bandwidths.push_back(std::min(std::max(gap, floor_bw), width));
    }
    d.centers.push_back(0.5 * (low + high));
    d.bandwidths.push_back(width);
    d.weights.assign(d.centers.size(), 1.0 / static_cast<double>(d.centers.size()));
    return d;
}

CategoricalDensity fit_categorical(const ParamSpec& spec, const std::vector<double>& observations)
{
    CategoricalDensity d;
    d.choices = spec.choices;
    std::vector<double> counts(spec.choices.size(), 1.0);
    for (double v : observations) {
        auto it = std::find(spec.choices.begin(), spec.choices.end(), v);
        if (it != spec.choices.end()) {
            counts[static_cast<std::size_t>(it - spec.choices.begin())] += 1.0;
        }
    }
    double total = 0.0;
    for (double c : counts) {
        total += c;
    }
    for (double c : counts) {
        d.weights.push_back(c / total);
    }
    return d;
}

} // namespace

double NumericDensity::pdf(double internal) const
{
    double total = 0.0;
    for (std::size_t i = 0; i < centers.size(); ++i) {
        total += weights[i] * truncated_normal_pdf(internal, centers[i], bandwidths[i], low, high);
    }
    return total;
}

double NumericDensity::log_pdf(double internal) const
{
    return std::log(pdf(internal));
}

double NumericDensity::sample(Rng& rng) const
{
    // Component by weight, then a truncated normal draw by rejection.
    double u = rng.uniform();
    std::size_t k = 0;
    for (; k + 1 < weights.size(); ++k) {
        if (u < weights[k]) {
            break;
        }
        u -= weights[k];
    }
    for (int attempt = 0; attempt < 256; ++attempt) {
        const double x = centers[k] + bandwidths[k] * rng.normal();
        if (x >= low && x <= high) {
            return x;
        }
    }
    return std::clamp(centers[k], low, high);
}

double CategoricalDensity::log_pdf(double value) const
{
    auto it = std::find(choices.begin(), choices.end(), value);
    if (it == choices.end()) {
        return -std::numeric_limits<double>::infinity();
    }
    return std::log(weights[static_cast<std::size_t>(it - choices.begin())]);
}

double CategoricalDensity::sample(Rng& rng) const
{
    double u = rng.uniform();
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
        if (u < weights[i]) {
            return choices[i];
        }
        u -= weights[i];
    }
    return choices.back();
}

double DensityEstimate::log_pdf(const Params& params, const SearchSpace& space) const
{
    double total = 0.0;
    for (const auto& spec : space.params()) {
        const double value = params.at(spec.name);
        const auto& density = per_param.at(spec.name);
        if (const auto* numeric = std::get_if<NumericDensity>(&density)) {
            total += numeric->log_pdf(spec.to_internal(value));
        } else {
            total += std::get<CategoricalDensity>(density).log_pdf(value);
        }
    }
    return total;
}

Params DensityEstimate::sample(const SearchSpace& space, Rng& rng) const
{
    Params params;
    for (const auto& spec : space.params()) {
        const auto& density = per_param.at(spec.name);
        if (const auto* numeric = std::get_if<NumericDensity>(&density)) {
            params[spec.name] = spec.from_internal(numeric->sample(rng));
        } else {
            params[spec.name] = std::get<CategoricalDensity>(density).sample(rng);
        }
    }
    return params;
}

DensityEstimate fit_parzen(const std::vector<TrialRecord>& records, const SearchSpace& space)
{
    DensityEstimate estimate;
    for (const auto& spec : space.params()) {
        std::vector<double> observations;
        observations.reserve(records.size());
        for (const auto& r : records) {
            auto it = r.params.find(spec.name);
            if (it == r.params.end() || !spec.contains(it->second)) {
                continue;
            }
            observations.push_back(spec.kind == ParamKind::categorical ? it->second : spec.to_internal(it->second));
        }
        if (spec.kind == ParamKind::categorical) {
            estimate.per_param.emplace(spec.name, fit_categorical(spec, observations));
        } else {
            estimate.per_param.emplace(spec.name, fit_numeric(spec, observations));
        }
    }
    return estimate;
}

AcquisitionScore suggest(const TrialHistory& history, const SearchSpace& space, const TpeSettings& settings,
                         std::uint64_t rng_seed)
{
    if (history.n_complete() < static_cast<std::size_t>(std::max(settings.n_startup, 1))) {
        return AcquisitionScore{sample_prior(space, rng_seed), 0.0, true};
    }
    const auto partition = split_good_bad(history);
    const auto good = fit_parzen(partition.good, space);
    Rng rng(rng_seed);

    if (partition.bad.empty()) {
        auto params = good.sample(space, rng);
        return AcquisitionScore{std::move(params), 0.0, false};
    }
    const auto bad = fit_parzen(partition.bad, space);

    AcquisitionScore best;
    bool have_best = false;
    const int n = std::max(settings.n_candidates, 1);
    for (int i = 0; i < n; ++i) {
        auto candidate = good.sample(space, rng);
        const double score = good.log_pdf(candidate, space) - bad.log_pdf(candidate, space);
        if (!have_best || score > best.score) {
            best = AcquisitionScore{std::move(candidate), score, false};
            have_best = true;
        }
    }
    return best;
}

} // namespace leafbench::tpe
