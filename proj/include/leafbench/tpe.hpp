#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace leafbench {
class Rng;
}

namespace leafbench::tpe {

class TpeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ParamKind { uniform, log_uniform, int_uniform, categorical };

struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::uniform;
    double low = 0.0;
    double high = 0.0;
    std::vector<double> choices; // categorical only

    static ParamSpec uniform(std::string name, double low, double high);
    static ParamSpec log_uniform(std::string name, double low, double high);
    static ParamSpec int_uniform(std::string name, long low, long high);
    static ParamSpec categorical(std::string name, std::vector<double> choices);

    /// Fit/sample coordinate: log for log-uniform, the value itself otherwise.
    double to_internal(double value) const;
    /// Maps back into the domain (rounding integers, clamping to bounds).
    double from_internal(double internal) const;
    /// Internal-space interval; integers widen by 0.5 on each side.
    std::pair<double, double> internal_bounds() const;
    bool contains(double value) const;
};

/// Concrete hyperparameter assignment, keyed by parameter name.
using Params = std::map<std::string, double>;

class SearchSpace {
public:
    SearchSpace() = default;
    /// Throws TpeError unless every bound pair has low < high, log bounds are
    /// positive, categorical sets are nonempty and names are unique.
    explicit SearchSpace(std::vector<ParamSpec> params);

    /// epochs int [3, 15]; batch_size {8, 16, 32}; learning_rate log [1e-5, 1e-2].
    static SearchSpace default_space();

    const std::vector<ParamSpec>& params() const noexcept { return params_; }
    const ParamSpec& at(std::string_view name) const;
    bool contains(const Params& params) const;

private:
    std::vector<ParamSpec> params_;
};

enum class TrialState { complete, pruned, failed };
std::string_view to_string(TrialState state);
TrialState parse_trial_state(std::string_view text);

struct TrialRecord {
    int trial_id = 0;
    Params params;
    std::optional<double> objective;  // validation accuracy, maximized
    std::vector<double> intermediate; // index e-1 holds epoch e
    TrialState state = TrialState::complete;
    double wall_time_s = 0.0;
    std::string message; // failure reason, if any

    nlohmann::json to_json() const;
    static TrialRecord from_json(const nlohmann::json& j);
};

struct TpeSettings {
    double gamma = 0.25;
    int n_startup = 5;
    int n_candidates = 24;
    int min_trials = 3; // pruning
    int warmup = 2;     // pruning, epochs
};

class TrialHistory {
public:
    explicit TrialHistory(double gamma = 0.25);

    /// Throws TpeError when a complete record lacks an objective or a pruned
    /// record has no intermediate values.
    void add(TrialRecord record);

    const std::vector<TrialRecord>& records() const noexcept { return records_; }
    std::vector<TrialRecord> complete() const;
    std::size_t n_complete() const;
    std::optional<double> y_best() const noexcept { return y_best_; }
    double gamma() const noexcept { return gamma_; }

private:
    std::vector<TrialRecord> records_;
    std::optional<double> y_best_;
    double gamma_;
};

struct GoodBad {
    std::vector<TrialRecord> good;
    std::vector<TrialRecord> bad;
};

/// Top ceil(gamma * n) complete records by objective are good; ties go to the
/// earlier trial_id. Throws TpeError when there is no complete record.
GoodBad split_good_bad(const TrialHistory& history);

/// Number of good records for n complete records.
std::size_t good_count(double gamma, std::size_t n);

/// Parzen mixture over one numeric parameter, in internal coordinates.
/// The last component is the prior (domain midpoint, bandwidth = width).
struct NumericDensity {
    double low = 0.0;
    double high = 0.0;
    std::vector<double> centers;
    std::vector<double> bandwidths;
    std::vector<double> weights;

    double pdf(double internal) const;
    double log_pdf(double internal) const;
    double sample(Rng& rng) const;
};

struct CategoricalDensity {
    std::vector<double> choices;
    std::vector<double> weights; // sums to 1

    double log_pdf(double value) const;
    double sample(Rng& rng) const;
};

struct DensityEstimate {
    std::map<std::string, std::variant<NumericDensity, CategoricalDensity>> per_param;

    /// Sum over parameters of the per-parameter log density.
    double log_pdf(const Params& params, const SearchSpace& space) const;
    Params sample(const SearchSpace& space, Rng& rng) const;
};

/// Numeric: one truncated Gaussian per observation plus the prior component.
/// Observation bandwidth = max(gap to the nearest other center or domain edge,
/// width / min(100, n + 1)), capped at the width. Categorical: counts + 1,
/// normalized.
DensityEstimate fit_parzen(const std::vector<TrialRecord>& records, const SearchSpace& space);

/// Each parameter drawn independently from its declared distribution.
Params sample_prior(const SearchSpace& space, std::uint64_t rng_seed);

struct AcquisitionScore {
    Params params;
    /// log l(x) - log g(x) of the chosen candidate; 0 for startup draws.
    double score = 0.0;
    bool from_prior = false;
};

/// Startup draws from the prior until n_startup trials are complete; then the
/// best of n_candidates draws from l(x) by l(x)/g(x), lowest index on ties.
/// With no bad records the first draw from l(x) is returned.
AcquisitionScore suggest(const TrialHistory& history, const SearchSpace& space, const TpeSettings& settings,
                         std::uint64_t rng_seed);

/// Median pruning rule; `epoch` is 1-based and must be reported by `trial`.
bool should_prune(const TrialRecord& trial, const TrialHistory& history, int epoch, const TpeSettings& settings);

/// Thrown by an objective to end its trial as pruned.
struct TrialPruned {};

/// Handle passed to the objective for one running trial.
class Trial {
public:
    Trial(int id, Params params, const TrialHistory& history, const TpeSettings& settings);

    int id() const noexcept { return record_.trial_id; }
    const Params& params() const noexcept { return record_.params; }
    double param(std::string_view name) const;

    /// Records the objective at `epoch` (1-based, consecutive).
    void report(int epoch, double value);
    /// Median rule against the history, evaluated at the last reported epoch.
    bool should_prune() const;

    const TrialRecord& record() const noexcept { return record_; }

private:
    TrialRecord record_;
    const TrialHistory& history_;
    const TpeSettings& settings_;
};

/// Returns the final objective. Throw TrialPruned to stop early; any other
/// exception marks the trial failed.
using Objective = std::function<double(Trial&)>;

struct StudyOptions {
    int n_trials = 30;
    std::uint64_t seed = 42;
    TpeSettings tpe;
    /// Append-only JSON-lines ledger. Existing records are replayed first, so
    /// an interrupted study resumes where it stopped.
    std::optional<std::filesystem::path> ledger;
};

struct StudyResult {
    TrialRecord best;
    TrialHistory history;
};

class StudyError : public TpeError {
public:
    StudyError(std::string what, TrialHistory history);
    const TrialHistory& history() const noexcept { return history_; }

private:
    TrialHistory history_;
};

/// Sequential trials, each suggested from the history so far. Throws
/// StudyError (carrying the history) when no trial completes.
StudyResult run_study(const Objective& objective, const SearchSpace& space, const StudyOptions& options);

/// `trial_id,state,objective,<param...>` header and one row for the best trial.
void write_study_summary(const StudyResult& result, const SearchSpace& space, const std::filesystem::path& dest);

nlohmann::json params_to_json(const Params& params);
Params params_from_json(const nlohmann::json& j);

} // namespace leafbench::tpe
