#pragma once

#include "leafbench/backends.hpp"
#include "leafbench/dataset.hpp"

#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace leafbench {

enum class Regime { full, progressive, zero_shot };
std::string_view to_string(Regime regime);
Regime parse_regime(std::string_view text);

/// One fine-tune job as recorded in the run journal.
struct JobLedgerEntry {
    std::string plan; // "<plant>-<resolution>-<regime>"
    dataset::Plant plant = dataset::Plant::apple;
    int resolution_px = dataset::kNativeResolution;
    Regime regime = Regime::full;
    std::optional<int> phase; // 1-based, progressive only
    std::optional<int> trial; // set for hyperparameter-study jobs
    std::string idempotency_key;
    backends::FineTuneJob job;

    /// Samples the backend excluded from training.
    std::size_t errors() const noexcept { return job.flagged_samples.size(); }
    /// "Resolution-256" or "Phase-2-Resolution-256".
    std::string subset_identifier() const;

    nlohmann::json to_json() const;
    static JobLedgerEntry from_json(const nlohmann::json& j);
};

/// One classification of one test image by one model.
struct PredictionRecord {
    std::size_t index = 0; // position in the test manifest
    std::string sample_id;
    std::string true_label;
    std::string image_url;
    std::string model_id;
    std::string raw_response;
    std::optional<std::string> parsed_category;
    std::string parse_error; // "none" when parsed
    double latency_s = 0.0;
    double cost_usd = 0.0;
    int attempts = 0;
    std::string error; // backend or transport failure, empty otherwise

    nlohmann::json to_json() const;
    static PredictionRecord from_json(const nlohmann::json& j);
};

enum class SweepKind { few_shot, progressive, zero_shot, cross_resolution, cross_plant };
std::string_view to_string(SweepKind kind);
SweepKind parse_sweep_kind(std::string_view text);

/// What a prediction sweep evaluates: a model trained on one domain predicting
/// the test set of another (or the same) domain.
struct SweepSpec {
    std::string name; // file stem under predictions/
    SweepKind kind = SweepKind::few_shot;
    std::string model_id;
    dataset::Plant train_plant = dataset::Plant::apple;
    int train_resolution = dataset::kNativeResolution;
    dataset::Plant test_plant = dataset::Plant::apple;
    int test_resolution = dataset::kNativeResolution;
    std::optional<int> phase;

    /// Row label in the result tables, e.g. "Phase-3-Resolution-256" or
    /// "Apple-High-to-Low-Res-Trained-256-Prediction-100".
    std::string prediction_column() const;

    nlohmann::json to_json() const;
    static SweepSpec from_json(const nlohmann::json& j);
};

} // namespace leafbench
