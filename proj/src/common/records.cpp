#include "leafbench/records.hpp"

#include <stdexcept>

namespace leafbench {

using nlohmann::json;

std::string_view to_string(Regime regime)
{
    switch (regime) {
    case Regime::full:
        return "full";
    case Regime::progressive:
        return "progressive";
    case Regime::zero_shot:
        return "zero_shot";
    }
    return "full";
}

Regime parse_regime(std::string_view text)
{
    if (text == "full") {
        return Regime::full;
    }
    if (text == "progressive") {
        return Regime::progressive;
    }
    if (text == "zero_shot" || text == "zero-shot" || text == "zeroshot") {
        return Regime::zero_shot;
    }
    throw std::invalid_argument("unknown regime '" + std::string(text) + "'");
}

std::string JobLedgerEntry::subset_identifier() const
{
    const std::string res = "Resolution-" + std::to_string(resolution_px);
    return phase ? "Phase-" + std::to_string(*phase) + "-" + res : res;
}

json JobLedgerEntry::to_json() const
{
    return json{{"plan", plan},
                {"plant", dataset::to_string(plant)},
                {"resolution", resolution_px},
                {"regime", to_string(regime)},
                {"phase", phase ? json(*phase) : json(nullptr)},
                {"trial", trial ? json(*trial) : json(nullptr)},
                {"idempotency_key", idempotency_key},
                {"job", job.to_json()}};
}

JobLedgerEntry JobLedgerEntry::from_json(const json& j)
{
    JobLedgerEntry e;
    e.plan = j.at("plan").get<std::string>();
    e.plant = dataset::parse_plant(j.at("plant").get<std::string>());
    e.resolution_px = j.at("resolution").get<int>();
    e.regime = parse_regime(j.at("regime").get<std::string>());
    if (j.contains("phase") && !j["phase"].is_null()) {
        e.phase = j["phase"].get<int>();
    }
    if (j.contains("trial") && !j["trial"].is_null()) {
        e.trial = j["trial"].get<int>();
    }
    e.idempotency_key = j.value("idempotency_key", "");
    e.job = backends::FineTuneJob::from_json(j.at("job"));
    return e;
}

json PredictionRecord::to_json() const
{
    return json{{"index", index},
                {"sample_id", sample_id},
                {"true_label", true_label},
                {"image_url", image_url},
                {"model_id", model_id},
                {"raw_response", raw_response},
                {"parsed_category", parsed_category ? json(*parsed_category) : json(nullptr)},
                {"parse_error", parse_error},
                {"latency_s", latency_s},
                {"cost_usd", cost_usd},
                {"attempts", attempts},
                {"error", error}};
}

PredictionRecord PredictionRecord::from_json(const json& j)
{
    PredictionRecord r;
    r.index = j.at("index").get<std::size_t>();
    r.sample_id = j.at("sample_id").get<std::string>();
    r.true_label = j.at("true_label").get<std::string>();
    r.image_url = j.value("image_url", "");
    r.model_id = j.value("model_id", "");
    r.raw_response = j.value("raw_response", "");
    if (j.contains("parsed_category") && j["parsed_category"].is_string()) {
        r.parsed_category = j["parsed_category"].get<std::string>();
    }
    r.parse_error = j.value("parse_error", "none");
    r.latency_s = j.value("latency_s", 0.0);
    r.cost_usd = j.value("cost_usd", 0.0);
    r.attempts = j.value("attempts", 0);
    r.error = j.value("error", "");
    return r;
}

std::string_view to_string(SweepKind kind)
{
    switch (kind) {
    case SweepKind::few_shot:
        return "few_shot";
    case SweepKind::progressive:
        return "progressive";
    case SweepKind::zero_shot:
        return "zero_shot";
    case SweepKind::cross_resolution:
        return "cross_resolution";
    case SweepKind::cross_plant:
        return "cross_plant";
    }
    return "few_shot";
}

SweepKind parse_sweep_kind(std::string_view text)
{
    for (auto kind : {SweepKind::few_shot, SweepKind::progressive, SweepKind::zero_shot,
                      SweepKind::cross_resolution, SweepKind::cross_plant}) {
        if (to_string(kind) == text) {
            return kind;
        }
    }
    throw std::invalid_argument("unknown sweep kind '" + std::string(text) + "'");
}

std::string SweepSpec::prediction_column() const
{
    const auto res = [](int px) { return "Resolution-" + std::to_string(px); };
    switch (kind) {
    case SweepKind::few_shot:
        return res(test_resolution);
    case SweepKind::progressive:
        return "Phase-" + std::to_string(phase.value_or(0)) + "-" + res(test_resolution);
    case SweepKind::zero_shot:
        return model_id + "-" + res(test_resolution);
    case SweepKind::cross_resolution: {
        const char* direction = train_resolution > test_resolution ? "High-to-Low" : "Low-to-High";
        return std::string(dataset::display_name(test_plant)) + "-" + direction + "-Res-Trained-" +
               std::to_string(train_resolution) + "-Prediction-" + std::to_string(test_resolution);
    }
    case SweepKind::cross_plant:
        return "Best-" + std::string(dataset::display_name(train_plant)) + "-Trained-Model-Predictions-on-" +
               std::string(dataset::display_name(test_plant)) + "s-" + std::to_string(test_resolution);
    }
    return name;
}

json SweepSpec::to_json() const
{
    return json{{"name", name},
                {"kind", to_string(kind)},
                {"model_id", model_id},
                {"train_plant", dataset::to_string(train_plant)},
                {"train_resolution", train_resolution},
                {"test_plant", dataset::to_string(test_plant)},
                {"test_resolution", test_resolution},
                {"phase", phase ? json(*phase) : json(nullptr)}};
}

SweepSpec SweepSpec::from_json(const json& j)
{
    SweepSpec s;
    s.name = j.at("name").get<std::string>();
    s.kind = parse_sweep_kind(j.at("kind").get<std::string>());
    s.model_id = j.at("model_id").get<std::string>();
    s.train_plant = dataset::parse_plant(j.at("train_plant").get<std::string>());
    s.train_resolution = j.at("train_resolution").get<int>();
    s.test_plant = dataset::parse_plant(j.at("test_plant").get<std::string>());
    s.test_resolution = j.at("test_resolution").get<int>();
    if (j.contains("phase") && !j["phase"].is_null()) {
        s.phase = j["phase"].get<int>();
    }
    return s;
}

} // namespace leafbench
