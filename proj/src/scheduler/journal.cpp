#include "leafbench/scheduler.hpp"

#include "leafbench/io.hpp"

namespace leafbench::scheduler {

namespace fs = std::filesystem;

RunLayout::RunLayout(fs::path root) : root_(std::move(root))
{
    if (root_.empty()) {
        throw SchedulerError("run directory is empty");
    }
}

fs::path RunLayout::manifest_csv(dataset::Plant plant, int resolution) const
{
    return manifests() / (std::string(dataset::to_string(plant)) + "-" + std::to_string(resolution) + ".csv");
}

fs::path RunLayout::study_dir(dataset::Plant plant, int resolution) const
{
    return studies() / (std::string(dataset::to_string(plant)) + "-" + std::to_string(resolution));
}

void RunLayout::create() const
{
    for (const auto& dir : {manifests(), jsonl(), studies(), jobs(), predictions(), reports()}) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) {
            throw SchedulerError("cannot create " + dir.string() + ": " + ec.message());
        }
    }
}

std::string ExperimentPlan::key() const
{
    return std::string(dataset::to_string(plant)) + "-" + std::to_string(resolution_px) + "-" +
           std::string(to_string(regime));
}

void ExperimentPlan::validate() const
{
    if (regime == Regime::progressive && hp_source != HpSource::backend_default) {
        throw SchedulerError("progressive plans use the backend's default hyperparameters");
    }
    if (base_model.empty()) {
        throw SchedulerError("plan " + key() + " has no base model");
    }
    if (!dataset::is_valid_resolution(resolution_px)) {
        throw SchedulerError("plan " + key() + " has an unsupported resolution");
    }
}

Journal::Journal(fs::path path) : path_(std::move(path))
{
    if (!fs::exists(path_)) {
        return;
    }
    for (const auto& line : io::read_jsonl(path_)) {
        ++lines_;
        if (line.value("type", "") != "job") {
            continue;
        }
        auto entry = JobLedgerEntry::from_json(line);
        auto it = by_key_.find(entry.idempotency_key);
        if (it == by_key_.end()) {
            by_key_[entry.idempotency_key] = latest_.size();
            latest_.push_back(std::move(entry));
        } else {
            latest_[it->second] = std::move(entry);
        }
    }
}

void Journal::record(const JobLedgerEntry& entry)
{
    if (entry.idempotency_key.empty()) {
        throw SchedulerError("journal entries need an idempotency key");
    }
    auto line = entry.to_json();
    line["type"] = "job";
    std::lock_guard lock(mutex_);
    io::append_line(path_, line.dump());
    ++lines_;
    auto it = by_key_.find(entry.idempotency_key);
    if (it == by_key_.end()) {
        by_key_[entry.idempotency_key] = latest_.size();
        latest_.push_back(entry);
    } else {
        latest_[it->second] = entry;
    }
}

std::optional<JobLedgerEntry> Journal::latest(const std::string& idempotency_key) const
{
    std::lock_guard lock(mutex_);
    auto it = by_key_.find(idempotency_key);
    if (it == by_key_.end()) {
        return std::nullopt;
    }
    return latest_[it->second];
}

std::vector<JobLedgerEntry> Journal::entries() const
{
    std::lock_guard lock(mutex_);
    return latest_;
}

std::size_t Journal::lines() const
{
    std::lock_guard lock(mutex_);
    return lines_;
}

} // namespace leafbench::scheduler
