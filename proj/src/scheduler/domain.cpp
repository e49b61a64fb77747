#include "leafbench/scheduler.hpp"

#include "leafbench/prompts.hpp"

namespace leafbench::scheduler {

namespace fs = std::filesystem;
using backends::DataFile;
using backends::DataFormat;

namespace {

std::string stem(const dataset::CuratedSet& set)
{
    return std::string(dataset::to_string(set.manifest.plant)) + "-" + std::to_string(set.manifest.resolution_px);
}

DataFile write_jsonl_subset(const dataset::CuratedSet& set, const std::vector<std::string>& ids, const fs::path& dest)
{
    std::vector<prompts::FineTuneRecord> records;
    records.reserve(ids.size());
    for (const auto& sample : set.samples_in(ids)) {
        const auto ctx = prompts::make_context(sample.plant, sample.public_url.value_or(""));
        records.push_back(prompts::render_finetune_record(sample, ctx));
    }
    prompts::write_jsonl(records, dest);
    return {dest, DataFormat::jsonl};
}

DataFile write_csv_subset(const dataset::CuratedSet& set, const std::vector<std::string>& ids, const fs::path& dest)
{
    dataset::CuratedSet subset;
    subset.manifest = set.manifest;
    subset.manifest.samples = set.samples_in(ids);
    subset.split = set.split;
    dataset::export_manifest_csv(subset, dest);
    return {dest, DataFormat::manifest_csv};
}

} // namespace

const DomainFiles& DomainData::files(DataFormat format) const
{
    return format == DataFormat::jsonl ? jsonl : csv;
}

std::vector<dataset::ImageSample> DomainData::test_samples() const
{
    return set.samples_in(set.split.test);
}

std::vector<dataset::ImageSample> DomainData::validation_samples() const
{
    return set.samples_in(set.split.validation);
}

DomainData prepare_domain(const RunLayout& layout, const dataset::CuratedSet& set)
{
    if (set.split.train.empty() || set.split.validation.empty() || set.split.test.empty()) {
        throw SchedulerError("curated set " + stem(set) + " has an empty split");
    }
    DomainData data;
    data.set = set;
    const auto base = stem(set);
    data.jsonl.train = write_jsonl_subset(set, set.split.train, layout.jsonl() / (base + "-train.jsonl"));
    data.jsonl.validation =
        write_jsonl_subset(set, set.split.validation, layout.jsonl() / (base + "-validation.jsonl"));
    data.csv.train = write_csv_subset(set, set.split.train, layout.manifests() / (base + "-train.csv"));
    data.csv.validation =
        write_csv_subset(set, set.split.validation, layout.manifests() / (base + "-validation.csv"));
    for (std::size_t k = 0; k < set.split.phases.size(); ++k) {
        const auto phase = "-phase" + std::to_string(k + 1);
        data.jsonl.phases.push_back(
            write_jsonl_subset(set, set.split.phases[k], layout.jsonl() / (base + phase + ".jsonl")));
        data.csv.phases.push_back(
            write_csv_subset(set, set.split.phases[k], layout.manifests() / (base + phase + ".csv")));
    }
    return data;
}

DomainData load_domain(const RunLayout& layout, dataset::Plant plant, int resolution)
{
    const auto path = layout.manifest_csv(plant, resolution);
    if (!fs::exists(path)) {
        throw SchedulerError("no curated manifest " + path.string() + "; run curate first");
    }
    return prepare_domain(layout, dataset::import_manifest_csv(path));
}

CurateResult curate(const RunLayout& layout, const CurateOptions& options)
{
    if (options.resolutions.empty()) {
        throw SchedulerError("curate needs at least one resolution");
    }
    layout.create();
    CurateResult result;
    auto scanned = dataset::scan_dataset(options.dataset_root, options.plant);
    result.warnings = scanned.warnings;
    if (scanned.samples.empty()) {
        throw SchedulerError("no " + std::string(dataset::to_string(options.plant)) + " images under " +
                             options.dataset_root.string());
    }
    const auto balanced = dataset::undersample_balance(scanned, options.per_class, options.seed);
    const auto split = dataset::partition_phases(dataset::split_dataset(balanced, options.seed), options.phase_size);

    auto thumbs = dataset::make_thumbnails(balanced, options.resolutions, layout.images(), options.image_base_url);
    if (!thumbs.failures.empty()) {
        std::string message = std::to_string(thumbs.failures.size()) + " thumbnail failures, first: " +
                              thumbs.failures.front();
        throw SchedulerError(message);
    }
    for (std::size_t k = 0; k < options.resolutions.size(); ++k) {
        const auto dest = layout.manifest_csv(options.plant, options.resolutions[k]);
        dataset::export_manifest_csv({thumbs.manifests[k], split}, dest);
        result.manifests.push_back(dest);
    }
    return result;
}

} // namespace leafbench::scheduler
