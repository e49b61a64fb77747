#include "leafbench/dataset.hpp"

#include "leafbench/csv.hpp"
#include "leafbench/io.hpp"
#include "leafbench/rng.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace leafbench::dataset {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string_view text)
{
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

bool is_image_file(const fs::path& path)
{
    const auto ext = lower(path.extension().string());
    return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

bool is_number(std::string_view text)
{
    return !text.empty() && std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::optional<fs::path> find_plant_dir(const fs::path& root, Plant plant)
{
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        return std::nullopt;
    }
    for (const auto& entry : fs::directory_iterator(root, ec)) {
        if (entry.is_directory() && lower(entry.path().filename().string()) == to_string(plant)) {
            return entry.path();
        }
    }
    return std::nullopt;
}

std::map<std::string, std::vector<std::size_t>> indices_by_class(const DatasetManifest& manifest)
{
    std::map<std::string, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        out[manifest.samples[i].label].push_back(i);
    }
    return out;
}

} // namespace

std::string_view to_string(Plant plant)
{
    return plant == Plant::apple ? "apple" : "corn";
}

std::string_view display_name(Plant plant)
{
    return plant == Plant::apple ? "Apple" : "Corn";
}

Plant parse_plant(std::string_view text)
{
    const auto name = lower(text);
    if (name == "apple") {
        return Plant::apple;
    }
    if (name == "corn") {
        return Plant::corn;
    }
    throw DatasetError("unknown plant '" + std::string(text) + "'");
}

const std::vector<std::string>& class_labels(Plant plant)
{
    static const std::vector<std::string> apple{"black-rot", "healthy", "rust", "scab"};
    static const std::vector<std::string> corn{"gray-leaf-spot", "healthy", "northern-leaf-blight", "rust"};
    return plant == Plant::apple ? apple : corn;
}

bool is_valid_resolution(int px)
{
    return std::find(kResolutions.begin(), kResolutions.end(), px) != kResolutions.end();
}

ShortageError::ShortageError(std::string label, std::size_t available, std::size_t requested)
    : DatasetError("class '" + label + "' has " + std::to_string(available) + " samples, " +
                   std::to_string(requested) + " requested"),
      label_(std::move(label))
{
}

std::map<std::string, std::size_t> DatasetManifest::class_counts() const
{
    std::map<std::string, std::size_t> counts;
    for (const auto& s : samples) {
        ++counts[s.label];
    }
    return counts;
}

const ImageSample* DatasetManifest::find(std::string_view id) const
{
    auto it = std::find_if(samples.begin(), samples.end(), [&](const ImageSample& s) { return s.id == id; });
    return it == samples.end() ? nullptr : &*it;
}

std::string_view to_string(SplitName split)
{
    switch (split) {
    case SplitName::train:
        return "train";
    case SplitName::validation:
        return "validation";
    case SplitName::test:
        return "test";
    }
    return "train";
}

SplitName parse_split(std::string_view text)
{
    if (text == "train") {
        return SplitName::train;
    }
    if (text == "validation") {
        return SplitName::validation;
    }
    if (text == "test") {
        return SplitName::test;
    }
    throw DatasetError("unknown split '" + std::string(text) + "'");
}

std::optional<SplitName> SplitSpec::split_of(std::string_view id) const
{
    auto contains = [&](const std::vector<std::string>& ids) {
        return std::find(ids.begin(), ids.end(), id) != ids.end();
    };
    if (contains(train)) {
        return SplitName::train;
    }
    if (contains(validation)) {
        return SplitName::validation;
    }
    if (contains(test)) {
        return SplitName::test;
    }
    return std::nullopt;
}

std::optional<int> SplitSpec::phase_of(std::string_view id) const
{
    for (std::size_t p = 0; p < phases.size(); ++p) {
        if (std::find(phases[p].begin(), phases[p].end(), id) != phases[p].end()) {
            return static_cast<int>(p + 1);
        }
    }
    return std::nullopt;
}

std::vector<ImageSample> CuratedSet::samples_in(const std::vector<std::string>& ids) const
{
    std::unordered_map<std::string_view, const ImageSample*> by_id;
    for (const auto& s : manifest.samples) {
        by_id.emplace(s.id, &s);
    }
    std::vector<ImageSample> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw DatasetError("split references unknown sample '" + id + "'");
        }
        out.push_back(*it->second);
    }
    return out;
}

DatasetManifest scan_dataset(const fs::path& root, Plant plant, int resolution_px)
{
    if (!is_valid_resolution(resolution_px)) {
        throw DatasetError("unsupported resolution " + std::to_string(resolution_px));
    }
    DatasetManifest manifest;
    manifest.plant = plant;
    manifest.resolution_px = resolution_px;

    std::error_code ec;
    if (!fs::exists(root, ec)) {
        throw DatasetError("dataset root " + root.string() + " does not exist");
    }
    if (!fs::is_directory(root, ec)) {
        throw DatasetError("dataset root " + root.string() + " is not a directory");
    }
    const auto plant_dir = find_plant_dir(root, plant);
    if (!plant_dir) {
        return manifest;
    }
    fs::path base = *plant_dir;
    const bool scaled = fs::is_directory(base / std::to_string(resolution_px), ec);
    if (scaled) {
        base /= std::to_string(resolution_px);
    } else if (resolution_px != kNativeResolution) {
        return manifest;
    }

    const auto& labels = class_labels(plant);
    std::vector<fs::path> label_dirs;
    fs::directory_iterator it(base, ec);
    if (ec) {
        throw DatasetError("cannot read " + base.string() + ": " + ec.message());
    }
    for (const auto& entry : it) {
        if (!entry.is_directory()) {
            continue;
        }
        const auto name = entry.path().filename().string();
        if (!scaled && is_number(name)) {
            continue; // a resolution folder beside the label folders
        }
        if (std::find(labels.begin(), labels.end(), lower(name)) == labels.end()) {
            throw DatasetError("unrecognized label folder '" + name + "' under " + base.string());
        }
        label_dirs.push_back(entry.path());
    }
    std::sort(label_dirs.begin(), label_dirs.end());

    for (const auto& dir : label_dirs) {
        const auto label = lower(dir.filename().string());
        std::vector<fs::path> files;
        fs::directory_iterator files_it(dir, ec);
        if (ec) {
            throw DatasetError("cannot read " + dir.string() + ": " + ec.message());
        }
        for (const auto& entry : files_it) {
            if (!entry.is_regular_file()) {
                continue;
            }
            if (!is_image_file(entry.path())) {
                manifest.warnings.push_back("skipped non-image file " + entry.path().string());
                continue;
            }
            files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            ImageSample sample;
            sample.id = std::string(to_string(plant)) + "/" + label + "/" + file.filename().string();
            sample.plant = plant;
            sample.label = label;
            sample.local_path = file;
            sample.resolution_px = resolution_px;
            manifest.samples.push_back(std::move(sample));
        }
    }
    std::sort(manifest.warnings.begin(), manifest.warnings.end());
    return manifest;
}

DatasetManifest undersample_balance(const DatasetManifest& manifest, std::size_t per_class, std::uint64_t seed)
{
    DatasetManifest out = manifest;
    out.samples.clear();
    out.seed = seed;
    if (per_class == 0) {
        return out;
    }
    auto groups = indices_by_class(manifest);
    for (const auto& label : class_labels(manifest.plant)) {
        const auto available = groups.count(label) ? groups[label].size() : 0;
        if (available < per_class) {
            throw ShortageError(label, available, per_class);
        }
    }

    Rng rng(seed);
    std::vector<std::size_t> keep;
    for (auto& [label, indices] : groups) {
        rng.shuffle(indices);
        keep.insert(keep.end(), indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(per_class));
    }
    std::sort(keep.begin(), keep.end());
    out.samples.reserve(keep.size());
    for (auto i : keep) {
        out.samples.push_back(manifest.samples[i]);
    }
    return out;
}

SplitSpec split_dataset(const DatasetManifest& manifest, std::uint64_t seed)
{
    const auto counts = manifest.class_counts();
    if (counts.empty()) {
        throw DatasetError("cannot split an empty manifest");
    }
    const std::size_t per_class = counts.begin()->second;
    for (const auto& [label, n] : counts) {
        if (n != per_class) {
            throw DatasetError("manifest is not balanced: '" + label + "' has " + std::to_string(n) +
                               " samples, '" + counts.begin()->first + "' has " + std::to_string(per_class));
        }
    }
    // 80/20 holdout, then 80/20 train/validation of the remainder.
    if (per_class % 5 != 0 || (per_class - per_class / 5) % 5 != 0) {
        throw DatasetError("per-class count " + std::to_string(per_class) +
                           " does not stratify into integral 80/20 and 80/20 splits");
    }
    const std::size_t test_n = per_class / 5;
    const std::size_t val_n = (per_class - test_n) / 5;

    SplitSpec split;
    split.seed = seed;
    Rng rng(seed);
    for (auto& [label, indices] : indices_by_class(manifest)) {
        std::vector<std::string> ids;
        ids.reserve(indices.size());
        for (auto i : indices) {
            ids.push_back(manifest.samples[i].id);
        }
        rng.shuffle(ids);
        split.test.insert(split.test.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(test_n));
        split.validation.insert(split.validation.end(), ids.begin() + static_cast<std::ptrdiff_t>(test_n),
                                ids.begin() + static_cast<std::ptrdiff_t>(test_n + val_n));
        split.train.insert(split.train.end(), ids.begin() + static_cast<std::ptrdiff_t>(test_n + val_n), ids.end());
    }
    rng.shuffle(split.train);
    rng.shuffle(split.validation);
    rng.shuffle(split.test);
    return split;
}

SplitSpec partition_phases(const SplitSpec& split, std::size_t phase_size)
{
    if (phase_size == 0 || split.train.size() % phase_size != 0) {
        throw DatasetError("train size " + std::to_string(split.train.size()) + " is not divisible by phase size " +
                           std::to_string(phase_size));
    }
    SplitSpec out = split;
    out.phases.clear();
    for (std::size_t start = 0; start < split.train.size(); start += phase_size) {
        out.phases.emplace_back(split.train.begin() + static_cast<std::ptrdiff_t>(start),
                                split.train.begin() + static_cast<std::ptrdiff_t>(start + phase_size));
    }
    return out;
}

std::pair<int, int> thumbnail_size(int width, int height, int box)
{
    if (width <= 0 || height <= 0 || box <= 0) {
        throw DatasetError("thumbnail dimensions must be positive");
    }
    const int longest = std::max(width, height);
    if (longest <= box) {
        return {width, height};
    }
    // round(v * box / longest), halves rounded up, in integer arithmetic.
    auto scale = [&](int v) {
        const auto num = 2LL * v * box + longest;
        return std::max(1, static_cast<int>(num / (2LL * longest)));
    };
    return {scale(width), scale(height)};
}

DatasetManifest with_public_urls(DatasetManifest manifest, std::string_view base_url)
{
    std::string prefix(base_url);
    while (!prefix.empty() && prefix.back() == '/') {
        prefix.pop_back();
    }
    for (auto& s : manifest.samples) {
        std::string rel = std::string(display_name(s.plant)) + "/" + std::to_string(s.resolution_px) + "/" + s.label +
                          "/" + s.local_path.filename().string();
        s.public_url = prefix.empty() ? rel : prefix + "/" + rel;
    }
    return manifest;
}

void export_manifest_csv(const CuratedSet& set, const fs::path& dest)
{
    const auto& manifest = set.manifest;
    if (manifest.samples.empty()) {
        throw DatasetError("refusing to export an empty manifest");
    }
    std::unordered_map<std::string_view, SplitName> split_of;
    for (const auto& id : set.split.train) {
        split_of.emplace(id, SplitName::train);
    }
    for (const auto& id : set.split.validation) {
        split_of.emplace(id, SplitName::validation);
    }
    for (const auto& id : set.split.test) {
        split_of.emplace(id, SplitName::test);
    }
    std::unordered_map<std::string_view, int> phase_of;
    for (std::size_t p = 0; p < set.split.phases.size(); ++p) {
        for (const auto& id : set.split.phases[p]) {
            phase_of.emplace(id, static_cast<int>(p + 1));
        }
    }

    std::string text(kManifestHeader);
    text += '\n';
    for (const auto& s : manifest.samples) {
        auto split = split_of.find(s.id);
        if (split == split_of.end()) {
            throw DatasetError("sample '" + s.id + "' has no split assignment");
        }
        auto phase = phase_of.find(s.id);
        text += csv::format_row({
            s.id,
            std::string(to_string(s.plant)),
            std::to_string(s.resolution_px),
            s.label,
            std::string(to_string(split->second)),
            phase == phase_of.end() ? std::string() : std::to_string(phase->second),
            s.local_path.generic_string(),
            s.public_url.value_or(""),
        });
    }
    try {
        io::write_text_atomic(dest, text);
    } catch (const std::runtime_error& e) {
        throw DatasetError(e.what());
    }
}

CuratedSet import_manifest_csv(const fs::path& src)
{
    std::vector<csv::Row> rows;
    try {
        rows = csv::read_file(src);
    } catch (const std::runtime_error& e) {
        throw DatasetError(e.what());
    }
    if (rows.empty() || csv::format_row(rows.front()) != std::string(kManifestHeader) + "\n") {
        throw DatasetError(src.string() + ": missing or unexpected manifest header");
    }
    CuratedSet set;
    std::map<int, std::vector<std::string>> phases;
    std::set<std::string> seen;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.size() != 8) {
            throw DatasetError(src.string() + ": line " + std::to_string(i + 1) + " has " +
                               std::to_string(row.size()) + " fields, expected 8");
        }
        ImageSample s;
        s.id = row[0];
        s.plant = parse_plant(row[1]);
        s.resolution_px = std::stoi(row[2]);
        s.label = row[3];
        s.local_path = row[6];
        if (!row[7].empty()) {
            s.public_url = row[7];
        }
        const auto& labels = class_labels(s.plant);
        if (std::find(labels.begin(), labels.end(), s.label) == labels.end()) {
            throw DatasetError(src.string() + ": line " + std::to_string(i + 1) + " has unknown label '" + s.label + "'");
        }
        if (!seen.insert(s.id).second) {
            throw DatasetError(src.string() + ": duplicate sample id '" + s.id + "'");
        }
        switch (parse_split(row[4])) {
        case SplitName::train:
            set.split.train.push_back(s.id);
            break;
        case SplitName::validation:
            set.split.validation.push_back(s.id);
            break;
        case SplitName::test:
            set.split.test.push_back(s.id);
            break;
        }
        if (!row[5].empty()) {
            phases[std::stoi(row[5])].push_back(s.id);
        }
        if (i == 1) {
            set.manifest.plant = s.plant;
            set.manifest.resolution_px = s.resolution_px;
        }
        set.manifest.samples.push_back(std::move(s));
    }
    for (auto& [phase, ids] : phases) {
        set.split.phases.push_back(std::move(ids));
    }
    return set;
}

} // namespace leafbench::dataset
