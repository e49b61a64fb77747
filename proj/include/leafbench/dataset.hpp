#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace leafbench::dataset {

enum class Plant { apple, corn };

std::string_view to_string(Plant plant);    // "apple"
std::string_view display_name(Plant plant); // "Apple"
Plant parse_plant(std::string_view text);   // case-insensitive

/// The four class labels of a plant, sorted ascending.
const std::vector<std::string>& class_labels(Plant plant);

inline constexpr std::array<int, 3> kResolutions{100, 150, 256};
inline constexpr int kNativeResolution = 256;
bool is_valid_resolution(int px);

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A class has fewer samples than requested by undersampling.
class ShortageError : public DatasetError {
public:
    ShortageError(std::string label, std::size_t available, std::size_t requested);
    const std::string& label() const noexcept { return label_; }

private:
    std::string label_;
};

struct ImageSample {
    /// "<plant>/<label>/<file name>"; identical across resolutions.
    std::string id;
    Plant plant = Plant::apple;
    std::string label;
    std::filesystem::path local_path;
    std::optional<std::string> public_url;
    int resolution_px = kNativeResolution;
};

struct DatasetManifest {
    Plant plant = Plant::apple;
    int resolution_px = kNativeResolution;
    std::vector<ImageSample> samples;
    std::uint64_t seed = 0;
    /// Non-fatal findings from scanning (skipped files and the like).
    std::vector<std::string> warnings;

    std::map<std::string, std::size_t> class_counts() const;
    const ImageSample* find(std::string_view id) const;
};

enum class SplitName { train, validation, test };
std::string_view to_string(SplitName split);
SplitName parse_split(std::string_view text);

struct SplitSpec {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
    std::vector<std::vector<std::string>> phases;
    std::uint64_t seed = 0;

    std::optional<SplitName> split_of(std::string_view id) const;
    /// 1-based phase number of a train id, if phases are populated.
    std::optional<int> phase_of(std::string_view id) const;
};

/// A manifest together with its split; what the manifest CSV stores.
struct CuratedSet {
    DatasetManifest manifest;
    SplitSpec split;

    std::vector<ImageSample> samples_in(const std::vector<std::string>& ids) const;
};

/// Lists `<root>/<Plant>/<label>/*` (resolution 256) or
/// `<root>/<Plant>/<resolution>/<label>/*`. The plant folder is matched
/// case-insensitively. A missing plant folder gives an empty manifest.
/// Files without an image extension are skipped and noted in `warnings`.
/// Throws DatasetError for unreadable directories or unknown label folders.
DatasetManifest scan_dataset(const std::filesystem::path& root, Plant plant,
                             int resolution_px = kNativeResolution);

/// Seeded uniform sampling without replacement of `per_class` samples from each
/// class. Output keeps manifest order.
DatasetManifest undersample_balance(const DatasetManifest& manifest, std::size_t per_class, std::uint64_t seed);

/// Stratified split: per class 20% test, then 20% of the rest validation.
/// With 200 per class this is 128/32/40 (512/128/160 overall).
SplitSpec split_dataset(const DatasetManifest& manifest, std::uint64_t seed = 42);

/// Cuts the train list into contiguous phases of `phase_size`.
SplitSpec partition_phases(const SplitSpec& split, std::size_t phase_size = 128);

/// Fit-within-box dimensions, round half up, never upscaled.
std::pair<int, int> thumbnail_size(int width, int height, int box);

struct ThumbnailResult {
    std::vector<DatasetManifest> manifests; // one per requested size, same order
    std::vector<std::string> failures;      // per-file decode/encode problems
};

/// Writes `<out_root>/<Plant>/<size>/<label>/<file>` for every sample and size.
/// Outputs are a pure function of the inputs, so re-running overwrites identically.
/// Public URLs become `<base_url>/<Plant>/<size>/<label>/<file>` (relative when
/// base_url is empty).
ThumbnailResult make_thumbnails(const DatasetManifest& manifest, const std::vector<int>& sizes,
                                const std::filesystem::path& out_root, std::string_view base_url = {});

/// Sets public_url from the sample's relative location under the layout above.
DatasetManifest with_public_urls(DatasetManifest manifest, std::string_view base_url);

inline constexpr std::string_view kManifestHeader =
    "id,plant,resolution,label,split,phase,local_path,public_url";

void export_manifest_csv(const CuratedSet& set, const std::filesystem::path& dest);
CuratedSet import_manifest_csv(const std::filesystem::path& src);

} // namespace leafbench::dataset
