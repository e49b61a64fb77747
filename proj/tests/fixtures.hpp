#pragma once

#include "leafbench/dataset.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace leafbench::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// Encodes a small synthetic leaf-like JPEG whose colour depends on `seed`.
void write_image(const std::filesystem::path& path, int width, int height, unsigned seed);

/// Builds `<root>/<Plant>/<label>/<label>-<i>.JPG` for each (label, count).
/// With `real_images` false the files are empty (enough for scanning).
void make_corpus(const std::filesystem::path& root, dataset::Plant plant,
                 const std::map<std::string, int>& counts, bool real_images = true, int width = 256,
                 int height = 256);

/// `per_class` samples for every class of the plant, in memory only, with
/// relative public URLs.
dataset::DatasetManifest synthetic_manifest(dataset::Plant plant, int per_class, int resolution = 256);

/// Balanced, split and phased set built from synthetic_manifest.
dataset::CuratedSet synthetic_curated(dataset::Plant plant, int resolution = 256, std::uint64_t seed = 42);

std::string read_file(const std::filesystem::path& path);

} // namespace leafbench::testing
