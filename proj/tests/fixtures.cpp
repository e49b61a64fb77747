#include "fixtures.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <atomic>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unistd.h>

namespace leafbench::testing {

namespace fs = std::filesystem;

TempDir::TempDir()
{
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("leafbench-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir()
{
    std::error_code ec;
    fs::remove_all(path_, ec);
}

void write_image(const fs::path& path, int width, int height, unsigned seed)
{
    fs::create_directories(path.parent_path());
    const auto base = cv::Scalar(40 + seed * 37 % 120, 90 + seed * 53 % 140, 30 + seed * 17 % 90);
    cv::Mat image(height, width, CV_8UC3, base);
    cv::ellipse(image, cv::Point(width / 2, height / 2), cv::Size(width / 3, height / 4), 30.0, 0.0, 360.0,
                cv::Scalar(20, 160, 40), cv::FILLED);
    cv::circle(image, cv::Point(width / 3, height / 3), std::max(2, width / 12), cv::Scalar(30, 60, 140 + seed % 100),
               cv::FILLED);
    if (!cv::imwrite(path.string(), image)) {
        throw std::runtime_error("cannot write fixture image " + path.string());
    }
}

void make_corpus(const fs::path& root, dataset::Plant plant, const std::map<std::string, int>& counts,
                 bool real_images, int width, int height)
{
    const fs::path plant_dir = root / std::string(dataset::display_name(plant));
    unsigned seed = 0;
    for (const auto& [label, n] : counts) {
        fs::create_directories(plant_dir / label);
        for (int i = 0; i < n; ++i) {
            const auto file = plant_dir / label / (label + "-" + std::to_string(i) + ".JPG");
            if (real_images) {
                write_image(file, width, height, seed++);
            } else {
                std::ofstream(file).put('\0');
            }
        }
    }
}

dataset::DatasetManifest synthetic_manifest(dataset::Plant plant, int per_class, int resolution)
{
    dataset::DatasetManifest m;
    m.plant = plant;
    m.resolution_px = resolution;
    for (const auto& label : dataset::class_labels(plant)) {
        for (int i = 0; i < per_class; ++i) {
            dataset::ImageSample s;
            const auto file = label + "-" + std::to_string(i) + ".JPG";
            s.id = std::string(dataset::to_string(plant)) + "/" + label + "/" + file;
            s.plant = plant;
            s.label = label;
            s.resolution_px = resolution;
            s.local_path = fs::path("/data") / std::string(dataset::display_name(plant)) /
                           std::to_string(resolution) / label / file;
            m.samples.push_back(std::move(s));
        }
    }
    return dataset::with_public_urls(std::move(m), "");
}

dataset::CuratedSet synthetic_curated(dataset::Plant plant, int resolution, std::uint64_t seed)
{
    dataset::CuratedSet set;
    set.manifest = synthetic_manifest(plant, 200, resolution);
    set.split = dataset::partition_phases(dataset::split_dataset(set.manifest, seed), 128);
    return set;
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

} // namespace leafbench::testing
