#include "leafbench/dataset.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <system_error>

namespace leafbench::dataset {

namespace fs = std::filesystem;

ThumbnailResult make_thumbnails(const DatasetManifest& manifest, const std::vector<int>& sizes,
                                const fs::path& out_root, std::string_view base_url)
{
    ThumbnailResult result;
    for (int size : sizes) {
        if (!is_valid_resolution(size)) {
            throw DatasetError("unsupported thumbnail size " + std::to_string(size));
        }
    }
    result.manifests.reserve(sizes.size());
    for (int size : sizes) {
        DatasetManifest out = manifest;
        out.resolution_px = size;
        out.samples.clear();
        out.warnings.clear();
        result.manifests.push_back(std::move(out));
    }

    for (const auto& sample : manifest.samples) {
        const cv::Mat source = cv::imread(sample.local_path.string(), cv::IMREAD_COLOR);
        if (source.empty()) {
            result.failures.push_back("cannot decode " + sample.local_path.string());
            continue;
        }
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            const int size = sizes[k];
            const fs::path dest = out_root / std::string(display_name(sample.plant)) / std::to_string(size) /
                                  sample.label / sample.local_path.filename();
            std::error_code ec;
            fs::create_directories(dest.parent_path(), ec);
            if (ec) {
                result.failures.push_back("cannot create " + dest.parent_path().string() + ": " + ec.message());
                continue;
            }
            const auto [w, h] = thumbnail_size(source.cols, source.rows, size);
            bool ok = false;
            if (w == source.cols && h == source.rows) {
                // Identity: copy the original bytes instead of re-encoding.
                if (fs::equivalent(sample.local_path, dest, ec)) {
                    ok = true;
                } else {
                    ok = fs::copy_file(sample.local_path, dest, fs::copy_options::overwrite_existing, ec);
                }
            } else {
                cv::Mat resized;
                cv::resize(source, resized, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
                ok = cv::imwrite(dest.string(), resized);
            }
            if (!ok) {
                result.failures.push_back("cannot write " + dest.string());
                continue;
            }
            ImageSample scaled = sample;
            scaled.local_path = dest;
            scaled.resolution_px = size;
            result.manifests[k].samples.push_back(std::move(scaled));
        }
    }
    for (auto& m : result.manifests) {
        m = with_public_urls(std::move(m), base_url);
    }
    return result;
}

} // namespace leafbench::dataset
