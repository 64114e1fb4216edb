// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "degfuse/core_types.hpp"
#include "degfuse/degrade.hpp"

namespace degfuse {

/// Decodes an 8-bit PNG/JPEG (or any 8-bit format OpenCV reads).
/// Grayscale files give 1 channel, colour files 3 channels in RGB order;
/// an alpha channel is dropped. Values are scaled to [0,1].
ImageTensor load_image(const std::string& path);
/// Writes an 8-bit image (1 or 3 channels); the format follows the extension.
void save_image(const std::string& path, const ImageTensor& img);
/// Rounds every value to the nearest multiple of 1/255.
ImageTensor quantize8(const ImageTensor& img);

/// Sub-window of every channel.
ImageTensor crop(const ImageTensor& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w);

struct DatasetRecord {
    std::string name;
    std::string ir_path;
    std::string vi_path;
    std::optional<std::string> ir_ref_path;
    std::optional<std::string> vi_ref_path;
    std::string prompt_ir;
    std::string prompt_vi;
    std::optional<DegradeSpec> spec;
};

struct DatasetManifest {
    /// Relative record paths resolve against this directory.
    std::string root;
    std::vector<DatasetRecord> records;

    std::string resolve(const std::string& path) const;
};

inline constexpr std::size_t kDefaultPatchSize = 96;

struct ManifestBuild {
    DatasetManifest manifest;
    /// Files present in only one of the matched directories.
    std::vector<std::string> unmatched;
};

/// Pairs files with equal names across the directories. Optional reference
/// directories must contain every matched name. Pairs smaller than
/// `min_size` in either dimension are rejected with an error.
ManifestBuild build_manifest(const std::string& ir_dir, const std::string& vi_dir,
                             const std::optional<std::string>& ir_ref_dir = std::nullopt,
                             const std::optional<std::string>& vi_ref_dir = std::nullopt,
                             std::size_t min_size = kDefaultPatchSize);

/// JSON lines; paths are written relative to the manifest's directory.
void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path);
std::string manifest_record_json(const DatasetRecord& r);
DatasetRecord parse_manifest_record(const std::string& line);

/// Loads the images of a record. Missing references default to the inputs,
/// missing prompts to the "no degradation" pair. Colour infrared files are
/// reduced to luminance.
FusionSample load_sample(const DatasetManifest& manifest, const DatasetRecord& record);

/// Aligned crops of all four images on a floor(H/size) x floor(W/size)
/// grid whose origin is shifted by one seeded offset within the slack.
std::vector<FusionSample> crop_patches(const FusionSample& sample, std::size_t size, std::uint64_t seed);

/// Index batches over a fixed-size collection, reshuffled every epoch from
/// a seed derived from (seed, epoch). The last batch may be short.
class BatchIterator {
public:
    BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::size_t> order(std::size_t epoch) const;
    std::vector<std::vector<std::size_t>> batches(std::size_t epoch) const;
    std::size_t batches_per_epoch() const { return (count_ + batch_size_ - 1) / batch_size_; }

private:
    std::size_t count_;
    std::size_t batch_size_;
    std::uint64_t seed_;
};

}  // namespace degfuse
