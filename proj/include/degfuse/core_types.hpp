// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "degfuse/tensor.hpp"

namespace degfuse {

enum class TensorRole { image, feature };

/// A (channels, height, width) array. Image-role tensors hold intensities
/// in [0,1]; construction rejects anything outside that range. Immutable.
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(std::size_t channels, std::size_t height, std::size_t width,
                TensorRole role = TensorRole::image);
    explicit ImageTensor(Tensor data, TensorRole role = TensorRole::image);

    static ImageTensor filled(std::size_t channels, std::size_t height, std::size_t width,
                              double value, TensorRole role = TensorRole::image);

    std::size_t channels() const { return data_.empty() ? 0 : data_.dim(0); }
    std::size_t height() const { return data_.empty() ? 0 : data_.dim(1); }
    std::size_t width() const { return data_.empty() ? 0 : data_.dim(2); }
    std::size_t pixels() const { return height() * width(); }
    TensorRole role() const { return role_; }
    bool empty() const { return data_.empty(); }

    const Tensor& tensor() const { return data_; }
    std::span<const double> data() const { return data_.data(); }
    std::span<const double> plane(std::size_t c) const;
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data_.at(c, y, x); }

    ImageTensor channel(std::size_t c) const;
    bool same_size(const ImageTensor& other) const {
        return height() == other.height() && width() == other.width();
    }

private:
    Tensor data_;
    TensorRole role_ = TensorRole::image;
};

/// Network inputs must be at least 8x8 with both sides divisible by 8.
void require_network_dims(const ImageTensor& img, std::string_view what);

struct PromptEmbedding {
    std::vector<double> vector;
    std::string source_text;
};

/// Per-channel scale/shift pair produced from a prompt embedding.
struct GuidanceParams {
    std::vector<double> scale;
    std::vector<double> shift;
};

enum class IrDegradation { none, low_contrast, noise };
enum class ViDegradation { none, low_light, overexposure };

std::string to_string(IrDegradation mode);
std::string to_string(ViDegradation mode);
IrDegradation parse_ir_degradation(std::string_view text);
ViDegradation parse_vi_degradation(std::string_view text);

enum class Architecture { full, no_spdce, no_jpdcf };
std::string to_string(Architecture a);
Architecture parse_architecture(std::string_view text);

struct NetworkConfig {
    int base_channels = 32;
    int num_scales = 4;
    int transformer_depth = 2;
    int msconv_depth = 3;
    std::vector<int> msconv_kernels{1, 3, 5};
    int prompt_dim = 512;
    int attention_heads = 4;
    std::uint64_t seed = 0;
    Architecture architecture = Architecture::full;

    /// Channel width of level n (0-based): base_channels * 2^n.
    int level_channels(int level) const { return base_channels << level; }

    bool operator==(const NetworkConfig&) const = default;
};

/// Returns cfg unchanged when it is usable, throws std::invalid_argument otherwise.
NetworkConfig validate_config(const NetworkConfig& cfg);

struct LossWeights {
    double alpha = 10.0;
    double beta = 12.0;
    double gamma = 10.0;
    bool operator==(const LossWeights&) const = default;
};

void validate_weights(const LossWeights& w);

/// Degraded inputs plus the clean references the losses compare against.
/// IR images are single-channel, visible images are RGB.
struct FusionSample {
    ImageTensor ir_degraded;
    ImageTensor vi_degraded;
    ImageTensor ir_reference;
    ImageTensor vi_reference;
    std::string prompt_ir;
    std::string prompt_vi;

    void validate() const;
};

// Flat "key = value" text used for configs and checkpoint headers.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const std::vector<std::pair<std::string, std::string>>& entries);

std::vector<std::pair<std::string, std::string>> to_key_values(const NetworkConfig& cfg);
/// Reads the network keys; keys it does not know are left for the caller.
NetworkConfig network_config_from(const KeyValues& kv);
bool is_network_key(std::string_view key);

std::string serialize(const NetworkConfig& cfg);
NetworkConfig parse_network_config(std::string_view text);

// Strict numeric parsing shared by every config reader.
int parse_int(std::string_view key, std::string_view text);
std::uint64_t parse_u64(std::string_view key, std::string_view text);
double parse_double(std::string_view key, std::string_view text);
std::string format_double(double v);

}  // namespace degfuse
