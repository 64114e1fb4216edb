// SPDX-License-Identifier: Apache-2.0
#include "degfuse/core_types.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace degfuse {

ImageTensor::ImageTensor(std::size_t channels, std::size_t height, std::size_t width,
                         TensorRole role)
    : data_(Shape{channels, height, width}), role_(role) {}

ImageTensor::ImageTensor(Tensor data, TensorRole role) : data_(std::move(data)), role_(role) {
    if (data_.rank() != 3) {
        throw std::invalid_argument("image tensor must be (C,H,W), got " +
                                    shape_string(data_.shape()));
    }
    if (role_ == TensorRole::image) {
        for (double v : data_.data()) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw std::invalid_argument("image value outside [0,1]: " + format_double(v));
            }
        }
    }
}

ImageTensor ImageTensor::filled(std::size_t channels, std::size_t height, std::size_t width,
                                double value, TensorRole role) {
    return ImageTensor(Tensor(Shape{channels, height, width}, value), role);
}

std::span<const double> ImageTensor::plane(std::size_t c) const {
    return data_.data().subspan(c * pixels(), pixels());
}

ImageTensor ImageTensor::channel(std::size_t c) const {
    if (c >= channels()) throw std::out_of_range("channel index out of range");
    auto p = plane(c);
    return ImageTensor(Tensor(Shape{1, height(), width()}, std::vector<double>(p.begin(), p.end())),
                       role_);
}

void require_network_dims(const ImageTensor& img, std::string_view what) {
    if (img.height() < 8 || img.width() < 8 || img.height() % 8 != 0 || img.width() % 8 != 0) {
        throw std::invalid_argument(std::string(what) + ": height and width must be >= 8 and " +
                                    "divisible by 8, got " + std::to_string(img.height()) + "x" +
                                    std::to_string(img.width()));
    }
}

std::string to_string(IrDegradation mode) {
    switch (mode) {
        case IrDegradation::none: return "none";
        case IrDegradation::low_contrast: return "low_contrast";
        case IrDegradation::noise: return "noise";
    }
    return "none";
}

std::string to_string(ViDegradation mode) {
    switch (mode) {
        case ViDegradation::none: return "none";
        case ViDegradation::low_light: return "low_light";
        case ViDegradation::overexposure: return "overexposure";
    }
    return "none";
}

IrDegradation parse_ir_degradation(std::string_view text) {
    if (text == "none") return IrDegradation::none;
    if (text == "low_contrast") return IrDegradation::low_contrast;
    if (text == "noise") return IrDegradation::noise;
    throw std::invalid_argument("unknown infrared degradation '" + std::string(text) + "'");
}

ViDegradation parse_vi_degradation(std::string_view text) {
    if (text == "none") return ViDegradation::none;
    if (text == "low_light") return ViDegradation::low_light;
    if (text == "overexposure") return ViDegradation::overexposure;
    throw std::invalid_argument("unknown visible degradation '" + std::string(text) + "'");
}

std::string to_string(Architecture a) {
    switch (a) {
        case Architecture::full: return "full";
        case Architecture::no_spdce: return "no_spdce";
        case Architecture::no_jpdcf: return "no_jpdcf";
    }
    return "full";
}

Architecture parse_architecture(std::string_view text) {
    if (text == "full") return Architecture::full;
    if (text == "no_spdce") return Architecture::no_spdce;
    if (text == "no_jpdcf") return Architecture::no_jpdcf;
    throw std::invalid_argument("unknown architecture '" + std::string(text) + "'");
}

NetworkConfig validate_config(const NetworkConfig& cfg) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (cfg.num_scales != 4) fail("num_scales must be 4");
    if (cfg.base_channels < 4) fail("base_channels must be >= 4");
    if (cfg.prompt_dim < 8) fail("prompt_dim must be >= 8");
    if (cfg.msconv_depth != 3) fail("msconv_depth must be 3");
    if (cfg.msconv_kernels != std::vector<int>{1, 3, 5}) fail("msconv_kernels must be 1,3,5");
    if (cfg.transformer_depth < 1) fail("transformer_depth must be >= 1");
    if (cfg.attention_heads < 1 || cfg.base_channels % cfg.attention_heads != 0) {
        fail("base_channels must be divisible by attention_heads");
    }
    return cfg;
}

void validate_weights(const LossWeights& w) {
    if (!(w.alpha >= 0 && w.beta >= 0 && w.gamma >= 0)) {
        throw std::invalid_argument("loss weights must be nonnegative");
    }
}

void FusionSample::validate() const {
    if (ir_degraded.channels() != 1 || ir_reference.channels() != 1) {
        throw std::invalid_argument("sample: infrared images must have 1 channel");
    }
    if (vi_degraded.channels() != 3 || vi_reference.channels() != 3) {
        throw std::invalid_argument("sample: visible images must have 3 channels");
    }
    if (!ir_degraded.same_size(vi_degraded) || !ir_degraded.same_size(ir_reference) ||
        !ir_degraded.same_size(vi_reference)) {
        throw std::invalid_argument("sample: all four images must share height and width");
    }
}

// ---------------------------------------------------------------------------
// key = value text

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

constexpr std::array<std::string_view, 9> kNetworkKeys{
    "base_channels", "num_scales",     "transformer_depth", "msconv_depth", "msconv_kernels",
    "prompt_dim",    "attention_heads", "seed",             "architecture"};

}  // namespace

KeyValues parse_key_values(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    while (!text.empty()) {
        auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw std::invalid_argument("line " + std::to_string(line_no) + ": expected key = value");
        }
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) throw std::invalid_argument("line " + std::to_string(line_no) + ": empty key");
        if (!kv.emplace(key, value).second) {
            throw std::invalid_argument("duplicate key '" + key + "'");
        }
    }
    return kv;
}

std::string format_key_values(const std::vector<std::pair<std::string, std::string>>& entries) {
    std::string out;
    for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
    return out;
}

int parse_int(std::string_view key, std::string_view text) {
    int v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size()) {
        throw std::invalid_argument("'" + std::string(key) + "': not an integer: '" +
                                    std::string(text) + "'");
    }
    return v;
}

std::uint64_t parse_u64(std::string_view key, std::string_view text) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size()) {
        throw std::invalid_argument("'" + std::string(key) + "': not an unsigned integer: '" +
                                    std::string(text) + "'");
    }
    return v;
}

double parse_double(std::string_view key, std::string_view text) {
    double v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size() || !std::isfinite(v)) {
        throw std::invalid_argument("'" + std::string(key) + "': not a finite number: '" +
                                    std::string(text) + "'");
    }
    return v;
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

bool is_network_key(std::string_view key) {
    return std::find(kNetworkKeys.begin(), kNetworkKeys.end(), key) != kNetworkKeys.end();
}

std::vector<std::pair<std::string, std::string>> to_key_values(const NetworkConfig& cfg) {
    std::string kernels;
    for (std::size_t i = 0; i < cfg.msconv_kernels.size(); ++i) {
        if (i) kernels += ",";
        kernels += std::to_string(cfg.msconv_kernels[i]);
    }
    return {
        {"base_channels", std::to_string(cfg.base_channels)},
        {"num_scales", std::to_string(cfg.num_scales)},
        {"transformer_depth", std::to_string(cfg.transformer_depth)},
        {"msconv_depth", std::to_string(cfg.msconv_depth)},
        {"msconv_kernels", kernels},
        {"prompt_dim", std::to_string(cfg.prompt_dim)},
        {"attention_heads", std::to_string(cfg.attention_heads)},
        {"seed", std::to_string(cfg.seed)},
        {"architecture", to_string(cfg.architecture)},
    };
}

NetworkConfig network_config_from(const KeyValues& kv) {
    NetworkConfig cfg;
    auto get = [&](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto v = get("base_channels")) cfg.base_channels = parse_int("base_channels", *v);
    if (auto v = get("num_scales")) cfg.num_scales = parse_int("num_scales", *v);
    if (auto v = get("transformer_depth")) cfg.transformer_depth = parse_int("transformer_depth", *v);
    if (auto v = get("msconv_depth")) cfg.msconv_depth = parse_int("msconv_depth", *v);
    if (auto v = get("msconv_kernels")) {
        cfg.msconv_kernels.clear();
        std::string_view rest = *v;
        while (!rest.empty()) {
            auto comma = rest.find(',');
            cfg.msconv_kernels.push_back(parse_int("msconv_kernels", trim(rest.substr(0, comma))));
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        }
    }
    if (auto v = get("prompt_dim")) cfg.prompt_dim = parse_int("prompt_dim", *v);
    if (auto v = get("attention_heads")) cfg.attention_heads = parse_int("attention_heads", *v);
    if (auto v = get("seed")) cfg.seed = parse_u64("seed", *v);
    if (auto v = get("architecture")) cfg.architecture = parse_architecture(*v);
    return cfg;
}

std::string serialize(const NetworkConfig& cfg) { return format_key_values(to_key_values(cfg)); }

NetworkConfig parse_network_config(std::string_view text) {
    KeyValues kv = parse_key_values(text);
    for (const auto& [k, v] : kv) {
        if (!is_network_key(k)) throw std::invalid_argument("unknown config key '" + k + "'");
    }
    return network_config_from(kv);
}

}  // namespace degfuse
