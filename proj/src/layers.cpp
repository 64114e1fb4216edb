// SPDX-License-Identifier: Apache-2.0
#include "degfuse/layers.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace degfuse {

std::size_t count_scalars(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.var.size();
    return n;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t hash_string(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Parameter Initializer::kaiming(const std::string& name, Shape shape, std::size_t fan_in,
                               double gain) const {
    std::mt19937_64 rng(mix_seed(seed_, hash_string(name)));
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    round_to_float(t);
    return {name, ag::leaf(std::move(t))};
}

Parameter Initializer::constant(const std::string& name, Shape shape, double value) const {
    Tensor t(std::move(shape), value);
    round_to_float(t);
    return {name, ag::leaf(std::move(t))};
}

Conv2d::Conv2d(const Initializer& init, const std::string& name, int in_channels,
               int out_channels, int kernel, int stride, int groups, Init mode)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), groups_(groups) {
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || kernel % 2 == 0 || groups <= 0 ||
        in_channels % groups || out_channels % groups) {
        throw std::invalid_argument("conv '" + name + "': invalid geometry");
    }
    const auto cin = static_cast<std::size_t>(in_channels / groups);
    Shape shape{static_cast<std::size_t>(out_channels), cin, static_cast<std::size_t>(kernel),
                static_cast<std::size_t>(kernel)};
    weight_ = mode == Init::zero ? init.zeros(name + ".weight", shape)
                                 : init.kaiming(name + ".weight", shape, cin * kernel * kernel);
    bias_ = init.zeros(name + ".bias", Shape{static_cast<std::size_t>(out_channels)});
}

ag::Var Conv2d::operator()(const ag::Var& x) const {
    return ag::conv2d(x, weight_.var, bias_.var, stride_, groups_);
}

void Conv2d::collect(ParamList& out) const {
    out.push_back(weight_);
    out.push_back(bias_);
}

Linear::Linear(const Initializer& init, const std::string& name, int in_features,
               int out_features, Init mode, double gain)
    : in_(in_features), out_(out_features) {
    if (in_features <= 0 || out_features <= 0) {
        throw std::invalid_argument("linear '" + name + "': invalid size");
    }
    Shape shape{static_cast<std::size_t>(out_features), static_cast<std::size_t>(in_features)};
    weight_ = mode == Init::zero
                  ? init.zeros(name + ".weight", shape)
                  : init.kaiming(name + ".weight", shape, static_cast<std::size_t>(in_features), gain);
    bias_ = init.zeros(name + ".bias", Shape{static_cast<std::size_t>(out_features)});
}

ag::Var Linear::operator()(const ag::Var& x) const {
    return ag::linear(x, weight_.var, bias_.var);
}

void Linear::collect(ParamList& out) const {
    out.push_back(weight_);
    out.push_back(bias_);
}

}  // namespace degfuse
