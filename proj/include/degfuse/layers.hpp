// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "degfuse/autograd.hpp"

namespace degfuse {

/// A named trainable leaf. Copies share the underlying node.
struct Parameter {
    std::string name;
    ag::Var var;
};

using ParamList = std::vector<Parameter>;

std::size_t count_scalars(const ParamList& params);

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t hash_string(std::string_view text);

/// Deterministic parameter initialization. Each parameter's values depend
/// only on (seed, name), never on construction order, and are rounded to
/// float32 so that checkpoints store them losslessly.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : seed_(seed) {}

    /// Normal(0, gain / sqrt(fan_in)).
    Parameter kaiming(const std::string& name, Shape shape, std::size_t fan_in,
                      double gain = kLeakyGain) const;
    Parameter constant(const std::string& name, Shape shape, double value) const;
    Parameter zeros(const std::string& name, Shape shape) const { return constant(name, shape, 0.0); }

    std::uint64_t seed() const { return seed_; }

    /// sqrt(2 / (1 + 0.2^2)), the fan-in gain for LeakyReLU(0.2).
    static constexpr double kLeakyGain = 1.3867504905630728;

private:
    std::uint64_t seed_;
};

/// Square-kernel convolution with zero padding k/2.
class Conv2d {
public:
    enum class Init { kaiming, zero };

    Conv2d() = default;
    Conv2d(const Initializer& init, const std::string& name, int in_channels, int out_channels,
           int kernel, int stride = 1, int groups = 1, Init mode = Init::kaiming);

    ag::Var operator()(const ag::Var& x) const;

    const Parameter& weight() const { return weight_; }
    const Parameter& bias() const { return bias_; }
    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int kernel() const { return kernel_; }
    int stride() const { return stride_; }
    int groups() const { return groups_; }

    void collect(ParamList& out) const;

private:
    Parameter weight_;
    Parameter bias_;
    int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, groups_ = 1;
};

class Linear {
public:
    enum class Init { kaiming, zero };

    Linear() = default;
    Linear(const Initializer& init, const std::string& name, int in_features, int out_features,
           Init mode = Init::kaiming, double gain = Initializer::kLeakyGain);

    ag::Var operator()(const ag::Var& x) const;

    const Parameter& weight() const { return weight_; }
    const Parameter& bias() const { return bias_; }
    int in_features() const { return in_; }
    int out_features() const { return out_; }

    void collect(ParamList& out) const;

private:
    Parameter weight_;
    Parameter bias_;
    int in_ = 0, out_ = 0;
};

}  // namespace degfuse
