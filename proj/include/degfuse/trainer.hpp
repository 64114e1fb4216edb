// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "degfuse/core_types.hpp"
#include "degfuse/data_io.hpp"
#include "degfuse/fusion_net.hpp"
#include "degfuse/losses.hpp"
#include "degfuse/prompt_encoder.hpp"

namespace degfuse {

enum class TrainMode { degradation_aware, degradation_agnostic };
enum class TrainAblation { full, no_spdce, no_jpdcf, no_color_loss, no_texture_loss };

std::string to_string(TrainMode m);
std::string to_string(TrainAblation a);
TrainMode parse_train_mode(std::string_view text);
TrainAblation parse_train_ablation(std::string_view text);

struct TrainConfig {
    /// Network shape; its seed also drives data order and crop jitter.
    NetworkConfig network;
    double learning_rate = 2.5e-4;
    int batch_size = 16;
    int epochs = 1;
    LossWeights loss_weights;
    TrainMode mode = TrainMode::degradation_aware;
    TrainAblation ablation = TrainAblation::full;
    /// Stop after this many optimizer steps (0: run all epochs).
    int max_steps = 0;
    /// Write a checkpoint every N steps (0: only the final one).
    int checkpoint_every = 0;
    int patch_size = static_cast<int>(kDefaultPatchSize);
    /// Cosine decay from learning_rate to 0 over the run instead of a constant rate.
    bool cosine_schedule = false;
    double clip_norm = 1.0;
    /// Token embedding table for the prompt encoder; empty selects the hashing stub.
    std::string prompt_weights;

    bool operator==(const TrainConfig&) const = default;
};

/// Throws std::invalid_argument on unusable values.
void validate(const TrainConfig& cfg);
/// Parses "key = value" text; unknown keys are rejected.
TrainConfig parse_train_config(std::string_view text);
TrainConfig train_config_from(const KeyValues& kv);
std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& cfg);

/// Loss weights after applying a loss ablation.
LossWeights effective_weights(const TrainConfig& cfg);
/// Network config after applying an architecture ablation.
NetworkConfig effective_network(const TrainConfig& cfg);

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8, no weight decay). Moments and
/// updated parameters are rounded to float32 so checkpoints are exact.
class Adam {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    explicit Adam(const ParamList& params);

    /// Applies one update from the gradients currently held by the parameters.
    void step(const ParamList& params, double lr);

    std::int64_t steps() const { return t_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    void restore(std::int64_t t, std::vector<Tensor> m, std::vector<Tensor> v);

private:
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_gradients(const ParamList& params, double max_norm);

struct StepLog {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    LossReport loss;
    double lr = 0.0;
    double wall_ms = 0.0;

    /// {"step":..,"epoch":..,"intensity":..,"texture":..,"color":..,"total":..,"lr":..,"wall_ms":..}
    std::string to_json() const;
};

struct TrainState {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    /// Batches of `epoch` already consumed.
    std::int64_t batch_in_epoch = 0;
    /// Sum and count of batch losses within the current epoch.
    LossReport epoch_sum;
    std::int64_t epoch_batches = 0;
};

class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg);
    /// Restores network, optimizer, counters and config from a checkpoint.
    static Trainer from_checkpoint(const Checkpoint& ckpt);

    Trainer(Trainer&&) = default;
    Trainer& operator=(Trainer&&) = default;

    /// One optimizer step on the mean loss of `batch`. Returns the batch
    /// loss measured before the update.
    LossReport train_step(const std::vector<FusionSample>& batch);
    /// Same with an explicit learning rate (0 leaves the parameters unchanged).
    LossReport train_step(const std::vector<FusionSample>& batch, double lr);

    /// Loss of a sample under the current parameters, without updating.
    LossReport evaluate(const FusionSample& sample) const;

    struct FitOptions {
        /// Checkpoints go here when non-empty.
        std::string out_dir;
        std::function<void(const StepLog&)> on_step;
    };
    /// Continues training from the current state until all epochs (or
    /// max_steps) are done. Returns the logs of the steps taken.
    std::vector<StepLog> fit(const DatasetManifest& manifest, const FitOptions& opts);
    std::vector<StepLog> fit(const std::vector<FusionSample>& samples, const FitOptions& opts);

    Checkpoint checkpoint() const;
    void save(const std::string& path) const;

    const TrainConfig& config() const { return cfg_; }
    TrainConfig& mutable_config() { return cfg_; }
    const TrainState& state() const { return state_; }
    const FusionNetwork& network() const { return *net_; }
    const Adam& optimizer() const { return opt_; }
    const PromptEncoder& encoder() const { return *encoder_; }

    /// Learning rate for the step about to be taken.
    double current_lr(std::int64_t total_steps) const;

    /// The sample as the trainer sees it: agnostic mode swaps in the
    /// "no degradation" prompts and uses the inputs as references.
    FusionSample prepare(const FusionSample& sample) const;

private:
    const PromptEmbedding& embed(const std::string& text) const;

    TrainConfig cfg_;
    std::unique_ptr<FusionNetwork> net_;
    Adam opt_;
    std::unique_ptr<PromptEncoder> encoder_;
    TrainState state_;
    double step_lr_;
    mutable std::shared_ptr<std::map<std::string, PromptEmbedding>> prompt_cache_;
};

}  // namespace degfuse
