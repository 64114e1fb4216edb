// SPDX-License-Identifier: Apache-2.0
#include "degfuse/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>
#include <stdexcept>

#include "degfuse/layers.hpp"

namespace fs = std::filesystem;

namespace degfuse {

std::string to_string(TrainMode m) {
    return m == TrainMode::degradation_aware ? "degradation_aware" : "degradation_agnostic";
}

std::string to_string(TrainAblation a) {
    switch (a) {
        case TrainAblation::full: return "full";
        case TrainAblation::no_spdce: return "no_spdce";
        case TrainAblation::no_jpdcf: return "no_jpdcf";
        case TrainAblation::no_color_loss: return "no_color_loss";
        case TrainAblation::no_texture_loss: return "no_texture_loss";
    }
    return "full";
}

TrainMode parse_train_mode(std::string_view text) {
    if (text == "degradation_aware") return TrainMode::degradation_aware;
    if (text == "degradation_agnostic") return TrainMode::degradation_agnostic;
    throw std::invalid_argument("unknown training mode '" + std::string(text) + "'");
}

TrainAblation parse_train_ablation(std::string_view text) {
    for (auto a : {TrainAblation::full, TrainAblation::no_spdce, TrainAblation::no_jpdcf,
                   TrainAblation::no_color_loss, TrainAblation::no_texture_loss}) {
        if (text == to_string(a)) return a;
    }
    throw std::invalid_argument("unknown ablation '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Config

namespace {

const std::set<std::string>& train_keys() {
    static const std::set<std::string> keys{
        "learning_rate", "batch_size", "epochs",     "alpha",      "beta",
        "gamma",         "mode",       "ablation",   "max_steps",  "checkpoint_every",
        "patch_size",    "cosine_schedule", "clip_norm", "prompt_weights"};
    return keys;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw std::invalid_argument("'" + std::string(key) + "': expected true or false, got '" +
                                std::string(text) + "'");
}

std::optional<Architecture> ablation_architecture(TrainAblation a) {
    switch (a) {
        case TrainAblation::no_spdce: return Architecture::no_spdce;
        case TrainAblation::no_jpdcf: return Architecture::no_jpdcf;
        default: return std::nullopt;
    }
}

}  // namespace

void validate(const TrainConfig& cfg) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
    validate_config(cfg.network);
    validate_weights(cfg.loss_weights);
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) fail("learning_rate must be > 0");
    if (cfg.batch_size < 1) fail("batch_size must be >= 1");
    if (cfg.epochs < 1) fail("epochs must be >= 1");
    if (cfg.max_steps < 0) fail("max_steps must be >= 0");
    if (cfg.checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    if (cfg.patch_size < 8 || cfg.patch_size % 8 != 0) fail("patch_size must be a positive multiple of 8");
    if (!(cfg.clip_norm > 0.0)) fail("clip_norm must be > 0");
    const auto arch = ablation_architecture(cfg.ablation);
    if (arch && cfg.network.architecture != Architecture::full && cfg.network.architecture != *arch) {
        fail("architecture '" + to_string(cfg.network.architecture) + "' conflicts with ablation '" +
             to_string(cfg.ablation) + "'");
    }
}

TrainConfig train_config_from(const KeyValues& kv) {
    TrainConfig cfg;
    cfg.network = network_config_from(kv);
    auto get = [&](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto v = get("learning_rate")) cfg.learning_rate = parse_double("learning_rate", *v);
    if (auto v = get("batch_size")) cfg.batch_size = parse_int("batch_size", *v);
    if (auto v = get("epochs")) cfg.epochs = parse_int("epochs", *v);
    if (auto v = get("alpha")) cfg.loss_weights.alpha = parse_double("alpha", *v);
    if (auto v = get("beta")) cfg.loss_weights.beta = parse_double("beta", *v);
    if (auto v = get("gamma")) cfg.loss_weights.gamma = parse_double("gamma", *v);
    if (auto v = get("mode")) cfg.mode = parse_train_mode(*v);
    if (auto v = get("ablation")) cfg.ablation = parse_train_ablation(*v);
    if (auto v = get("max_steps")) cfg.max_steps = parse_int("max_steps", *v);
    if (auto v = get("checkpoint_every")) cfg.checkpoint_every = parse_int("checkpoint_every", *v);
    if (auto v = get("patch_size")) cfg.patch_size = parse_int("patch_size", *v);
    if (auto v = get("cosine_schedule")) cfg.cosine_schedule = parse_bool("cosine_schedule", *v);
    if (auto v = get("clip_norm")) cfg.clip_norm = parse_double("clip_norm", *v);
    if (auto v = get("prompt_weights")) cfg.prompt_weights = *v;
    return cfg;
}

TrainConfig parse_train_config(std::string_view text) {
    const KeyValues kv = parse_key_values(text);
    for (const auto& [k, v] : kv) {
        if (!is_network_key(k) && !train_keys().count(k)) {
            throw std::invalid_argument("unknown config key '" + k + "'");
        }
    }
    TrainConfig cfg = train_config_from(kv);
    validate(cfg);
    return cfg;
}

std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& cfg) {
    auto out = to_key_values(cfg.network);
    out.emplace_back("learning_rate", format_double(cfg.learning_rate));
    out.emplace_back("batch_size", std::to_string(cfg.batch_size));
    out.emplace_back("epochs", std::to_string(cfg.epochs));
    out.emplace_back("alpha", format_double(cfg.loss_weights.alpha));
    out.emplace_back("beta", format_double(cfg.loss_weights.beta));
    out.emplace_back("gamma", format_double(cfg.loss_weights.gamma));
    out.emplace_back("mode", to_string(cfg.mode));
    out.emplace_back("ablation", to_string(cfg.ablation));
    out.emplace_back("max_steps", std::to_string(cfg.max_steps));
    out.emplace_back("checkpoint_every", std::to_string(cfg.checkpoint_every));
    out.emplace_back("patch_size", std::to_string(cfg.patch_size));
    out.emplace_back("cosine_schedule", cfg.cosine_schedule ? "true" : "false");
    out.emplace_back("clip_norm", format_double(cfg.clip_norm));
    if (!cfg.prompt_weights.empty()) out.emplace_back("prompt_weights", cfg.prompt_weights);
    return out;
}

LossWeights effective_weights(const TrainConfig& cfg) {
    LossWeights w = cfg.loss_weights;
    if (cfg.ablation == TrainAblation::no_color_loss) w.gamma = 0.0;
    if (cfg.ablation == TrainAblation::no_texture_loss) w.beta = 0.0;
    return w;
}

NetworkConfig effective_network(const TrainConfig& cfg) {
    NetworkConfig n = cfg.network;
    if (auto arch = ablation_architecture(cfg.ablation)) n.architecture = *arch;
    return n;
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(const ParamList& params) {
    for (const auto& p : params) {
        m_.emplace_back(p.var.shape());
        v_.emplace_back(p.var.shape());
    }
}

void Adam::step(const ParamList& params, double lr) {
    if (params.size() != m_.size()) throw std::logic_error("adam: parameter list changed");
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        ag::Var var = params[k].var;
        if (!var.has_grad()) continue;
        const Tensor g = var.grad();
        Tensor& p = var.mutable_value();
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
        }
        round_to_float(m);
        round_to_float(v);
        round_to_float(p);
    }
}

void Adam::restore(std::int64_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) {
        throw std::invalid_argument("adam: moment count mismatch");
    }
    for (std::size_t k = 0; k < m.size(); ++k) {
        if (!m[k].same_shape(m_[k]) || !v[k].same_shape(v_[k])) {
            throw std::invalid_argument("adam: moment shape mismatch");
        }
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

double clip_gradients(const ParamList& params, double max_norm) {
    double ss = 0.0;
    for (const auto& p : params) {
        if (!p.var.has_grad()) continue;
        for (double g : p.var.node()->grad.data()) ss += g * g;
    }
    const double norm = std::sqrt(ss);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& p : params) {
            if (!p.var.has_grad()) continue;
            for (double& g : p.var.node()->grad.data()) g *= s;
        }
    }
    return norm;
}

std::string StepLog::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["intensity"] = loss.intensity;
    j["texture"] = loss.texture;
    j["color"] = loss.color;
    j["total"] = loss.total;
    j["lr"] = lr;
    j["wall_ms"] = wall_ms;
    return j.dump();
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

TrainConfig normalized(TrainConfig cfg) {
    validate(cfg);
    cfg.network = effective_network(cfg);
    return cfg;
}

constexpr std::uint64_t kDataStream = 0xda7a;
constexpr std::uint64_t kOrderStream = 0x0dde;

}  // namespace

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(normalized(cfg)),
      net_(std::make_unique<FusionNetwork>(cfg_.network)),
      opt_(net_->parameters()),
      encoder_(make_prompt_encoder(cfg_.network.prompt_dim, cfg_.prompt_weights, cfg_.network.seed)),
      step_lr_(cfg_.learning_rate),
      prompt_cache_(std::make_shared<std::map<std::string, PromptEmbedding>>()) {}

const PromptEmbedding& Trainer::embed(const std::string& text) const {
    auto it = prompt_cache_->find(text);
    if (it == prompt_cache_->end()) it = prompt_cache_->emplace(text, encoder_->encode(text)).first;
    return it->second;
}

FusionSample Trainer::prepare(const FusionSample& sample) const {
    sample.validate();
    if (cfg_.mode == TrainMode::degradation_aware) return sample;
    FusionSample s = sample;
    const PromptPair none = render_prompts(IrDegradation::none, ViDegradation::none);
    s.prompt_ir = none.ir;
    s.prompt_vi = none.vi;
    s.ir_reference = s.ir_degraded;
    s.vi_reference = s.vi_degraded;
    return s;
}

double Trainer::current_lr(std::int64_t total_steps) const {
    if (!cfg_.cosine_schedule || total_steps <= 0) return cfg_.learning_rate;
    const double frac = std::min(1.0, static_cast<double>(state_.step) / static_cast<double>(total_steps));
    return cfg_.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

LossReport Trainer::evaluate(const FusionSample& sample) const {
    const FusionSample s = prepare(sample);
    ag::Var out = net_->forward(s.ir_degraded, s.vi_degraded, embed(s.prompt_ir), embed(s.prompt_vi));
    return loss_terms(out, loss_targets(s), effective_weights(cfg_)).report();
}

LossReport Trainer::train_step(const std::vector<FusionSample>& batch) {
    return train_step(batch, step_lr_);
}

LossReport Trainer::train_step(const std::vector<FusionSample>& batch, double lr) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    if (!(lr >= 0.0)) throw std::invalid_argument("train_step: learning rate must be >= 0");
    const ParamList& params = net_->parameters();
    for (const auto& p : params) {
        ag::Var v = p.var;
        v.zero_grad();
    }
    const LossWeights w = effective_weights(cfg_);
    const double inv = 1.0 / static_cast<double>(batch.size());
    LossReport mean;
    for (const auto& raw : batch) {
        const FusionSample s = prepare(raw);
        ag::Var out = net_->forward(s.ir_degraded, s.vi_degraded, embed(s.prompt_ir), embed(s.prompt_vi));
        LossTerms terms = loss_terms(out, loss_targets(s), w);
        const LossReport r = terms.report();
        if (!std::isfinite(r.total)) {
            throw std::runtime_error("non-finite loss at step " + std::to_string(state_.step + 1) +
                                     ": " + to_json(r));
        }
        mean.intensity += r.intensity * inv;
        mean.texture += r.texture * inv;
        mean.color += r.color * inv;
        mean.total += r.total * inv;
        ag::backward(terms.total, inv);
    }
    clip_gradients(params, cfg_.clip_norm);
    opt_.step(params, lr);
    ++state_.step;
    state_.epoch_sum.intensity += mean.intensity;
    state_.epoch_sum.texture += mean.texture;
    state_.epoch_sum.color += mean.color;
    state_.epoch_sum.total += mean.total;
    ++state_.epoch_batches;
    return mean;
}

std::vector<StepLog> Trainer::fit(const DatasetManifest& manifest, const FitOptions& opts) {
    if (manifest.records.empty()) throw std::invalid_argument("fit: manifest has no records");
    std::vector<FusionSample> samples;
    samples.reserve(manifest.records.size());
    for (const auto& r : manifest.records) samples.push_back(load_sample(manifest, r));
    return fit(samples, opts);
}

std::vector<StepLog> Trainer::fit(const std::vector<FusionSample>& samples, const FitOptions& opts) {
    if (samples.empty()) throw std::invalid_argument("fit: no training samples");
    const std::uint64_t data_seed = mix_seed(cfg_.network.seed, kDataStream);
    const auto patch = static_cast<std::size_t>(cfg_.patch_size);

    auto epoch_pool = [&](std::int64_t epoch) {
        std::vector<FusionSample> pool;
        const std::uint64_t epoch_seed = mix_seed(data_seed, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = 0; i < samples.size(); ++i) {
            for (auto& p : crop_patches(samples[i], patch, mix_seed(epoch_seed, i))) pool.push_back(std::move(p));
        }
        return pool;
    };
    // The grid size does not depend on the jitter, so every epoch has the same pool size.
    std::size_t pool_size = 0;
    for (const auto& s : samples) {
        if (s.ir_degraded.height() < patch || s.ir_degraded.width() < patch) {
            throw std::invalid_argument("fit: sample smaller than patch_size " + std::to_string(patch));
        }
        pool_size += (s.ir_degraded.height() / patch) * (s.ir_degraded.width() / patch);
    }
    const BatchIterator batches(pool_size, static_cast<std::size_t>(cfg_.batch_size),
                                mix_seed(data_seed, kOrderStream));
    const std::int64_t total_steps =
        cfg_.max_steps > 0 ? cfg_.max_steps
                           : cfg_.epochs * static_cast<std::int64_t>(batches.batches_per_epoch());

    if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);
    const auto start = std::chrono::steady_clock::now();
    std::vector<StepLog> logs;
    auto done = [&] { return cfg_.max_steps > 0 && state_.step >= cfg_.max_steps; };

    while (state_.epoch < cfg_.epochs && !done()) {
        const std::vector<FusionSample> pool = epoch_pool(state_.epoch);
        const auto plan = batches.batches(static_cast<std::size_t>(state_.epoch));
        for (auto b = static_cast<std::size_t>(state_.batch_in_epoch); b < plan.size() && !done(); ++b) {
            std::vector<FusionSample> batch;
            batch.reserve(plan[b].size());
            for (auto idx : plan[b]) batch.push_back(pool[idx]);
            const double lr = current_lr(total_steps);
            step_lr_ = lr;
            StepLog log;
            log.loss = train_step(batch);
            ++state_.batch_in_epoch;
            log.step = state_.step;
            log.epoch = state_.epoch;
            log.lr = lr;
            log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            if (opts.on_step) opts.on_step(log);
            logs.push_back(log);
            if (!opts.out_dir.empty() && cfg_.checkpoint_every > 0 && state_.step % cfg_.checkpoint_every == 0) {
                save((fs::path(opts.out_dir) / ("step_" + std::to_string(state_.step) + ".ckpt")).string());
            }
        }
        if (static_cast<std::size_t>(state_.batch_in_epoch) >= plan.size()) {
            ++state_.epoch;
            state_.batch_in_epoch = 0;
            state_.epoch_sum = {};
            state_.epoch_batches = 0;
        }
    }
    step_lr_ = cfg_.learning_rate;
    if (!opts.out_dir.empty()) save((fs::path(opts.out_dir) / "final.ckpt").string());
    return logs;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

const char* const kStateKeys[] = {"state.step",        "state.epoch",       "state.batch_in_epoch",
                                  "state.epoch_batches", "state.sum_intensity", "state.sum_texture",
                                  "state.sum_color",   "state.sum_total",   "adam.t"};

}  // namespace

Checkpoint Trainer::checkpoint() const {
    Checkpoint ckpt;
    for (auto& [k, v] : to_key_values(cfg_)) ckpt.header[k] = v;
    ckpt.header["state.step"] = std::to_string(state_.step);
    ckpt.header["state.epoch"] = std::to_string(state_.epoch);
    ckpt.header["state.batch_in_epoch"] = std::to_string(state_.batch_in_epoch);
    ckpt.header["state.epoch_batches"] = std::to_string(state_.epoch_batches);
    ckpt.header["state.sum_intensity"] = format_double(state_.epoch_sum.intensity);
    ckpt.header["state.sum_texture"] = format_double(state_.epoch_sum.texture);
    ckpt.header["state.sum_color"] = format_double(state_.epoch_sum.color);
    ckpt.header["state.sum_total"] = format_double(state_.epoch_sum.total);
    ckpt.header["adam.t"] = std::to_string(opt_.steps());
    const ParamList& params = net_->parameters();
    for (const auto& p : params) ckpt.arrays.emplace_back(p.name, p.var.value());
    for (std::size_t k = 0; k < params.size(); ++k) {
        ckpt.arrays.emplace_back("adam.m." + params[k].name, opt_.first_moments()[k]);
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        ckpt.arrays.emplace_back("adam.v." + params[k].name, opt_.second_moments()[k]);
    }
    return ckpt;
}

void Trainer::save(const std::string& path) const { write_checkpoint(path, checkpoint()); }

Trainer Trainer::from_checkpoint(const Checkpoint& ckpt) {
    KeyValues cfg_kv;
    for (const auto& [k, v] : ckpt.header) {
        if (k.rfind("state.", 0) != 0 && k.rfind("adam.", 0) != 0) cfg_kv[k] = v;
    }
    auto need = [&](const char* key) -> const std::string& {
        auto it = ckpt.header.find(key);
        if (it == ckpt.header.end()) throw std::runtime_error(std::string("checkpoint: missing '") + key + "'");
        return it->second;
    };
    for (const char* key : kStateKeys) need(key);

    Trainer t(train_config_from(cfg_kv));
    assign_parameters(*t.net_, ckpt);

    const ParamList& params = t.net_->parameters();
    std::vector<Tensor> m, v;
    for (const char* prefix : {"adam.m.", "adam.v."}) {
        auto& dst = std::string(prefix) == "adam.m." ? m : v;
        for (const auto& p : params) {
            const Tensor* a = ckpt.find(prefix + p.name);
            if (!a) throw std::runtime_error("checkpoint: missing optimizer state for '" + p.name + "'");
            if (a->shape() != p.var.shape()) {
                throw std::runtime_error("checkpoint: optimizer state for '" + p.name + "' has shape " +
                                         shape_string(a->shape()));
            }
            dst.push_back(*a);
        }
    }
    t.opt_.restore(parse_int("adam.t", need("adam.t")), std::move(m), std::move(v));
    t.state_.step = parse_int("state.step", need("state.step"));
    t.state_.epoch = parse_int("state.epoch", need("state.epoch"));
    t.state_.batch_in_epoch = parse_int("state.batch_in_epoch", need("state.batch_in_epoch"));
    t.state_.epoch_batches = parse_int("state.epoch_batches", need("state.epoch_batches"));
    t.state_.epoch_sum.intensity = parse_double("state.sum_intensity", need("state.sum_intensity"));
    t.state_.epoch_sum.texture = parse_double("state.sum_texture", need("state.sum_texture"));
    t.state_.epoch_sum.color = parse_double("state.sum_color", need("state.sum_color"));
    t.state_.epoch_sum.total = parse_double("state.sum_total", need("state.sum_total"));
    return t;
}

}  // namespace degfuse
