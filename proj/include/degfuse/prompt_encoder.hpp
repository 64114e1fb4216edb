// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "degfuse/core_types.hpp"

namespace degfuse {

struct PromptTemplate {
    std::string task_tag = "IVIF";
    IrDegradation ir = IrDegradation::none;
    ViDegradation vi = ViDegradation::none;
};

/// Human-readable phrase for a degradation ("no degradation" for none).
std::string degradation_phrase(IrDegradation mode);
std::string degradation_phrase(ViDegradation mode);

/// "IVIF. The infrared image suffers from {ir}. The visible image suffers from {vi}."
std::string render_prompt(const PromptTemplate& t);

/// Per-modality prompts for the two extractor branches: each is the task tag
/// plus the sentence of render_prompt() describing that modality.
struct PromptPair {
    std::string ir;
    std::string vi;
};
PromptPair render_prompts(IrDegradation ir, ViDegradation vi);

/// Lower-cased alphanumeric tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Frozen text encoder. Implementations hold no trainable state and are
/// safe to call concurrently.
class PromptEncoder {
public:
    virtual ~PromptEncoder() = default;
    virtual PromptEmbedding encode(std::string_view text) const = 0;
    virtual int dim() const = 0;
    virtual std::string backend() const = 0;
};

/// Dependency-free default: every token hashes to a fixed pseudorandom
/// Gaussian direction; a prompt is the L2-normalized sum over its tokens.
class HashingPromptEncoder final : public PromptEncoder {
public:
    explicit HashingPromptEncoder(int dim, std::uint64_t seed = 0);

    PromptEmbedding encode(std::string_view text) const override;
    int dim() const override { return dim_; }
    std::string backend() const override { return "hashing-stub"; }

private:
    int dim_;
    std::uint64_t seed_;
};

/// Adapter for exported pretrained token embeddings: a text file with one
/// "token v1 ... vD" row per line. Prompts embed to the L2-normalized mean
/// of their known tokens.
class EmbeddingTableEncoder final : public PromptEncoder {
public:
    static EmbeddingTableEncoder load(const std::string& path, int expected_dim);

    PromptEmbedding encode(std::string_view text) const override;
    int dim() const override { return dim_; }
    std::string backend() const override { return "embedding-table"; }
    std::size_t vocabulary_size() const { return table_.size(); }

private:
    EmbeddingTableEncoder(int dim, std::unordered_map<std::string, std::vector<double>> table)
        : dim_(dim), table_(std::move(table)) {}

    int dim_;
    std::unordered_map<std::string, std::vector<double>> table_;
};

/// An empty weights path selects the hashing stub.
std::unique_ptr<PromptEncoder> make_prompt_encoder(int dim, const std::string& weights_path = {},
                                                   std::uint64_t seed = 0);

double cosine_similarity(const PromptEmbedding& a, const PromptEmbedding& b);

}  // namespace degfuse
