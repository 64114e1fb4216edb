// SPDX-License-Identifier: Apache-2.0
#include "degfuse/prompt_encoder.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "degfuse/layers.hpp"

namespace degfuse {

std::string degradation_phrase(IrDegradation mode) {
    switch (mode) {
        case IrDegradation::none: return "no degradation";
        case IrDegradation::low_contrast: return "low contrast";
        case IrDegradation::noise: return "noise";
    }
    return "no degradation";
}

std::string degradation_phrase(ViDegradation mode) {
    switch (mode) {
        case ViDegradation::none: return "no degradation";
        case ViDegradation::low_light: return "low light";
        case ViDegradation::overexposure: return "overexposure";
    }
    return "no degradation";
}

std::string render_prompt(const PromptTemplate& t) {
    return t.task_tag + ". The infrared image suffers from " + degradation_phrase(t.ir) +
           ". The visible image suffers from " + degradation_phrase(t.vi) + ".";
}

PromptPair render_prompts(IrDegradation ir, ViDegradation vi) {
    return {"IVIF. The infrared image suffers from " + degradation_phrase(ir) + ".",
            "IVIF. The visible image suffers from " + degradation_phrase(vi) + "."};
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

namespace {

std::vector<std::string> require_tokens(std::string_view text) {
    if (text.empty()) throw std::invalid_argument("prompt encoder: empty text");
    auto tokens = tokenize(text);
    if (tokens.empty()) throw std::invalid_argument("prompt encoder: text has no tokens");
    return tokens;
}

void normalize(std::vector<double>& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    const double n = std::sqrt(ss);
    if (!(n > 0.0)) throw std::invalid_argument("prompt encoder: zero embedding");
    for (double& x : v) x /= n;
}

}  // namespace

HashingPromptEncoder::HashingPromptEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 1) throw std::invalid_argument("prompt encoder: dimension must be positive");
}

PromptEmbedding HashingPromptEncoder::encode(std::string_view text) const {
    auto tokens = require_tokens(text);
    // Token multiset: order-independent, counts matter.
    std::map<std::string, int> counts;
    for (auto& t : tokens) ++counts[t];

    std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
    for (const auto& [token, count] : counts) {
        std::normal_distribution<double> unit(0.0, 1.0);
        std::mt19937_64 rng(mix_seed(seed_ ^ 0x5eedc0de5eedc0deULL, hash_string(token)));
        for (double& a : acc) a += count * unit(rng);
    }
    normalize(acc);
    return {std::move(acc), std::string(text)};
}

EmbeddingTableEncoder EmbeddingTableEncoder::load(const std::string& path, int expected_dim) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding table '" + path + "'");
    std::unordered_map<std::string, std::vector<double>> table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string token;
        if (!(ss >> token)) continue;
        std::vector<double> v;
        double x;
        while (ss >> x) v.push_back(x);
        if (v.size() != static_cast<std::size_t>(expected_dim)) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(expected_dim) + " values, got " +
                                     std::to_string(v.size()));
        }
        table[token] = std::move(v);
    }
    if (table.empty()) throw std::runtime_error("embedding table '" + path + "' is empty");
    return EmbeddingTableEncoder(expected_dim, std::move(table));
}

PromptEmbedding EmbeddingTableEncoder::encode(std::string_view text) const {
    auto tokens = require_tokens(text);
    std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
    std::size_t known = 0;
    for (const auto& t : tokens) {
        auto it = table_.find(t);
        if (it == table_.end()) continue;
        ++known;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += it->second[i];
    }
    if (known == 0) {
        throw std::invalid_argument("embedding table: no known tokens in '" + std::string(text) + "'");
    }
    for (double& a : acc) a /= static_cast<double>(known);
    normalize(acc);
    return {std::move(acc), std::string(text)};
}

std::unique_ptr<PromptEncoder> make_prompt_encoder(int dim, const std::string& weights_path,
                                                   std::uint64_t seed) {
    if (weights_path.empty()) return std::make_unique<HashingPromptEncoder>(dim, seed);
    return std::make_unique<EmbeddingTableEncoder>(EmbeddingTableEncoder::load(weights_path, dim));
}

double cosine_similarity(const PromptEmbedding& a, const PromptEmbedding& b) {
    if (a.vector.size() != b.vector.size()) throw std::invalid_argument("cosine: size mismatch");
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.vector.size(); ++i) {
        ab += a.vector[i] * b.vector[i];
        aa += a.vector[i] * a.vector[i];
        bb += b.vector[i] * b.vector[i];
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace degfuse
