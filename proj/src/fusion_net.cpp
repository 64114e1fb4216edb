// SPDX-License-Identifier: Apache-2.0
#include "degfuse/fusion_net.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace degfuse {

namespace {

constexpr int kLevels = 4;

std::string level_name(const char* prefix, int level) {
    return std::string(prefix) + "." + std::to_string(level);
}

}  // namespace

FusionNetwork::FusionNetwork(const NetworkConfig& cfg) : cfg_(validate_config(cfg)) {
    const Initializer init(cfg_.seed);
    const int c0 = cfg_.base_channels;
    shallow_ir_ = Conv2d(init, "shallow_ir", 1, c0, 3);
    shallow_vi_ = Conv2d(init, "shallow_vi", 3, c0, 3);

    for (int n = 0; n < kLevels; ++n) {
        const int c = cfg_.level_channels(n);
        if (cfg_.architecture == Architecture::no_spdce) {
            plain_ir_.emplace_back(init, level_name("plain_ir", n), c);
            plain_vi_.emplace_back(init, level_name("plain_vi", n), c);
        } else {
            spdce_ir_.emplace_back(init, level_name("spdce_ir", n), c, cfg_);
            spdce_vi_.emplace_back(init, level_name("spdce_vi", n), c, cfg_);
        }
        if (n + 1 < kLevels) {
            ds_ir_.emplace_back(init, level_name("ds_ir", n), c);
            ds_vi_.emplace_back(init, level_name("ds_vi", n), c);
            us_.emplace_back(init, level_name("us", n), 2 * c);
        }
        if (cfg_.architecture == Architecture::no_jpdcf) {
            plain_fu_.emplace_back(init, level_name("plain_fu", n), c, n + 1 < kLevels);
        } else {
            jpdcf_.emplace_back(init, level_name("jpdcf", n), c, cfg_);
        }
    }
    recon_.emplace_back(init, "recon.0", c0, c0, 3);
    recon_.emplace_back(init, "recon.1", c0, c0, 3);
    recon_.emplace_back(init, "recon.2", c0, 3, 3);

    shallow_ir_.collect(params_);
    shallow_vi_.collect(params_);
    for (int n = 0; n < kLevels; ++n) {
        if (spdce_ir_.empty()) {
            plain_ir_[n].collect(params_);
            plain_vi_[n].collect(params_);
        } else {
            spdce_ir_[n].collect(params_);
            spdce_vi_[n].collect(params_);
        }
    }
    for (const auto& d : ds_ir_) d.collect(params_);
    for (const auto& d : ds_vi_) d.collect(params_);
    for (const auto& j : jpdcf_) j.collect(params_);
    for (const auto& j : plain_fu_) j.collect(params_);
    for (const auto& u : us_) u.collect(params_);
    for (const auto& r : recon_) r.collect(params_);
}

ag::Var FusionNetwork::extract(int level, bool infrared, const ag::Var& f,
                               const ag::Var& prompt) const {
    if (spdce_ir_.empty()) return (infrared ? plain_ir_ : plain_vi_)[level](f);
    return (infrared ? spdce_ir_ : spdce_vi_)[level](f, prompt);
}

ag::Var FusionNetwork::fuse_level(int level, const std::optional<ag::Var>& prior,
                                  const ag::Var& f_ir, const ag::Var& f_vi, const ag::Var& p_ir,
                                  const ag::Var& p_vi) const {
    if (jpdcf_.empty()) return plain_fu_[level](prior, f_ir, f_vi);
    return jpdcf_[level](prior, f_ir, f_vi, p_ir, p_vi);
}

ag::Var FusionNetwork::forward(const ag::Var& ir, const ag::Var& vi_ycc, const ag::Var& p_ir,
                               const ag::Var& p_vi) const {
    const Shape& si = ir.shape();
    const Shape& sv = vi_ycc.shape();
    if (si.size() != 3 || si[0] != 1 || sv.size() != 3 || sv[0] != 3 || si[1] != sv[1] ||
        si[2] != sv[2]) {
        throw std::invalid_argument("fusion network: expected (1,H,W) and (3,H,W) inputs, got " +
                                    shape_string(si) + " and " + shape_string(sv));
    }
    if (si[1] < 8 || si[2] < 8 || si[1] % 8 || si[2] % 8) {
        throw std::invalid_argument("fusion network: height and width must be multiples of 8, got " +
                                    shape_string(si));
    }
    const Shape pshape{static_cast<std::size_t>(cfg_.prompt_dim)};
    if (p_ir.shape() != pshape || p_vi.shape() != pshape) {
        throw std::invalid_argument("fusion network: prompt embeddings must have dimension " +
                                    std::to_string(cfg_.prompt_dim));
    }

    std::vector<ag::Var> f_ir(kLevels), f_vi(kLevels);
    f_ir[0] = extract(0, true, shallow_ir_(ir), p_ir);
    f_vi[0] = extract(0, false, shallow_vi_(vi_ycc), p_vi);
    for (int n = 1; n < kLevels; ++n) {
        f_ir[n] = extract(n, true, ds_ir_[n - 1](f_ir[n - 1]), p_ir);
        f_vi[n] = extract(n, false, ds_vi_[n - 1](f_vi[n - 1]), p_vi);
    }

    ag::Var fused = fuse_level(kLevels - 1, std::nullopt, f_ir[kLevels - 1], f_vi[kLevels - 1], p_ir, p_vi);
    for (int m = kLevels - 2; m >= 0; --m) {
        fused = fuse_level(m, us_[m](fused), f_ir[m], f_vi[m], p_ir, p_vi);
    }

    ag::Var h = ag::leaky_relu(recon_[0](fused));
    h = ag::leaky_relu(recon_[1](h));
    return ag::sigmoid(recon_[2](h));
}

ag::Var FusionNetwork::forward(const ImageTensor& ir, const ImageTensor& vi_rgb,
                               const PromptEmbedding& p_ir, const PromptEmbedding& p_vi) const {
    if (ir.channels() != 1 || vi_rgb.channels() != 3 || !ir.same_size(vi_rgb)) {
        throw std::invalid_argument("fusion network: expected a 1-channel infrared and an RGB visible "
                                    "image of equal size");
    }
    require_network_dims(ir, "infrared input");
    ImageTensor vi_ycc = stack_ycbcr(rgb_to_ycbcr(vi_rgb));
    return forward(ag::constant(ir.tensor()), ag::constant(vi_ycc.tensor()), prompt_var(p_ir),
                   prompt_var(p_vi));
}

ImageTensor FusionNetwork::fuse(const ImageTensor& ir, const ImageTensor& vi_rgb,
                                const std::string& prompt_ir, const std::string& prompt_vi,
                                const PromptEncoder& encoder) const {
    if (encoder.dim() != cfg_.prompt_dim) {
        throw std::invalid_argument("prompt encoder dimension " + std::to_string(encoder.dim()) +
                                    " does not match network prompt_dim " +
                                    std::to_string(cfg_.prompt_dim));
    }
    ag::Var out = forward(ir, vi_rgb, encoder.encode(prompt_ir), encoder.encode(prompt_vi));
    return ImageTensor(out.value());
}

std::size_t count_parameters(const ParamList& params) { return count_scalars(params); }

std::size_t count_parameters(const FusionNetwork& net) { return count_scalars(net.parameters()); }

FusionNetwork ablation_variant(const FusionNetwork& net, Architecture mode) {
    NetworkConfig cfg = net.config();
    cfg.architecture = mode;
    return FusionNetwork(cfg);
}

ImageTensor fused_to_rgb(const ImageTensor& ycc) { return ycbcr_to_rgb(split_ycbcr(ycc)); }

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kMagic = "DEGFUSE-CHECKPOINT 1\n";

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks.
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

class Reader {
public:
    Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string line() {
        const auto nl = bytes_.find('\n', pos_);
        if (nl == std::string::npos || nl >= end_) fail("unterminated header line");
        std::string s = bytes_.substr(pos_, nl - pos_);
        pos_ = nl + 1;
        return s;
    }
    std::size_t remaining() const { return end_ - pos_; }
    [[noreturn]] static void fail(const std::string& what) {
        throw std::runtime_error("checkpoint: " + what);
    }

private:
    void need(std::size_t n) const {
        if (end_ - pos_ < n) fail("truncated file");
    }
    const std::string& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : arrays)
        if (n == name) return &t;
    return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::pair<std::string, std::string>> entries(ckpt.header.begin(), ckpt.header.end());
    const std::string header = format_key_values(entries);

    std::string out = kMagic;
    out += "header-bytes " + std::to_string(header.size()) + "\n";
    out += header;
    put_u32(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& [name, t] : ckpt.arrays) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_u64(out, d);
        for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    put_u32(out, crc_of(out.data(), out.size()));
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    const std::string magic = kMagic;
    if (bytes.compare(0, magic.size(), magic) != 0) Reader::fail("not a checkpoint file");
    if (bytes.size() < magic.size() + 4) Reader::fail("truncated file");
    const std::size_t body = bytes.size() - 4;
    Reader crc_reader(bytes, bytes.size());
    crc_reader.take(body);
    if (crc_reader.u32() != crc_of(bytes.data(), body)) Reader::fail("CRC mismatch (file is corrupted)");

    Reader r(bytes, body);
    r.take(magic.size());
    const std::string hb = r.line();
    const std::string prefix = "header-bytes ";
    if (hb.rfind(prefix, 0) != 0) Reader::fail("missing header size");
    const auto header_len = parse_u64("header-bytes", hb.substr(prefix.size()));
    if (header_len > r.remaining()) Reader::fail("truncated header");

    Checkpoint ckpt;
    ckpt.header = parse_key_values(r.take(header_len));
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.take(r.u32());
        const std::uint32_t rank = r.u32();
        if (rank > 8) Reader::fail("array '" + name + "' has implausible rank");
        Shape shape(rank);
        for (auto& d : shape) d = r.u64();
        const std::size_t n = shape_numel(shape);
        if (n > r.remaining() / 4) Reader::fail("array '" + name + "' exceeds file size");
        Tensor t(shape);
        for (double& v : t.data()) v = static_cast<double>(std::bit_cast<float>(r.u32()));
        ckpt.arrays.emplace_back(std::move(name), std::move(t));
    }
    if (r.remaining() != 0) Reader::fail("trailing bytes");
    return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const std::string bytes = encode_checkpoint(ckpt);
    const std::string tmp = path + ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return decode_checkpoint(ss.str());
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

Checkpoint network_checkpoint(const FusionNetwork& net) {
    Checkpoint ckpt;
    for (auto& [k, v] : to_key_values(net.config())) ckpt.header[k] = v;
    for (const auto& p : net.parameters()) ckpt.arrays.emplace_back(p.name, p.var.value());
    return ckpt;
}

void assign_parameters(const FusionNetwork& net, const Checkpoint& ckpt) {
    // Validate everything before touching any value.
    for (const auto& p : net.parameters()) {
        const Tensor* t = ckpt.find(p.name);
        if (!t) throw std::runtime_error("checkpoint: missing parameter '" + p.name + "'");
        if (t->shape() != p.var.shape()) {
            throw std::runtime_error("checkpoint: parameter '" + p.name + "' has shape " +
                                     shape_string(t->shape()) + ", network expects " +
                                     shape_string(p.var.shape()));
        }
    }
    for (const auto& p : net.parameters()) {
        ag::Var v = p.var;
        v.mutable_value() = *ckpt.find(p.name);
    }
}

FusionNetwork load_network(const Checkpoint& ckpt) {
    FusionNetwork net(network_config_from(ckpt.header));
    assign_parameters(net, ckpt);
    return net;
}

}  // namespace degfuse
