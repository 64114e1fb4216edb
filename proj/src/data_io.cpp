// SPDX-License-Identifier: Apache-2.0
#include "degfuse/data_io.hpp"

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "degfuse/imgproc.hpp"
#include "degfuse/layers.hpp"
#include "degfuse/prompt_encoder.hpp"

namespace fs = std::filesystem;

namespace degfuse {

ImageTensor load_image(const std::string& path) {
    if (!fs::exists(path)) throw std::runtime_error("image not found: '" + path + "'");
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw std::runtime_error("cannot decode image '" + path + "'");
    if (m.depth() != CV_8U) throw std::runtime_error("'" + path + "': only 8-bit images are supported");

    const int ch = m.channels();
    if (ch != 1 && ch != 3 && ch != 4) {
        throw std::runtime_error("'" + path + "': unsupported channel count " + std::to_string(ch));
    }
    const std::size_t h = static_cast<std::size_t>(m.rows), w = static_cast<std::size_t>(m.cols);
    const std::size_t c = ch == 1 ? 1 : 3;
    const std::size_t stride = static_cast<std::size_t>(ch);
    Tensor t(Shape{c, h, w});
    for (std::size_t y = 0; y < h; ++y) {
        const unsigned char* row = m.ptr<unsigned char>(static_cast<int>(y));
        for (std::size_t x = 0; x < w; ++x) {
            if (c == 1) {
                t.at(0, y, x) = row[x] / 255.0;
            } else {
                // OpenCV stores BGR(A); alpha is ignored.
                t.at(0, y, x) = row[stride * x + 2] / 255.0;
                t.at(1, y, x) = row[stride * x + 1] / 255.0;
                t.at(2, y, x) = row[stride * x + 0] / 255.0;
            }
        }
    }
    return ImageTensor(std::move(t));
}

namespace {

unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void save_image(const std::string& path, const ImageTensor& img) {
    const std::size_t c = img.channels(), h = img.height(), w = img.width();
    if (c != 1 && c != 3) throw std::invalid_argument("save_image: need 1 or 3 channels");
    cv::Mat m(static_cast<int>(h), static_cast<int>(w), c == 1 ? CV_8UC1 : CV_8UC3);
    for (std::size_t y = 0; y < h; ++y) {
        unsigned char* row = m.ptr<unsigned char>(static_cast<int>(y));
        for (std::size_t x = 0; x < w; ++x) {
            if (c == 1) {
                row[x] = to_byte(img.at(0, y, x));
            } else {
                row[3 * x + 2] = to_byte(img.at(0, y, x));
                row[3 * x + 1] = to_byte(img.at(1, y, x));
                row[3 * x + 0] = to_byte(img.at(2, y, x));
            }
        }
    }
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write image '" + path + "'");
}

ImageTensor quantize8(const ImageTensor& img) {
    Tensor t = img.tensor();
    for (double& v : t.data()) v = to_byte(v) / 255.0;
    return ImageTensor(std::move(t), img.role());
}

ImageTensor crop(const ImageTensor& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    if (y + h > img.height() || x + w > img.width()) {
        throw std::invalid_argument("crop: window exceeds image bounds");
    }
    Tensor t(Shape{img.channels(), h, w});
    for (std::size_t c = 0; c < img.channels(); ++c)
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t k = 0; k < w; ++k) t.at(c, r, k) = img.at(c, y + r, x + k);
    return ImageTensor(std::move(t), img.role());
}

// ---------------------------------------------------------------------------
// Manifests

std::string DatasetManifest::resolve(const std::string& path) const {
    fs::path p(path);
    if (p.is_absolute() || root.empty()) return p.string();
    return (fs::path(root) / p).lexically_normal().string();
}

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::map<std::string, fs::path> list_images(const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: '" + dir + "'");
    std::map<std::string, fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_image_file(e.path())) files[e.path().filename().string()] = e.path();
    }
    return files;
}

void check_size(const std::string& path, std::size_t min_size) {
    ImageTensor img = load_image(path);
    if (img.height() < min_size || img.width() < min_size) {
        throw std::runtime_error("'" + path + "' is " + std::to_string(img.height()) + "x" +
                                 std::to_string(img.width()) + ", smaller than the " +
                                 std::to_string(min_size) + " pixel minimum");
    }
}

nlohmann::ordered_json spec_json(const DegradeSpec& s) {
    nlohmann::ordered_json j;
    j["ir_mode"] = to_string(s.ir_mode);
    j["vi_mode"] = to_string(s.vi_mode);
    j["severity"] = s.severity;
    j["seed"] = s.seed;
    return j;
}

DegradeSpec spec_from_json(const nlohmann::json& j) {
    DegradeSpec s;
    s.ir_mode = parse_ir_degradation(j.at("ir_mode").get<std::string>());
    s.vi_mode = parse_vi_degradation(j.at("vi_mode").get<std::string>());
    s.severity = j.at("severity").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    validate(s);
    return s;
}

// Relative when the file lives under `base`, absolute otherwise.
std::string relative_to(const std::string& path, const fs::path& base) {
    fs::path p = fs::absolute(path).lexically_normal();
    fs::path rel = p.lexically_relative(fs::absolute(base).lexically_normal());
    if (rel.empty() || *rel.begin() == "..") return p.string();
    return rel.string();
}

}  // namespace

ManifestBuild build_manifest(const std::string& ir_dir, const std::string& vi_dir,
                             const std::optional<std::string>& ir_ref_dir,
                             const std::optional<std::string>& vi_ref_dir, std::size_t min_size) {
    const auto ir = list_images(ir_dir);
    const auto vi = list_images(vi_dir);
    std::optional<std::map<std::string, fs::path>> ir_ref, vi_ref;
    if (ir_ref_dir) ir_ref = list_images(*ir_ref_dir);
    if (vi_ref_dir) vi_ref = list_images(*vi_ref_dir);

    ManifestBuild out;
    for (const auto& [name, path] : ir) {
        auto it = vi.find(name);
        if (it == vi.end()) {
            out.unmatched.push_back(path.string());
            continue;
        }
        DatasetRecord r;
        r.name = fs::path(name).stem().string();
        r.ir_path = path.string();
        r.vi_path = it->second.string();
        if (ir_ref) {
            auto ref = ir_ref->find(name);
            if (ref == ir_ref->end()) throw std::runtime_error("no infrared reference for '" + name + "'");
            r.ir_ref_path = ref->second.string();
        }
        if (vi_ref) {
            auto ref = vi_ref->find(name);
            if (ref == vi_ref->end()) throw std::runtime_error("no visible reference for '" + name + "'");
            r.vi_ref_path = ref->second.string();
        }
        check_size(r.ir_path, min_size);
        check_size(r.vi_path, min_size);
        const PromptPair prompts = render_prompts(IrDegradation::none, ViDegradation::none);
        r.prompt_ir = prompts.ir;
        r.prompt_vi = prompts.vi;
        out.manifest.records.push_back(std::move(r));
    }
    for (const auto& [name, path] : vi)
        if (!ir.count(name)) out.unmatched.push_back(path.string());
    if (out.manifest.records.empty()) {
        throw std::runtime_error("no matching image pairs in '" + ir_dir + "' and '" + vi_dir + "'");
    }
    return out;
}

std::string manifest_record_json(const DatasetRecord& r) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    j["ir"] = r.ir_path;
    j["vi"] = r.vi_path;
    if (r.ir_ref_path) j["ir_ref"] = *r.ir_ref_path;
    if (r.vi_ref_path) j["vi_ref"] = *r.vi_ref_path;
    j["prompt_ir"] = r.prompt_ir;
    j["prompt_vi"] = r.prompt_vi;
    if (r.spec) j["spec"] = spec_json(*r.spec);
    return j.dump();
}

DatasetRecord parse_manifest_record(const std::string& line) {
    const nlohmann::json j = nlohmann::json::parse(line);
    DatasetRecord r;
    r.ir_path = j.at("ir").get<std::string>();
    r.vi_path = j.at("vi").get<std::string>();
    r.name = j.contains("name") ? j["name"].get<std::string>() : fs::path(r.ir_path).stem().string();
    if (j.contains("ir_ref")) r.ir_ref_path = j["ir_ref"].get<std::string>();
    if (j.contains("vi_ref")) r.vi_ref_path = j["vi_ref"].get<std::string>();
    if (j.contains("prompt_ir")) r.prompt_ir = j["prompt_ir"].get<std::string>();
    if (j.contains("prompt_vi")) r.prompt_vi = j["prompt_vi"].get<std::string>();
    if (j.contains("spec")) r.spec = spec_from_json(j["spec"]);
    return r;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
    const fs::path base = fs::absolute(path).parent_path();
    fs::create_directories(base);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
    for (DatasetRecord r : manifest.records) {
        r.ir_path = relative_to(manifest.resolve(r.ir_path), base);
        r.vi_path = relative_to(manifest.resolve(r.vi_path), base);
        if (r.ir_ref_path) r.ir_ref_path = relative_to(manifest.resolve(*r.ir_ref_path), base);
        if (r.vi_ref_path) r.vi_ref_path = relative_to(manifest.resolve(*r.vi_ref_path), base);
        out << manifest_record_json(r) << '\n';
    }
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
    DatasetManifest m;
    m.root = fs::absolute(path).parent_path().string();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            m.records.push_back(parse_manifest_record(line));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (m.records.empty()) throw std::runtime_error("manifest '" + path + "' has no records");
    for (const auto& r : m.records) {
        for (const std::string* p : {&r.ir_path, &r.vi_path}) {
            if (!fs::exists(m.resolve(*p))) {
                throw std::runtime_error(path + ": referenced file '" + *p + "' does not exist");
            }
        }
    }
    return m;
}

FusionSample load_sample(const DatasetManifest& manifest, const DatasetRecord& record) {
    auto load_ir = [&](const std::string& p) { return luminance(load_image(manifest.resolve(p))); };
    auto load_vi = [&](const std::string& p) {
        ImageTensor img = load_image(manifest.resolve(p));
        if (img.channels() == 3) return img;
        // Gray visible image: replicate to RGB.
        std::vector<double> v;
        for (int k = 0; k < 3; ++k) v.insert(v.end(), img.data().begin(), img.data().end());
        return ImageTensor(Tensor(Shape{3, img.height(), img.width()}, std::move(v)));
    };
    FusionSample s;
    s.ir_degraded = load_ir(record.ir_path);
    s.vi_degraded = load_vi(record.vi_path);
    s.ir_reference = record.ir_ref_path ? load_ir(*record.ir_ref_path) : s.ir_degraded;
    s.vi_reference = record.vi_ref_path ? load_vi(*record.vi_ref_path) : s.vi_degraded;
    const PromptPair none = render_prompts(IrDegradation::none, ViDegradation::none);
    s.prompt_ir = record.prompt_ir.empty() ? none.ir : record.prompt_ir;
    s.prompt_vi = record.prompt_vi.empty() ? none.vi : record.prompt_vi;
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("record '" + record.name + "': " + e.what());
    }
    return s;
}

std::vector<FusionSample> crop_patches(const FusionSample& sample, std::size_t size, std::uint64_t seed) {
    sample.validate();
    if (size == 0) throw std::invalid_argument("crop_patches: patch size must be positive");
    const std::size_t h = sample.ir_degraded.height(), w = sample.ir_degraded.width();
    if (h < size || w < size) {
        throw std::invalid_argument("crop_patches: " + std::to_string(h) + "x" + std::to_string(w) +
                                    " image is smaller than the " + std::to_string(size) + " patch");
    }
    const std::size_t gy = h / size, gx = w / size;
    std::mt19937_64 rng(seed);
    const std::size_t oy = std::uniform_int_distribution<std::size_t>(0, h - gy * size)(rng);
    const std::size_t ox = std::uniform_int_distribution<std::size_t>(0, w - gx * size)(rng);

    std::vector<FusionSample> out;
    out.reserve(gy * gx);
    for (std::size_t i = 0; i < gy; ++i)
        for (std::size_t j = 0; j < gx; ++j) {
            const std::size_t y = oy + i * size, x = ox + j * size;
            FusionSample p;
            p.ir_degraded = crop(sample.ir_degraded, y, x, size, size);
            p.vi_degraded = crop(sample.vi_degraded, y, x, size, size);
            p.ir_reference = crop(sample.ir_reference, y, x, size, size);
            p.vi_reference = crop(sample.vi_reference, y, x, size, size);
            p.prompt_ir = sample.prompt_ir;
            p.prompt_vi = sample.prompt_vi;
            out.push_back(std::move(p));
        }
    return out;
}

BatchIterator::BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed)
    : count_(count), batch_size_(batch_size), seed_(seed) {
    if (count == 0) throw std::invalid_argument("batch iterator: no samples");
    if (batch_size == 0) throw std::invalid_argument("batch iterator: batch size must be positive");
}

std::vector<std::size_t> BatchIterator::order(std::size_t epoch) const {
    std::vector<std::size_t> idx(count_);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(seed_, epoch));
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle implementation.
    for (std::size_t i = count_; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

std::vector<std::vector<std::size_t>> BatchIterator::batches(std::size_t epoch) const {
    const auto idx = order(epoch);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < count_; b += batch_size_) {
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(count_, b + batch_size_)));
    }
    return out;
}

}  // namespace degfuse
