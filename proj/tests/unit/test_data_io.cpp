// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "degfuse/data_io.hpp"
#include "degfuse/prompt_encoder.hpp"
#include "helpers.hpp"

using namespace degfuse;
using namespace testing;
namespace fs = std::filesystem;

namespace {

FusionSample sample_of(std::size_t h, std::size_t w, std::uint64_t seed) {
    return {random_image(1, h, w, seed), random_image(3, h, w, seed + 1), random_image(1, h, w, seed + 2),
            random_image(3, h, w, seed + 3), "p_ir", "p_vi"};
}

void write_pair(const fs::path& dir, const std::string& name, std::size_t size, std::uint64_t seed) {
    save_image((dir / "ir" / name).string(), random_image(1, size, size, seed));
    save_image((dir / "vi" / name).string(), random_image(3, size, size, seed + 1));
}

}  // namespace

TEST_CASE("image round trip") {
    auto dir = scratch_dir("data_io_roundtrip");
    auto rgb = quantize8(random_image(3, 7, 5, 1));
    save_image((dir / "rgb.png").string(), rgb);
    auto back = load_image((dir / "rgb.png").string());
    REQUIRE(back.channels() == 3);
    CHECK(back.height() == 7);
    CHECK(back.width() == 5);
    CHECK(back.tensor().values() == rgb.tensor().values());

    save_image((dir / "gray.png").string(), image_from(1, 2, {0.0, 1.0}));
    auto g = load_image((dir / "gray.png").string());
    CHECK(g.channels() == 1);
    CHECK(g.at(0, 0, 0) == 0.0);
    CHECK(g.at(0, 0, 1) == 1.0);

    CHECK_THROWS_AS(load_image((dir / "missing.png").string()), std::runtime_error);
    std::ofstream((dir / "junk.png").string()) << "not an image";
    CHECK_THROWS_AS(load_image((dir / "junk.png").string()), std::runtime_error);
}

TEST_CASE("quantization snaps to byte levels") {
    auto q = quantize8(image_from(1, 3, {0.0, 0.5, 1.0}));
    CHECK(q.at(0, 0, 0) == 0.0);
    CHECK(q.at(0, 0, 1) == 128.0 / 255.0);
    CHECK(q.at(0, 0, 2) == 1.0);
}

TEST_CASE("patch cropping") {
    auto s = sample_of(96, 96, 1);
    auto one = crop_patches(s, 96, 3);
    REQUIRE(one.size() == 1);
    CHECK(one[0].vi_degraded.tensor().values() == s.vi_degraded.tensor().values());
    CHECK(one[0].prompt_ir == "p_ir");

    auto big = sample_of(192, 192, 2);
    auto four = crop_patches(big, 96, 3);
    REQUIRE(four.size() == 4);
    // The grid tiles the whole image, so the patches are the four quadrants.
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            const auto& p = four[i * 2 + j];
            CHECK(p.ir_degraded.tensor().values() == crop(big.ir_degraded, i * 96, j * 96, 96, 96).tensor().values());
            CHECK(p.vi_reference.tensor().values() ==
                  crop(big.vi_reference, i * 96, j * 96, 96, 96).tensor().values());
        }

    // With slack the offset is seeded; equal seeds give equal windows.
    auto odd = sample_of(100, 110, 4);
    auto a = crop_patches(odd, 96, 5), b = crop_patches(odd, 96, 5);
    REQUIRE(a.size() == 1);
    CHECK(a[0].ir_degraded.tensor().values() == b[0].ir_degraded.tensor().values());
    CHECK(a[0].ir_degraded.height() == 96);

    CHECK_THROWS_AS(crop_patches(sample_of(64, 64, 1), 96, 1), std::invalid_argument);
}

TEST_CASE("batch iterator") {
    BatchIterator it(33, 16, 7);
    auto b = it.batches(0);
    REQUIRE(b.size() == 3);
    CHECK(b[0].size() == 16);
    CHECK(b[1].size() == 16);
    CHECK(b[2].size() == 1);
    CHECK(it.batches_per_epoch() == 3);

    std::set<std::size_t> seen;
    for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
    CHECK(seen.size() == 33);
    CHECK(*seen.rbegin() == 32);

    CHECK(it.order(0) != it.order(1));
    CHECK(BatchIterator(33, 16, 7).order(4) == it.order(4));
    CHECK(BatchIterator(33, 16, 8).order(0) != it.order(0));

    CHECK_THROWS_AS(BatchIterator(0, 4, 1), std::invalid_argument);
    CHECK_THROWS_AS(BatchIterator(4, 0, 1), std::invalid_argument);
}

TEST_CASE("manifest build, write and read") {
    auto dir = scratch_dir("data_io_manifest");
    write_pair(dir, "a.png", 96, 1);
    write_pair(dir, "b.png", 100, 3);
    save_image((dir / "ir" / "lonely.png").string(), random_image(1, 96, 96, 9));

    auto built = build_manifest((dir / "ir").string(), (dir / "vi").string());
    REQUIRE(built.manifest.records.size() == 2);
    REQUIRE(built.unmatched.size() == 1);
    CHECK(fs::path(built.unmatched[0]).filename() == "lonely.png");
    CHECK(built.manifest.records[0].name == "a");

    const auto path = (dir / "out" / "manifest.jsonl").string();
    write_manifest(path, built.manifest);
    auto read = read_manifest(path);
    REQUIRE(read.records.size() == 2);
    // Files outside the manifest directory keep absolute paths.
    CHECK(fs::path(read.records[0].ir_path).is_absolute());

    auto s = load_sample(read, read.records[1]);
    CHECK(s.ir_degraded.channels() == 1);
    CHECK(s.vi_degraded.channels() == 3);
    CHECK(s.ir_degraded.height() == 100);
    CHECK(s.ir_reference.tensor().values() == s.ir_degraded.tensor().values());
    const auto none = render_prompts(IrDegradation::none, ViDegradation::none);
    CHECK(s.prompt_ir == none.ir);
    CHECK(s.prompt_vi == none.vi);

    // A manifest next to its images stores relative paths.
    const auto local = (dir / "local.jsonl").string();
    write_manifest(local, built.manifest);
    auto rel = read_manifest(local);
    CHECK(rel.records[0].ir_path == "ir/a.png");
    CHECK(fs::exists(rel.resolve(rel.records[0].ir_path)));
}

TEST_CASE("manifest errors") {
    auto dir = scratch_dir("data_io_errors");
    fs::create_directories(dir / "ir");
    fs::create_directories(dir / "vi");
    CHECK_THROWS_AS(build_manifest((dir / "ir").string(), (dir / "vi").string()), std::runtime_error);
    CHECK_THROWS_AS(build_manifest((dir / "nope").string(), (dir / "vi").string()), std::runtime_error);

    write_pair(dir, "small.png", 64, 1);
    CHECK_THROWS_AS(build_manifest((dir / "ir").string(), (dir / "vi").string()), std::runtime_error);
    CHECK_NOTHROW(build_manifest((dir / "ir").string(), (dir / "vi").string(), std::nullopt, std::nullopt, 64));

    CHECK_THROWS_AS(read_manifest((dir / "absent.jsonl").string()), std::runtime_error);
    std::ofstream((dir / "bad.jsonl").string()) << "{\"ir\": \"x.png\"\n";
    CHECK_THROWS_AS(read_manifest((dir / "bad.jsonl").string()), std::runtime_error);
    std::ofstream((dir / "dangling.jsonl").string()) << R"({"ir": "x.png", "vi": "y.png"})" << '\n';
    CHECK_THROWS_AS(read_manifest((dir / "dangling.jsonl").string()), std::runtime_error);
}

TEST_CASE("record json round trip") {
    DatasetRecord r;
    r.name = "n";
    r.ir_path = "ir/n.png";
    r.vi_path = "vi/n.png";
    r.vi_ref_path = "ref/n.png";
    r.prompt_ir = "a";
    r.prompt_vi = "b";
    r.spec = DegradeSpec{IrDegradation::low_contrast, ViDegradation::overexposure, 0.25, 9};
    auto back = parse_manifest_record(manifest_record_json(r));
    CHECK(back.name == r.name);
    CHECK(back.ir_path == r.ir_path);
    CHECK(!back.ir_ref_path);
    CHECK(back.vi_ref_path == r.vi_ref_path);
    CHECK(back.prompt_vi == "b");
    CHECK(back.spec == r.spec);
    CHECK(manifest_record_json(back) == manifest_record_json(r));
}
