// SPDX-License-Identifier: Apache-2.0
#include "degfuse/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "degfuse/data_io.hpp"
#include "degfuse/degrade.hpp"
#include "degfuse/fusion_net.hpp"
#include "degfuse/layers.hpp"
#include "degfuse/metrics.hpp"
#include "degfuse/prompt_encoder.hpp"
#include "degfuse/trainer.hpp"

namespace fs = std::filesystem;

namespace degfuse {

namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

// Image files of a directory keyed by file stem, or a single file.
std::map<std::string, fs::path> image_inputs(const std::string& path) {
    std::map<std::string, fs::path> out;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path)) {
            if (!e.is_regular_file()) continue;
            std::string ext = e.path().extension().string();
            for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") {
                out[e.path().stem().string()] = e.path();
            }
        }
        if (out.empty()) throw std::runtime_error("no images in '" + path + "'");
    } else if (fs::is_regular_file(path)) {
        out[fs::path(path).stem().string()] = path;
    } else {
        throw std::runtime_error("no such file or directory: '" + path + "'");
    }
    return out;
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
    std::string ir_dir, vi_dir, ir_ref_dir, vi_ref_dir, out;
    std::size_t min_size = kDefaultPatchSize;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
    auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::string>(s); };
    ManifestBuild b = build_manifest(a.ir_dir, a.vi_dir, opt(a.ir_ref_dir), opt(a.vi_ref_dir), a.min_size);
    for (const auto& u : b.unmatched) err << "warning: no counterpart for '" << u << "', skipped\n";
    write_manifest(a.out, b.manifest);
    out << "wrote " << b.manifest.records.size() << " records to " << a.out << "\n";
    return 0;
}

struct DegradeArgs {
    std::string manifest, out, out_manifest;
    std::string ir_mode = "none", vi_mode = "none";
    double severity = 0.5;
    std::uint64_t seed = 0;
};

int cmd_degrade(const DegradeArgs& a, std::ostream& out) {
    DegradeSpec base;
    base.ir_mode = parse_ir_degradation(a.ir_mode);
    base.vi_mode = parse_vi_degradation(a.vi_mode);
    base.severity = a.severity;
    base.seed = a.seed;
    validate(base);
    const DatasetManifest in = read_manifest(a.manifest);

    const fs::path out_dir(a.out);
    const std::string manifest_path =
        a.out_manifest.empty() ? (out_dir / "manifest.jsonl").string() : a.out_manifest;
    DatasetManifest result;
    for (std::size_t i = 0; i < in.records.size(); ++i) {
        const DatasetRecord& r = in.records[i];
        FusionSample clean = load_sample(in, r);
        DegradeSpec spec = base;
        spec.seed = mix_seed(a.seed, i);
        FusionSample s = make_sample(clean.ir_reference, clean.vi_reference, spec);

        DatasetRecord d;
        d.name = r.name;
        d.ir_path = (out_dir / "ir" / (r.name + ".png")).string();
        d.vi_path = (out_dir / "vi" / (r.name + ".png")).string();
        d.ir_ref_path = in.resolve(r.ir_ref_path.value_or(r.ir_path));
        d.vi_ref_path = in.resolve(r.vi_ref_path.value_or(r.vi_path));
        save_image(d.ir_path, s.ir_degraded);
        save_image(d.vi_path, s.vi_degraded);
        d.prompt_ir = s.prompt_ir;
        d.prompt_vi = s.prompt_vi;
        d.spec = spec;
        result.records.push_back(std::move(d));
    }
    write_manifest(manifest_path, result);
    out << "degraded " << result.records.size() << " pairs into " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string manifest, config, out, resume, ablation;
    std::optional<std::uint64_t> seed;
    std::optional<int> max_steps;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    // Everything that can be rejected is checked before the output directory exists.
    std::optional<Trainer> trainer;
    if (!a.resume.empty()) {
        trainer.emplace(Trainer::from_checkpoint(read_checkpoint(a.resume)));
        if (a.max_steps) trainer->mutable_config().max_steps = *a.max_steps;
    } else {
        TrainConfig cfg = a.config.empty() ? TrainConfig{} : parse_train_config(read_text(a.config));
        if (a.seed) cfg.network.seed = *a.seed;
        if (!a.ablation.empty()) cfg.ablation = parse_train_ablation(a.ablation);
        if (a.max_steps) cfg.max_steps = *a.max_steps;
        validate(cfg);
        trainer.emplace(cfg);
    }
    const DatasetManifest manifest = read_manifest(a.manifest);
    std::vector<FusionSample> samples;
    for (const auto& r : manifest.records) samples.push_back(load_sample(manifest, r));

    const fs::path out_dir(a.out);
    fs::create_directories(out_dir);
    write_text(out_dir / "config.txt", format_key_values(to_key_values(trainer->config())));
    std::ofstream log(out_dir / "log.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot write training log in '" + a.out + "'");

    Trainer::FitOptions opts;
    opts.out_dir = a.out;
    opts.on_step = [&](const StepLog& s) { log << s.to_json() << '\n' << std::flush; };
    const auto logs = trainer->fit(samples, opts);
    out << "trained " << logs.size() << " steps";
    if (!logs.empty()) out << ", final loss " << format_double(logs.back().loss.total);
    out << "\ncheckpoint: " << (out_dir / "final.ckpt").string() << "\n";
    return 0;
}

struct FuseArgs {
    std::string checkpoint, ir, vi, manifest, out, prompt_ir, prompt_vi, ir_mode, vi_mode;
    bool prompt_auto = false;
};

int cmd_fuse(const FuseArgs& a, std::ostream& out) {
    const Checkpoint ckpt = read_checkpoint(a.checkpoint);
    const FusionNetwork net = load_network(ckpt);
    KeyValues cfg_kv;
    for (const auto& [k, v] : ckpt.header)
        if (k.find('.') == std::string::npos) cfg_kv[k] = v;
    const TrainConfig tc = train_config_from(cfg_kv);
    const auto encoder = make_prompt_encoder(net.config().prompt_dim, tc.prompt_weights, net.config().seed);

    struct Job {
        std::string name, ir, vi, prompt_ir, prompt_vi;
    };
    std::vector<Job> jobs;
    const bool explicit_prompts = !a.prompt_ir.empty() || !a.prompt_vi.empty();
    const bool template_prompts = !a.ir_mode.empty() || !a.vi_mode.empty();
    if (a.prompt_auto + explicit_prompts + template_prompts > 1) {
        throw std::invalid_argument("choose one of --prompt-auto, --prompt-ir/--prompt-vi, --ir-mode/--vi-mode");
    }
    if (a.prompt_auto) {
        if (a.manifest.empty()) throw std::invalid_argument("--prompt-auto needs --manifest");
        const DatasetManifest m = read_manifest(a.manifest);
        for (const auto& r : m.records) {
            const FusionSample s = load_sample(m, r);
            jobs.push_back({r.name, m.resolve(r.ir_path), m.resolve(r.vi_path), s.prompt_ir, s.prompt_vi});
        }
    } else {
        if (a.ir.empty() || a.vi.empty()) throw std::invalid_argument("fuse needs --ir and --vi (or --manifest with --prompt-auto)");
        PromptPair prompts = render_prompts(a.ir_mode.empty() ? IrDegradation::none : parse_ir_degradation(a.ir_mode),
                                            a.vi_mode.empty() ? ViDegradation::none : parse_vi_degradation(a.vi_mode));
        if (!a.prompt_ir.empty()) prompts.ir = a.prompt_ir;
        if (!a.prompt_vi.empty()) prompts.vi = a.prompt_vi;
        const auto irs = image_inputs(a.ir);
        const auto vis = image_inputs(a.vi);
        if (irs.size() == 1 && vis.size() == 1) {
            jobs.push_back({irs.begin()->first, irs.begin()->second.string(), vis.begin()->second.string(),
                            prompts.ir, prompts.vi});
        } else {
            for (const auto& [name, path] : irs) {
                auto it = vis.find(name);
                if (it == vis.end()) throw std::runtime_error("no visible image for '" + name + "'");
                jobs.push_back({name, path.string(), it->second.string(), prompts.ir, prompts.vi});
            }
        }
    }

    fs::create_directories(a.out);
    for (const auto& j : jobs) {
        const ImageTensor ir = luminance(load_image(j.ir));
        const ImageTensor vi = load_image(j.vi);
        if (vi.channels() != 3) throw std::runtime_error("'" + j.vi + "' is not an RGB image");
        const ImageTensor fused = net.fuse(ir, vi, j.prompt_ir, j.prompt_vi, *encoder);
        save_image((fs::path(a.out) / (j.name + ".png")).string(), fused_to_rgb(fused));
    }
    out << "fused " << jobs.size() << " pairs into " << a.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string fused, ir, vi, out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const auto fused = image_inputs(a.fused);
    const auto irs = image_inputs(a.ir);
    const auto vis = image_inputs(a.vi);
    MetricReport report;
    for (const auto& [name, path] : fused) {
        auto ir = irs.find(name);
        auto vi = vis.find(name);
        if (ir == irs.end() || vi == vis.end()) {
            throw std::runtime_error("no source pair for fused image '" + name + "'");
        }
        report.rows.push_back({name, evaluate_metrics(load_image(path.string()), load_image(ir->second.string()),
                                                      load_image(vi->second.string()))});
    }
    fs::path base(a.out);
    if (base.extension() == ".csv" || base.extension() == ".json") base.replace_extension();
    write_text(base.string() + ".csv", report.to_csv());
    write_text(base.string() + ".json", report.to_json());
    out << "evaluated " << report.rows.size() << " images: " << base.string() << ".csv\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Prompt-guided infrared/visible image fusion", "degfuse"};
    app.require_subcommand(1);

    PrepareArgs prep;
    auto* p = app.add_subcommand("prepare", "Build a dataset manifest from paired directories");
    p->add_option("--ir-dir", prep.ir_dir, "Infrared images")->required();
    p->add_option("--vi-dir", prep.vi_dir, "Visible images")->required();
    p->add_option("--ir-ref-dir", prep.ir_ref_dir, "Clean infrared references");
    p->add_option("--vi-ref-dir", prep.vi_ref_dir, "Clean visible references");
    p->add_option("--min-size", prep.min_size, "Reject pairs smaller than this")->capture_default_str();
    p->add_option("--out", prep.out, "Manifest path (JSON lines)")->required();

    DegradeArgs deg;
    auto* d = app.add_subcommand("degrade", "Synthesize degraded inputs for a manifest");
    d->add_option("--manifest", deg.manifest, "Input manifest")->required();
    d->add_option("--out", deg.out, "Output directory")->required();
    d->add_option("--out-manifest", deg.out_manifest, "Output manifest (default <out>/manifest.jsonl)");
    d->add_option("--ir-mode", deg.ir_mode, "none | low_contrast | noise")->capture_default_str();
    d->add_option("--vi-mode", deg.vi_mode, "none | low_light | overexposure")->capture_default_str();
    d->add_option("--severity", deg.severity, "Degradation strength in [0,1]")->capture_default_str();
    d->add_option("--seed", deg.seed, "Noise seed")->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a fusion network");
    t->add_option("--manifest", tr.manifest, "Training manifest")->required();
    t->add_option("--config", tr.config, "key = value training config");
    t->add_option("--out", tr.out, "Output directory for checkpoints and log")->required();
    t->add_option("--seed", tr.seed, "Override the config seed");
    t->add_option("--ablation", tr.ablation, "full | no_spdce | no_jpdcf | no_color_loss | no_texture_loss");
    t->add_option("--max-steps", tr.max_steps, "Stop after this many steps");
    t->add_option("--resume", tr.resume, "Continue from a training checkpoint");

    FuseArgs fu;
    auto* f = app.add_subcommand("fuse", "Fuse image pairs with a trained network");
    f->add_option("--checkpoint", fu.checkpoint, "Checkpoint file")->required();
    f->add_option("--ir", fu.ir, "Infrared image or directory");
    f->add_option("--vi", fu.vi, "Visible image or directory");
    f->add_option("--manifest", fu.manifest, "Manifest for --prompt-auto");
    f->add_flag("--prompt-auto", fu.prompt_auto, "Take inputs and prompts from --manifest");
    f->add_option("--prompt-ir", fu.prompt_ir, "Infrared prompt text");
    f->add_option("--prompt-vi", fu.prompt_vi, "Visible prompt text");
    f->add_option("--ir-mode", fu.ir_mode, "Render the infrared prompt from a degradation");
    f->add_option("--vi-mode", fu.vi_mode, "Render the visible prompt from a degradation");
    f->add_option("--out", fu.out, "Output directory")->required();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Compute fusion metrics");
    e->add_option("--fused", ev.fused, "Fused images")->required();
    e->add_option("--ir", ev.ir, "Infrared sources")->required();
    e->add_option("--vi", ev.vi, "Visible sources")->required();
    e->add_option("--out", ev.out, "Report path; .csv and .json are written")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        return app.exit(ex, out, err);
    }

    try {
        if (p->parsed()) return cmd_prepare(prep, out, err);
        if (d->parsed()) return cmd_degrade(deg, out);
        if (t->parsed()) return cmd_train(tr, out);
        if (f->parsed()) return cmd_fuse(fu, out);
        if (e->parsed()) return cmd_eval(ev, out);
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace degfuse
