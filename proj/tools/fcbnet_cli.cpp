#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include "fcbnet/analysis.hpp"
#include "fcbnet/config.hpp"
#include "fcbnet/data.hpp"
#include "fcbnet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fcbnet;

namespace {

struct ArchFlags {
    std::string variant = "base";
    int channels = 3;
    float alpha = 0.07f;
    double ratio = 2.0;
    int c_min = 64;
    int kernel = 3;
    int preferred_groups = 32;
    int fpn_dim = 128;
    int refine_depth = 2;
    float dropout = 0.1f;
    int classes = 2;
    bool no_fcb = false;
};

void add_arch_flags(CLI::App* cmd, ArchFlags& f) {
    cmd->add_option("--variant", f.variant, "backbone variant: tiny|small|base|large");
    cmd->add_option("--channels", f.channels, "input bands (3=RGB, 4=+NIR, 5=+RE)");
    cmd->add_option("--alpha", f.alpha, "FCB residual scale init");
    cmd->add_option("--ratio", f.ratio, "FCB bottleneck ratio");
    cmd->add_option("--c-min", f.c_min, "FCB bottleneck floor");
    cmd->add_option("--kernel", f.kernel, "FCB depthwise kernel size");
    cmd->add_option("--preferred-groups", f.preferred_groups, "GroupNorm preferred group count");
    cmd->add_option("--fpn-dim", f.fpn_dim, "decoder feature width");
    cmd->add_option("--refine-depth", f.refine_depth, "extra smoothing blocks at stride 4");
    cmd->add_option("--dropout", f.dropout, "head dropout rate");
    cmd->add_option("--classes", f.classes, "output classes");
    cmd->add_flag("--no-fcb", f.no_fcb, "wire stage outputs directly to the decoder");
}

FcbNetConfig make_config(const ArchFlags& f) {
    FcbNetConfig c;
    c.backbone.variant = f.variant;
    c.backbone.in_channels = f.channels;
    c.fcb.alpha_init = f.alpha;
    c.fcb.bottleneck_ratio = f.ratio;
    c.fcb.c_min = f.c_min;
    c.fcb.dw_kernel = f.kernel;
    c.fcb.preferred_groups = f.preferred_groups;
    c.decoder.feature_dim = f.fpn_dim;
    c.decoder.refine_depth = f.refine_depth;
    c.decoder.dropout_rate = f.dropout;
    c.num_classes = f.classes;
    c.use_fcb = !f.no_fcb;
    return c;
}

std::pair<int, int> parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw std::invalid_argument("--input expects HxW, e.g. 512x512");
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

std::vector<double> parse_csv_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    if (out.empty()) throw std::invalid_argument("empty list: " + s);
    return out;
}

json report_json(const ParamReport& pr, const FlopReport& fr) {
    json rows = json::array();
    for (size_t i = 0; i < pr.by_submodule.size(); ++i) {
        const auto& row = pr.by_submodule[i];
        int64_t flops = 0;
        for (const auto& [name, f] : fr.by_submodule)
            if (name == row.name) flops = f;
        rows.push_back({{"name", row.name},
                        {"params_total", row.total},
                        {"params_trainable", row.trainable},
                        {"flops", flops}});
    }
    return {{"submodules", rows},
            {"params_total", pr.total},
            {"params_trainable", pr.trainable},
            {"trainable_reduction", pr.reduction()},
            {"flops_total", fr.total_flops},
            {"flop_convention", to_string(fr.convention)}};
}

void print_report(const ParamReport& pr, const FlopReport& fr) {
    std::printf("%-24s %14s %14s %14s\n", "submodule", "params", "trainable", "flops");
    for (const auto& row : pr.by_submodule) {
        int64_t flops = 0;
        for (const auto& [name, f] : fr.by_submodule)
            if (name == row.name) flops = f;
        std::printf("%-24s %14lld %14lld %14lld\n", row.name.c_str(), (long long)row.total,
                    (long long)row.trainable, (long long)flops);
    }
    std::printf("%-24s %14lld %14lld %14lld\n", "total", (long long)pr.total,
                (long long)pr.trainable, (long long)fr.total_flops);
    std::printf("trainable: %.3f M of %.3f M (reduction %.1f%%)\n", pr.trainable / 1e6,
                pr.total / 1e6, 100.0 * pr.reduction());
    std::printf("conv cost: %.3f GFLOPs (%s)\n", fr.total_flops / 1e9,
                to_string(fr.convention).c_str());
}

int cmd_analyze(const ArchFlags& flags, const std::string& input, const std::string& convention,
                bool as_json) {
    const auto [h, w] = parse_size(input);
    FcbNetConfig config = make_config(flags);
    const FlopConvention conv = convention == "conv_mac_plus_elementwise"
                                    ? FlopConvention::conv_mac_plus_elementwise
                                    : FlopConvention::conv_mac_only;
    if (convention != "conv_mac_only" && convention != "conv_mac_plus_elementwise")
        throw std::invalid_argument("unknown convention: " + convention);
    ParamReport pr = count_params(config);
    FlopReport fr = count_flops(config, h, w, conv);
    if (as_json)
        std::cout << report_json(pr, fr).dump(2) << "\n";
    else
        print_report(pr, fr);
    return 0;
}

int cmd_sweep(const ArchFlags& flags, const std::string& axis, const std::string& input,
              bool as_json) {
    const auto eq = axis.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("--axis expects name=v1,v2,... (e.g. ratio=1,2,3)");
    const std::string name = axis.substr(0, eq);
    const std::string list = axis.substr(eq + 1);
    const auto [h, w] = parse_size(input);

    std::vector<std::string> labels;
    std::vector<FcbNetConfig> configs;
    if (name == "variant") {
        std::stringstream ss(list);
        std::string item;
        while (std::getline(ss, item, ',')) {
            ArchFlags f = flags;
            f.variant = item;
            labels.push_back(item);
            configs.push_back(make_config(f));
        }
    } else {
        for (double v : parse_csv_doubles(list)) {
            ArchFlags f = flags;
            if (name == "alpha")
                f.alpha = float(v);
            else if (name == "ratio")
                f.ratio = v;
            else if (name == "kernel")
                f.kernel = int(v);
            else if (name == "fpn_dim")
                f.fpn_dim = int(v);
            else if (name == "refine_depth")
                f.refine_depth = int(v);
            else
                throw std::invalid_argument(
                    "unknown sweep axis: " + name +
                    " (axes: alpha, ratio, kernel, fpn_dim, refine_depth, variant)");
            std::ostringstream lbl;
            lbl << v;
            labels.push_back(lbl.str());
            configs.push_back(make_config(f));
        }
    }

    json rows = json::array();
    if (!as_json)
        std::printf("%-12s %-10s %14s %16s %12s\n", "axis", "value", "total_params",
                    "trainable_params", "gflops");
    for (size_t i = 0; i < configs.size(); ++i) {
        ParamReport pr = count_params(configs[i]);
        FlopReport fr = count_flops(configs[i], h, w);
        if (as_json)
            rows.push_back({{"axis", name},
                            {"value", labels[i]},
                            {"params_total", pr.total},
                            {"params_trainable", pr.trainable},
                            {"flops", fr.total_flops}});
        else
            std::printf("%-12s %-10s %14.3f %16.3f %12.3f\n", name.c_str(), labels[i].c_str(),
                        pr.total / 1e6, pr.trainable / 1e6, fr.total_flops / 1e9);
    }
    if (as_json) std::cout << json{{"rows", rows}}.dump(2) << "\n";
    return 0;
}

struct PrepareFlags {
    std::vector<std::string> tiles;
    std::string mask;
    int patch = 512;
    int stride = 0;
    std::string out;
    std::string weed_labels;
    std::string ratios = "0.8,0.1,0.1";
    uint64_t seed = 0;
    std::string channel_set;
};

int cmd_prepare(const PrepareFlags& f) {
    // stack all tile files channel-wise into one raster
    Raster tile;
    for (const auto& path : f.tiles) {
        Raster r = load_raster(path);
        if (tile.channels == 0) {
            tile = std::move(r);
        } else {
            if (r.height != tile.height || r.width != tile.width)
                throw std::runtime_error("tile dimension mismatch: " + path);
            tile.data.insert(tile.data.end(), r.data.begin(), r.data.end());
            tile.channels += r.channels;
        }
    }
    ChannelSet cs;
    if (!f.channel_set.empty()) {
        cs = channel_set_by_name(f.channel_set);
        if (channel_count(cs) != tile.channels)
            throw std::runtime_error("tiles supply " + std::to_string(tile.channels) +
                                     " bands, channel set needs " +
                                     std::to_string(channel_count(cs)));
    } else {
        switch (tile.channels) {
            case 3: cs = ChannelSet::rgb; break;
            case 4: cs = ChannelSet::rgb_nir; break;
            case 5: cs = ChannelSet::rgb_nir_re; break;
            default:
                throw std::runtime_error("cannot infer channel set from " +
                                         std::to_string(tile.channels) + " bands");
        }
    }

    LabelMask mask = load_mask(f.mask);
    if (mask.height != tile.height || mask.width != tile.width)
        throw std::runtime_error("mask dimensions do not match the tile");
    if (!f.weed_labels.empty()) {
        std::set<int32_t> weed;
        for (double v : parse_csv_doubles(f.weed_labels)) weed.insert(int32_t(v));
        mask = binarize_mask(mask, weed);
    }

    const int stride = f.stride > 0 ? f.stride : f.patch;
    const auto offsets = patch_offsets(tile.height, tile.width, f.patch, stride);

    const auto ratio_list = parse_csv_doubles(f.ratios);
    if (ratio_list.size() != 3) throw std::invalid_argument("--ratios expects three values");

    std::vector<SampleRecord> records(offsets.size());
    DatasetManifest manifest =
        split_manifest(std::move(records), {ratio_list[0], ratio_list[1], ratio_list[2]}, f.seed);

    // the manifest order is the shuffled one; offsets must follow it
    Rng rng(f.seed);
    const std::vector<size_t> order = rng.permutation(offsets.size());

    for (const std::string& sub : {"train", "val", "test"}) {
        fs::create_directories(fs::path(f.out) / sub / "images");
        fs::create_directories(fs::path(f.out) / sub / "masks");
    }
    for (size_t i = 0; i < order.size(); ++i) {
        const auto [oy, ox] = offsets[order[i]];
        SampleRecord& rec = manifest.records[i];
        const std::string tag = "r" + std::to_string(oy) + "_c" + std::to_string(ox);
        const fs::path base = fs::path(f.out) / rec.split;
        rec.band_paths =
            save_raster_bands(crop(tile, oy, ox, f.patch, f.patch), (base / "images" / tag).string());
        rec.mask_path = (base / "masks" / (tag + ".png")).string();
        save_mask(rec.mask_path, crop(mask, oy, ox, f.patch, f.patch), false);
    }

    manifest.channel_set = cs;
    manifest.stats = compute_stats(manifest);
    const std::string mpath = (fs::path(f.out) / "manifest.jsonl").string();
    save_manifest(mpath, manifest);
    std::printf("%zu patches (%d train / %d val / %d test), manifest %s\n", manifest.records.size(),
                int(manifest.split("train").size()), int(manifest.split("val").size()),
                int(manifest.split("test").size()), mpath.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& manifest_override,
              const std::string& out_override, bool verbose) {
    RunConfig rc = load_run_config(config_path);
    if (!manifest_override.empty()) rc.manifest = manifest_override;
    if (!out_override.empty()) rc.out_dir = out_override;
    if (rc.manifest.empty()) throw std::invalid_argument("config has no data.manifest");

    DatasetManifest manifest = load_manifest(rc.manifest);
    if (channel_count(manifest.channel_set) != rc.model.backbone.in_channels)
        throw std::runtime_error("model.backbone.in_channels does not match the manifest bands");

    ManifestDataset train_ds(manifest, "train");
    std::unique_ptr<ManifestDataset> val_ds;
    if (!manifest.split("val").empty()) val_ds = std::make_unique<ManifestDataset>(manifest, "val");

    FcbNet model = build_fcbnet(rc.model, rc.train.seed);
    FitOptions opts;
    opts.checkpoint_dir = rc.out_dir;
    opts.verbose = verbose;
    TrainHistory history = fit(model, train_ds, val_ds.get(), rc.train, opts);

    fs::create_directories(rc.out_dir);
    std::ofstream hist(fs::path(rc.out_dir) / "history.jsonl");
    for (const auto& e : history.epochs)
        hist << json{{"epoch", e.epoch},
                     {"loss", e.mean_loss},
                     {"lr", e.last_lr},
                     {"val_miou", e.val_miou}}
                    .dump()
             << "\n";
    std::printf("trained %zu epochs; best val mIoU %.4f; checkpoints in %s\n",
                history.epochs.size(), history.best_val_miou, rc.out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& split, bool as_json) {
    RunConfig rc = load_run_config(config_path);
    if (rc.manifest.empty()) throw std::invalid_argument("config has no data.manifest");
    DatasetManifest manifest = load_manifest(rc.manifest);
    ManifestDataset ds(manifest, split);
    FcbNet model = build_fcbnet(rc.model, rc.train.seed);
    load_checkpoint(checkpoint, model, nullptr);
    EvalResult r = evaluate(model, ds);
    if (as_json) {
        std::cout << json{{"split", split},
                          {"iou", r.iou.per_class},
                          {"miou", r.iou.miou},
                          {"mean_loss", r.mean_loss},
                          {"pixels", r.pixels},
                          {"latency_mean_s", r.latency.mean_s},
                          {"latency_median_s", r.latency.median_s},
                          {"latency_p95_s", r.latency.p95_s}}
                         .dump(2)
                  << "\n";
    } else {
        for (size_t c = 0; c < r.iou.per_class.size(); ++c)
            std::printf("class %zu IoU %.4f%s\n", c, r.iou.per_class[c],
                        r.iou.absent[c] ? " (absent)" : "");
        std::printf("mIoU %.4f  loss %.4f  latency %.4fs/img (median %.4f, p95 %.4f)\n", r.iou.miou,
                    r.mean_loss, r.latency.mean_s, r.latency.median_s, r.latency.p95_s);
    }
    return 0;
}

int cmd_predict(const std::string& config_path, const std::string& checkpoint,
                const std::vector<std::string>& images, const std::string& out, bool labels) {
    RunConfig rc = load_run_config(config_path);
    FcbNet model = build_fcbnet(rc.model, rc.train.seed);
    load_checkpoint(checkpoint, model, nullptr);

    ChannelStats stats;
    ChannelSet cs;
    if (!rc.manifest.empty()) {
        DatasetManifest manifest = load_manifest(rc.manifest);
        stats = manifest.stats;
        cs = manifest.channel_set;
    } else {
        // no statistics available; feed [0,1] values through unchanged
        const int n = rc.model.backbone.in_channels;
        cs = n == 3 ? ChannelSet::rgb : (n == 4 ? ChannelSet::rgb_nir : ChannelSet::rgb_nir_re);
        stats.mean.assign(n, 0.0f);
        stats.stddev.assign(n, 1.0f);
    }

    SampleRecord rec;
    rec.band_paths = images;
    Tensor chw = stack_and_normalize(rec, cs, stats);
    Tensor input({1, chw.dim(0), chw.dim(1), chw.dim(2)});
    std::copy(chw.data(), chw.data() + chw.numel(), input.data());

    Tensor logits = model.forward(input);
    std::vector<int32_t> pred = kern::argmax_channels(logits);
    LabelMask mask;
    mask.height = logits.dim(2);
    mask.width = logits.dim(3);
    mask.labels = std::move(pred);
    save_mask(out, mask, !labels);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* dev = std::getenv("FCBNET_DEVICE")) {
        if (std::string(dev) != "cpu") {
            std::fprintf(stderr, "error: FCBNET_DEVICE=%s unsupported (cpu only)\n", dev);
            return 1;
        }
    }
    if (const char* threads = std::getenv("FCBNET_THREADS")) {
        const int n = std::atoi(threads);
        if (n > 0) omp_set_num_threads(n);
    }

    CLI::App app{"FCBNet: frozen-backbone semantic segmentation toolkit"};
    app.require_subcommand(1);

    ArchFlags arch;
    std::string input = "512x512", convention = "conv_mac_only", axis;
    bool as_json = false;

    CLI::App* analyze = app.add_subcommand("analyze", "parameter and FLOP accounting");
    add_arch_flags(analyze, arch);
    analyze->add_option("--input", input, "input size HxW");
    analyze->add_option("--convention", convention,
                        "conv_mac_only | conv_mac_plus_elementwise");
    analyze->add_flag("--json", as_json, "machine-readable output");

    CLI::App* data = app.add_subcommand("data", "dataset tooling");
    PrepareFlags prep;
    CLI::App* prepare = data->add_subcommand("prepare", "patch tiles into a training set");
    prepare->add_option("--tile", prep.tiles, "band image file(s), channels concatenated in order")
        ->required();
    prepare->add_option("--mask", prep.mask, "label raster")->required();
    prepare->add_option("--patch", prep.patch, "patch size");
    prepare->add_option("--stride", prep.stride, "patch stride (default: patch size)");
    prepare->add_option("--out", prep.out, "output directory")->required();
    prepare->add_option("--weed-labels", prep.weed_labels, "labels merged into class 1");
    prepare->add_option("--ratios", prep.ratios, "train,val,test fractions");
    prepare->add_option("--seed", prep.seed, "split shuffle seed");
    prepare->add_option("--channel-set", prep.channel_set, "rgb | rgb-nir | rgb-nir-re");

    std::string config_path, manifest_override, out_override, checkpoint, split = "test", out_path;
    std::vector<std::string> images;
    bool verbose = false, label_mask = false;

    CLI::App* train = app.add_subcommand("train", "optimize the trainable subset");
    train->add_option("--config", config_path, "run config (JSON)")->required();
    train->add_option("--manifest", manifest_override, "override data.manifest");
    train->add_option("--out", out_override, "override data.out_dir");
    train->add_flag("--verbose", verbose, "per-epoch progress lines");

    CLI::App* eval = app.add_subcommand("eval", "metrics on a manifest split");
    eval->add_option("--config", config_path, "run config (JSON)")->required();
    eval->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    eval->add_option("--split", split, "train | val | test");
    eval->add_flag("--json", as_json, "machine-readable output");

    CLI::App* predict = app.add_subcommand("predict", "segment one image");
    predict->add_option("--config", config_path, "run config (JSON)")->required();
    predict->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    predict->add_option("--image", images, "band image file(s)")->required();
    predict->add_option("--out", out_path, "output mask path")->required();
    predict->add_flag("--labels", label_mask, "write raw label indices instead of 0/255");

    CLI::App* sweep = app.add_subcommand("sweep", "ablation table over one axis");
    ArchFlags sweep_arch;
    add_arch_flags(sweep, sweep_arch);
    sweep->add_option("--axis", axis, "name=v1,v2,... (alpha, ratio, kernel, fpn_dim, refine_depth, variant)")
        ->required();
    sweep->add_option("--input", input, "input size HxW");
    sweep->add_flag("--json", as_json, "machine-readable output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(analyze)) return cmd_analyze(arch, input, convention, as_json);
        if (app.got_subcommand(data)) {
            if (data->got_subcommand(prepare)) return cmd_prepare(prep);
            std::fprintf(stderr, "error: data needs a subcommand (prepare)\n");
            return 1;
        }
        if (app.got_subcommand(train))
            return cmd_train(config_path, manifest_override, out_override, verbose);
        if (app.got_subcommand(eval)) return cmd_eval(config_path, checkpoint, split, as_json);
        if (app.got_subcommand(predict))
            return cmd_predict(config_path, checkpoint, images, out_path, label_mask);
        if (app.got_subcommand(sweep)) return cmd_sweep(sweep_arch, axis, input, as_json);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
