// Command-line front end: training, evaluation, prediction, dataset
// preparation, augmentation previews, feature maps, ablation and parameter
// reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cracknet/cracknet.hpp"

namespace fs = std::filesystem;
using namespace cracknet;

namespace {

struct DataOptions {
    std::string root;
    std::size_t synthetic = 0;  // per class
    std::size_t synth_size = 256;
};

void add_data_options(CLI::App* app, DataOptions& d) {
    auto* root = app->add_option("--data", d.root, "dataset root holding cracked/ and non-cracked/");
    auto* syn = app->add_option("--synthetic", d.synthetic, "use a generated corpus with N images per class")
                    ->check(CLI::PositiveNumber);
    root->excludes(syn);
    app->add_option("--synth-size", d.synth_size, "side of generated images before resizing")
        ->capture_default_str()
        ->check(CLI::Range(16, 4096));
}

std::vector<Sample> load_samples(const DataOptions& d, std::uint64_t seed, std::size_t size, std::size_t workers) {
    if (!d.root.empty()) {
        LoadOptions opt;
        opt.size = size;
        opt.workers = workers;
        opt.log = &std::cerr;
        auto ds = load_dataset(d.root, opt);
        std::cerr << "loaded " << ds.samples.size() << " images (" << ds.index.cracked.size() << " cracked, "
                  << ds.index.non_cracked.size() << " non-cracked, " << ds.skipped << " skipped)\n";
        return std::move(ds.samples);
    }
    if (d.synthetic == 0) throw ConfigError("need --data <root> or --synthetic <n>");
    auto samples = synth_crack_corpus(d.synthetic, seed, d.synth_size);
    std::vector<Sample> out(samples.size());
    parallel_for(samples.size(), workers, [&](std::size_t i) {
        out[i] = Sample{prepare_image(samples[i].image, size), samples[i].label, samples[i].source_id};
    });
    return out;
}

struct TrainOptions {
    std::string variant = "duccnet";
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double lr = 0.0005;
    double val_frac = 0.1;
    bool no_augment = false;
    std::size_t patience = 10;
    double target_acc = 0.0;
    std::string out = "runs/train";
    std::size_t input_size = 64;
    std::size_t filters = 32;
    bool no_timing = false;
};

void add_train_options(CLI::App* app, TrainOptions& t, bool with_variant) {
    if (with_variant) app->add_option("--variant", t.variant, "model1|model2|scnn|model3|model4|duccnet")->capture_default_str();
    app->add_option("--epochs", t.epochs, "maximum epochs")->capture_default_str();
    app->add_option("--batch-size", t.batch_size, "mini-batch size")->capture_default_str();
    app->add_option("--lr", t.lr, "ADAM learning rate")->capture_default_str();
    app->add_option("--val-frac", t.val_frac, "held-out fraction per class")->capture_default_str();
    app->add_flag("--no-augment", t.no_augment, "train on originals only");
    app->add_option("--patience", t.patience, "early-stop patience on val loss, 0 disables")->capture_default_str();
    app->add_option("--target-acc", t.target_acc, "stop once val accuracy reaches this percentage");
    app->add_option("--out", t.out, "output directory")->capture_default_str();
    app->add_option("--input-size", t.input_size, "network input side")->capture_default_str();
    app->add_option("--filters", t.filters, "conv filters per layer")->capture_default_str();
    app->add_flag("--no-timing", t.no_timing, "write 0 in the seconds column of history.csv");
}

TrainConfig make_config(const TrainOptions& t, std::uint64_t seed, std::size_t workers) {
    TrainConfig cfg;
    cfg.variant = parse_variant(t.variant);
    cfg.geometry.input_size = t.input_size;
    cfg.geometry.filters = t.filters;
    cfg.epochs = t.epochs;
    cfg.batch_size = t.batch_size;
    cfg.lr = t.lr;
    cfg.val_frac = t.val_frac;
    if (t.no_augment) cfg.augment.reset();
    cfg.seed = seed;
    cfg.patience = t.patience;
    if (t.target_acc > 0.0) cfg.target_val_acc = t.target_acc;
    cfg.output_dir = t.out;
    cfg.record_timing = !t.no_timing;
    cfg.workers = workers;
    cfg.log = &std::cerr;
    cfg.validate();
    return cfg;
}

void print_eval(const EvalResult& r) {
    const Metrics& m = r.metrics;
    const auto u = [](std::uint64_t v) { return static_cast<unsigned long long>(v); };
    std::printf("samples: %llu\n", u(m.total()));
    std::printf("loss: %.6f\n", r.loss);
    std::printf("VA: %.4f\n", r.va);
    std::printf("confusion matrix (rows: actual, cols: predicted)\n");
    std::printf("%-12s %10s %12s\n", "", "cracked", "non-cracked");
    std::printf("%-12s %10llu %12llu\n", "cracked", u(m.true_positive()), u(m.false_negative()));
    std::printf("%-12s %10llu %12llu\n", "non-cracked", u(m.false_positive()), u(m.true_negative()));
}

Tensor<float> load_for_model(const fs::path& path, const LayerGraph<float>& g) {
    const Tensor<float> img = read_image(path);
    const Shape& in = g.input_shape();
    if (img.dim(2) != in[2]) {
        throw ShapeError("image has " + std::to_string(img.dim(2)) + " channels, model expects " + std::to_string(in[2]));
    }
    return prepare_image(img, in[0]);
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crack image classifier: single- and dual-channel CNNs"};
    app.require_subcommand(1);
    std::uint64_t seed = 42;
    std::size_t workers = 1;
    const auto add_common = [&](CLI::App* a) {
        a->add_option("--seed", seed, "random seed")->capture_default_str();
        a->add_option("--workers", workers, "threads for data loading, augmentation and evaluation")
            ->capture_default_str()
            ->check(CLI::Range(1, 256));
    };

    TrainOptions topt;
    DataOptions dopt;
    auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoints plus history.csv");
    add_common(train_cmd);
    add_train_options(train_cmd, topt, true);
    add_data_options(train_cmd, dopt);

    std::string ckpt_path;
    std::string split = "all";
    double eval_val_frac = 0.1;
    std::size_t eval_batch = 32;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    add_data_options(eval_cmd, dopt);
    eval_cmd->add_option("--split", split, "all, or val/train to re-derive the training split")
        ->capture_default_str()
        ->check(CLI::IsMember({"all", "val", "train"}));
    eval_cmd->add_option("--val-frac", eval_val_frac, "validation fraction used when --split is val/train")
        ->capture_default_str();
    eval_cmd->add_option("--batch-size", eval_batch, "evaluation batch size")->capture_default_str();

    std::string image_path;
    auto* predict_cmd = app.add_subcommand("predict", "classify one image");
    add_common(predict_cmd);
    predict_cmd->add_option("image", image_path, "PNG or JPEG image")->required();
    predict_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();

    std::string out_dir;
    std::size_t tile_size = 256;
    auto* tile_cmd = app.add_subcommand("tile", "cut a mother image into non-overlapping tiles");
    add_common(tile_cmd);
    tile_cmd->add_option("mother-image", image_path, "full-resolution photograph")->required();
    tile_cmd->add_option("--out", out_dir, "directory for tiles")->required();
    tile_cmd->add_option("--tile", tile_size, "tile side in pixels")->capture_default_str()->check(CLI::PositiveNumber);

    std::size_t synth_n = 0;
    std::size_t synth_size = 256;
    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic labelled corpus");
    add_common(synth_cmd);
    synth_cmd->add_option("n", synth_n, "images per class")->required()->check(CLI::PositiveNumber);
    synth_cmd->add_option("--out", out_dir, "dataset root to create")->required();
    synth_cmd->add_option("--size", synth_size, "image side")->capture_default_str()->check(CLI::Range(16, 4096));

    std::size_t preview_count = 8;
    std::string preview_out = "augment_preview.png";
    AugmentConfig aug;
    auto* preview_cmd = app.add_subcommand("augment-preview", "render random augmentations of one image as a grid");
    add_common(preview_cmd);
    preview_cmd->add_option("--image", image_path, "source image (default: a synthetic cracked sample)");
    preview_cmd->add_option("--count", preview_count, "augmented copies")->capture_default_str()->check(CLI::Range(1, 256));
    preview_cmd->add_option("--out", preview_out, "output PNG")->capture_default_str();
    preview_cmd->add_option("--rotation", aug.rot_max_deg, "max rotation in degrees")->capture_default_str();
    preview_cmd->add_option("--shift", aug.shift_frac, "max shift as a fraction of size")->capture_default_str();
    preview_cmd->add_option("--zoom", aug.zoom_frac, "max zoom fraction")->capture_default_str();
    preview_cmd->add_option("--intensity", aug.intensity_frac, "max intensity scale fraction")->capture_default_str();

    std::string tap;
    auto* fmap_cmd = app.add_subcommand("feature-maps", "export per-filter activations at a layer as PNGs");
    add_common(fmap_cmd);
    fmap_cmd->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
    fmap_cmd->add_option("image", image_path, "input image")->required();
    fmap_cmd->add_option("tap", tap, "layer id or alias: stem, deep1, shallow1")->required();
    fmap_cmd->add_option("--out", out_dir, "output directory")->required();

    TrainOptions aopt;
    aopt.out = "runs/ablation";
    auto* ablation_cmd = app.add_subcommand("ablation", "train all five variants and print the comparison table");
    add_common(ablation_cmd);
    add_train_options(ablation_cmd, aopt, false);
    add_data_options(ablation_cmd, dopt);

    std::string params_variant;
    bool params_csv = false;
    std::size_t params_input = 64;
    std::size_t params_filters = 32;
    auto* params_cmd = app.add_subcommand("params", "per-layer parameter counts for a variant");
    add_common(params_cmd);
    params_cmd->add_option("variant", params_variant, "model1|model2|scnn|model3|model4|duccnet")->required();
    params_cmd->add_flag("--csv", params_csv, "CSV instead of a table");
    params_cmd->add_option("--input-size", params_input, "network input side")->capture_default_str();
    params_cmd->add_option("--filters", params_filters, "conv filters per layer")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << '\n';
        const CLI::App* sub = nullptr;
        for (const auto* s : app.get_subcommands()) sub = s;
        std::cerr << (sub ? sub->help() : app.help());
        return 2;
    }

    try {
        if (*train_cmd) {
            const TrainConfig cfg = make_config(topt, seed, workers);
            const auto samples = load_samples(dopt, seed, cfg.geometry.input_size, workers);
            const TrainResult r = train(cfg, samples);
            std::printf("best val_acc: %.4f (epoch %zu)\n", r.best_val_acc, r.best_epoch);
            std::printf("final val_acc: %.4f (epoch %zu)\n", r.history.back().val_acc, r.history.back().epoch);
            std::printf("stop: %s\n", r.stop_reason.c_str());
            std::printf("checkpoints: %s, %s\n", (cfg.output_dir / "best.ckpt").string().c_str(),
                        (cfg.output_dir / "final.ckpt").string().c_str());
        } else if (*eval_cmd) {
            const Checkpoint ck = load_checkpoint(ckpt_path);
            const auto [variant, geo] = parse_variant_tag(ck.variant_tag);
            auto samples = load_samples(dopt, seed, geo.input_size, workers);
            if (split != "all") {
                auto parts = split_train_val(samples, eval_val_frac, ck.seed);
                samples = split == "val" ? std::move(parts.second) : std::move(parts.first);
            }
            std::printf("checkpoint: %s (variant %s, epoch %u)\n", ckpt_path.c_str(), ck.variant_tag.c_str(), ck.epoch);
            print_eval(evaluate(ck, samples, eval_batch, workers));
        } else if (*predict_cmd) {
            const RestoredModel m = restore_model(load_checkpoint(ckpt_path));
            const Tensor<float> img = load_for_model(image_path, m.graph);
            Shape bs{1};
            bs.insert(bs.end(), img.shape().begin(), img.shape().end());
            const float p = m.graph.infer(img.reshaped(bs))[0];
            std::printf("probability: %.6f\n", p);
            std::printf("label: %s\n", detects_crack(p) ? "cracked" : "non-cracked");
        } else if (*tile_cmd) {
            const Tensor<float> img = read_image(image_path);
            const auto tiles = tile_mother_image(img, tile_size);
            const std::string stem = fs::path(image_path).stem().string();
            for (const auto& t : tiles) write_png(fs::path(out_dir) / tile_file_name(stem, t.row, t.col), t.image);
            std::printf("wrote %zu tiles of %zux%zu to %s\n", tiles.size(), tile_size, tile_size, out_dir.c_str());
        } else if (*synth_cmd) {
            const auto samples = synth_crack_corpus(synth_n, seed, synth_size);
            write_dataset(out_dir, samples);
            std::printf("wrote %zu cracked and %zu non-cracked images to %s\n", synth_n, synth_n, out_dir.c_str());
        } else if (*preview_cmd) {
            aug.validate();
            Tensor<float> src = image_path.empty() ? synth_pair(derive_seed(seed, {0x9e}), 256).cracked
                                                   : read_image(image_path);
            src = prepare_image(src, kWorkingSize);
            const Sample s{src, kCracked, "preview"};
            std::vector<Tensor<float>> tiles{src};
            for (std::size_t i = 0; i < preview_count; ++i) {
                Rng rng(derive_seed(seed, {0xa11, i}));
                tiles.push_back(augment(s, aug, rng).image);
            }
            write_png(preview_out, image_grid(tiles, 3));
            std::printf("wrote original plus %zu augmentations to %s\n", preview_count, preview_out.c_str());
        } else if (*fmap_cmd) {
            const RestoredModel m = restore_model(load_checkpoint(ckpt_path));
            const Tensor<float> img = load_for_model(image_path, m.graph);
            const auto maps = extract_feature_maps(m.graph, img, tap);
            const std::string id = resolve_tap_alias(tap);
            char name[64];
            for (std::size_t i = 0; i < maps.size(); ++i) {
                std::snprintf(name, sizeof name, "filter_%02zu.png", i);
                write_png(fs::path(out_dir) / id / name, maps[i]);
            }
            write_png(fs::path(out_dir) / (id + "_grid.png"), image_grid(maps, 8));
            std::printf("wrote %zu feature maps of %s (%zux%zu) to %s\n", maps.size(), id.c_str(),
                        maps.front().dim(0), maps.front().dim(1), out_dir.c_str());
        } else if (*ablation_cmd) {
            TrainConfig cfg = make_config(aopt, seed, workers);
            const auto samples = load_samples(dopt, seed, cfg.geometry.input_size, workers);
            const AblationReport rep = run_ablation(cfg, samples);
            const std::string table = format_ablation_table(rep);
            std::fputs(table.c_str(), stdout);
            write_text_file(cfg.output_dir / "ablation.txt", table);
            write_text_file(cfg.output_dir / "ablation.csv", format_ablation_csv(rep));
        } else if (*params_cmd) {
            ModelGeometry geo;
            geo.input_size = params_input;
            geo.filters = params_filters;
            const ParamReport r = count_params(parse_variant(params_variant), geo);
            std::fputs((params_csv ? format_param_csv(r) : format_param_table(r)).c_str(), stdout);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 0;
}
