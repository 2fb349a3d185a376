// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "cracknet/cracknet.hpp"
#include "oracles.hpp"

using namespace cracknet;
using oracle::random_tensor;

namespace {

namespace tol {
constexpr double conv_rel = 1e-5;
constexpr double conv_seconds = 10.0;
constexpr double grad_rel = 1e-4;
constexpr double grad_h = 1e-5;
constexpr double grad_seconds = 300.0;
constexpr double grad_max_kink_fraction = 0.10;
constexpr double bn_mean = 1e-5;
constexpr double bn_var = 1e-4;
constexpr double bce_ln2 = 1e-6;
constexpr double adam_first_step = 1e-3;  // relative to lr
constexpr double quadratic = 0.1;
constexpr double train_val_acc = 90.0;
constexpr std::size_t train_epochs = 30;
constexpr double train_seconds = 1800.0;
constexpr std::size_t overfit_epochs = 200;
constexpr double augment_identity = 1e-6;
}  // namespace tol

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// 1
Outcome conv_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0, worst_f32 = 0.0;
    std::size_t cases = 0;
    std::uint64_t seed = 1;
    for (std::size_t h = 1; h <= 8; ++h)
        for (std::size_t w = 1; w <= 8; ++w)
            for (std::size_t c = 1; c <= 3; ++c)
                for (std::size_t k : {1, 3})
                    for (std::size_t s : {1, 2})
                        for (std::size_t p : {0, 1}) {
                            if (h + 2 * p < k || w + 2 * p < k) continue;
                            const std::size_t n = 1 + seed % 4;
                            const auto x = random_tensor<double>(Shape{2, h, w, c}, seed);
                            const auto kern = random_tensor<double>(Shape{k, k, c, n}, seed + 1);
                            const auto b = random_tensor<double>(Shape{n}, seed + 2);
                            seed += 3;
                            const auto y = conv2d(x, kern, b, ConvSpec::explicit_padding(k, s, p, c, n));
                            const auto yf = conv2d(x.cast<float>(), kern.cast<float>(), b.cast<float>(),
                                                   ConvSpec::explicit_padding(k, s, p, c, n));
                            const std::size_t oh = (h + 2 * p - k) / s + 1, ow = (w + 2 * p - k) / s + 1;
                            const auto xd = oracle::to_double(x);
                            for (std::size_t bi = 0; bi < 2; ++bi) {
                                const std::vector<double> xs(xd.begin() + long(bi * h * w * c),
                                                             xd.begin() + long((bi + 1) * h * w * c));
                                const auto want = oracle::conv_direct(xs, h, w, c, oracle::to_double(kern), k, n,
                                                                      oracle::to_double(b), s, p, p, oh, ow);
                                for (std::size_t i = 0; i < want.size(); ++i) {
                                    worst = std::max(worst, oracle::rel_err(y[bi * want.size() + i], want[i]));
                                    // float32 storage: relative above magnitude 1, absolute below
                                    const double a = yf[bi * want.size() + i];
                                    worst_f32 = std::max(worst_f32, std::fabs(a - want[i]) / std::max(1.0, std::fabs(want[i])));
                                }
                            }
                            ++cases;
                        }
    const double secs = seconds_since(t0);
    return {worst < tol::conv_rel && worst_f32 < tol::conv_rel && secs < tol::conv_seconds,
            fmt("%zu cases, max rel err %.2e in 64-bit and %.2e in 32-bit (< %.0e), %.2f s (< %.0f s)", cases, worst,
                worst_f32, tol::conv_rel, secs, tol::conv_seconds)};
}

// 2
Outcome gradient_checks() {
    const auto t0 = std::chrono::steady_clock::now();
    struct Check {
        std::string name;
        std::function<LayerGraph<double>()> build;
        std::size_t batch, per_tensor;
    };
    const std::vector<Check> checks = {
        {"conv", [] { LayerGraph<double> g(Shape{6, 5, 3}); g.conv2d("c", g.input(), ConvSpec::same_padding(3, 3, 4, 1)); return g; }, 2, 200},
        {"conv-s2", [] { LayerGraph<double> g(Shape{6, 5, 3}); g.conv2d("c", g.input(), ConvSpec::same_padding(3, 3, 4, 2)); return g; }, 2, 200},
        {"conv-32", [] { LayerGraph<double> g(Shape{6, 6, 32}); g.conv2d("c", g.input(), ConvSpec::same_padding(3, 32, 32)); return g; }, 2, 64},
        {"batchnorm", [] { LayerGraph<double> g(Shape{3, 3, 4}); g.batch_norm("bn", g.conv2d("c", g.input(), ConvSpec::same_padding(1, 4, 4))); return g; }, 5, 100},
        {"relu", [] { LayerGraph<double> g(Shape{4, 4, 2}); g.relu("r", g.input()); return g; }, 2, 64},
        {"sigmoid", [] { LayerGraph<double> g(Shape{4, 4, 2}); g.sigmoid("s", g.input()); return g; }, 2, 64},
        {"maxpool", [] { LayerGraph<double> g(Shape{4, 6, 2}); g.maxpool2("p", g.input()); return g; }, 2, 96},
        {"dense", [] { LayerGraph<double> g(Shape{7}); g.dense("d", g.input(), 3); return g; }, 4, 100},
        {"dropout", [] { LayerGraph<double> g(Shape{12}); g.dropout("o", g.dense("d", g.input(), 8), 0.5); return g; }, 4, 100},
        {"flatten", [] { LayerGraph<double> g(Shape{2, 3, 2}); g.dense("d", g.flatten("f", g.input()), 2); return g; }, 3, 100},
        {"add", [] {
             LayerGraph<double> g(Shape{4, 4, 2});
             auto a = g.conv2d("a", g.input(), ConvSpec::same_padding(3, 2, 3));
             g.add_merge("m", a, g.conv2d("b", g.input(), ConvSpec::same_padding(1, 2, 3)));
             return g;
         }, 2, 100},
        {"scnn", [] { return build_scnn<double>(ModelGeometry{16, 3, 4, 32, 0.5}); }, 4, 12},
        {"duccnet", [] { return build_duccnet<double>(ModelGeometry{16, 3, 4, 32, 0.5}); }, 4, 12},
    };
    bool ok = true;
    double worst = 0.0, worst_raw = 0.0;
    std::size_t checked = 0, kinks = 0;
    std::string worst_name, failures;
    std::uint64_t seed = 500;
    for (const auto& c : checks) {
        auto g = c.build();
        g.initialize(seed);
        Shape s{c.batch};
        for (std::size_t d : g.input_shape()) s.push_back(d);
        const auto rep = oracle::graph_gradcheck(g, random_tensor<double>(s, seed + 1), seed, tol::grad_h, c.per_tensor);
        seed += 10;
        const double kink_frac = double(rep.skipped_kinks) / double(rep.checked + rep.skipped_kinks);
        if (rep.checked == 0 || rep.max_rel_err >= tol::grad_rel || kink_frac > tol::grad_max_kink_fraction) {
            ok = false;
            failures += fmt(" [%s: rel err %.2e, %zu checked, %zu kinks]", c.name.c_str(), rep.max_rel_err, rep.checked,
                            rep.skipped_kinks);
        }
        worst_raw = std::max(worst_raw, rep.max_raw_rel_err);
        if (rep.max_rel_err > worst || worst_name.empty()) {
            worst = rep.max_rel_err;
            worst_name = c.name;
        }
        checked += rep.checked;
        kinks += rep.skipped_kinks;
    }
    const double secs = seconds_since(t0);
    return {ok && secs < tol::grad_seconds,
            fmt("%zu layer/model checks, %zu entries (%zu kinks skipped), max rel err %.2e in %s (< %.0e; %.2e without "
                "the 1e-8 noise floor), %.1f s%s",
                checks.size(), checked, kinks, worst, worst_name.c_str(), tol::grad_rel, worst_raw, secs,
                failures.c_str())};
}

// 3
// With epsilon in the denominator the output variance is var / (var + eps),
// so |var - 1| < 1e-4 needs input variance above eps / 1e-4. The random
// batches are drawn at that scale; unit-scale batches are checked against the
// exact shrinkage instead.
Outcome bn_statistics() {
    double worst_mean = 0.0, worst_var = 0.0, worst_shrink = 0.0;
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
        const std::size_t batch = 8 + 3 * seed, c = 1 + seed % 6;
        for (const double scale : {10.0, 1.0}) {
            auto x = random_tensor<float>(Shape{batch, 4, 3, c}, seed, -2.0, 5.0);
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = float(scale * x[i] * double(1 + i % c) + double(i % c));
            const auto state = BatchNormState<float>::identity(c);
            const auto y = batchnorm_apply(x, state, Mode::train);
            std::vector<double> mean, var, xm, xv;
            oracle::channel_stats(oracle::to_double(y), c, mean, var);
            oracle::channel_stats(oracle::to_double(x), c, xm, xv);
            for (std::size_t k = 0; k < c; ++k) {
                worst_mean = std::max(worst_mean, std::fabs(mean[k]));
                if (scale > 1.0) worst_var = std::max(worst_var, std::fabs(var[k] - 1.0));
                worst_shrink = std::max(worst_shrink, std::fabs(var[k] - xv[k] / (xv[k] + state.epsilon)));
            }
        }
    }
    return {worst_mean < tol::bn_mean && worst_var < tol::bn_var && worst_shrink < tol::bn_var,
            fmt("max |mean| %.2e (< %.0e), max |var-1| %.2e (< %.0e) at input variance >= 10, max |var - "
                "var/(var+eps)| %.2e at unit scale",
                worst_mean, tol::bn_mean, worst_var, tol::bn_var, worst_shrink)};
}

// 4
Outcome structure() {
    const auto g = build_duccnet<float>();
    const std::size_t convs = g.count(LayerKind::Conv2D), bns = g.count(LayerKind::BatchNorm),
                      adds = g.count(LayerKind::AddMerge), flats = g.count(LayerKind::Flatten);
    const Shape skip = g.node(*g.find("skip_add")).out_shape, merge = g.node(*g.find("merge_add")).out_shape,
                flat = g.node(*g.find("flatten")).out_shape;
    const bool ok = convs == 29 && bns == 2 && adds == 2 && flats == 1 && skip == Shape{8, 8, 32} &&
                    merge == Shape{1, 1, 32} && flat == Shape{32};
    return {ok, fmt("conv %zu, bn %zu, add %zu (%s, %s), flatten %zu x %s", convs, bns, adds, shape_str(skip).c_str(),
                    shape_str(merge).c_str(), flats, shape_str(flat).c_str())};
}

// 5
Outcome parameter_counts() {
    bool ok = true;
    std::string detail;
    for (ModelVariant v : {ModelVariant::Model2_SCNN, ModelVariant::DuCCNet}) {
        const auto r = count_params(v);
        std::uint64_t sum = 0;
        for (const auto& row : r.rows) sum += row.trainable;
        std::uint64_t tensors = 0;
        const auto graph = build_variant<float>(v);
        for (const auto& p : graph.parameters())
            if (p.trainable) tensors += p.value->size();
        const std::string table = format_param_table(r);
        const std::string published = "published trainable:  " + std::to_string(*r.reference_trainable);
        ok = ok && sum == r.total_trainable && tensors == r.total_trainable &&
             table.find(published) != std::string::npos && table.find("engine - published = ") != std::string::npos;
        detail += fmt("%s engine %llu vs published %llu (delta %+lld); ", variant_name(v).c_str(),
                      (unsigned long long)r.total_trainable, (unsigned long long)*r.reference_trainable,
                      (long long)r.total_trainable - (long long)*r.reference_trainable);
    }
    const std::uint64_t block7 = 3 * ((3 * 3 * 32 + 1) * 32);
    const auto p = [](ModelVariant v) { return count_params(v).total_trainable; };
    const std::uint64_t d1 = p(ModelVariant::Model2_SCNN) - p(ModelVariant::Model1);
    const std::uint64_t d2 = p(ModelVariant::DuCCNet) - p(ModelVariant::Model3);
    ok = ok && d1 == block7 && d2 == block7;
    detail += fmt("block-7 delta %llu/%llu (expect %llu)", (unsigned long long)d1, (unsigned long long)d2,
                  (unsigned long long)block7);
    return {ok, detail};
}

// 6
Outcome loss_and_optimizer() {
    Tensor<double> half(Shape{6, 1}, 0.5);
    Tensor<double> y(Shape{6, 1}, std::vector<double>{0, 1, 1, 0, 1, 0});
    const double bce_err = std::fabs(bce_loss(half, y).loss - std::log(2.0));

    double worst_step = 0.0;
    for (double g : {1.0, -0.5, 40.0}) {
        const AdamConfig cfg{};
        AdamState<double> s(cfg);
        Tensor<double> w(Shape{1}, 0.25);
        std::vector<Tensor<double>*> params{&w};
        std::vector<Tensor<double>> grads{Tensor<double>(Shape{1}, g)};
        adam_step<double>(s, params, grads);
        worst_step = std::max(worst_step, std::fabs(std::fabs(w[0] - 0.25) - cfg.lr) / cfg.lr);
    }

    AdamState<double> s(AdamConfig{0.1});
    Tensor<double> w(Shape{1}, 0.0);
    std::vector<Tensor<double>*> params{&w};
    for (int i = 0; i < 100; ++i) {
        std::vector<Tensor<double>> grads{Tensor<double>(Shape{1}, 2.0 * (w[0] - 3.0))};
        adam_step<double>(s, params, grads);
    }
    const double qerr = std::fabs(w[0] - 3.0);
    return {bce_err < tol::bce_ln2 && worst_step < tol::adam_first_step && qerr < tol::quadratic,
            fmt("|BCE-ln2| %.1e, first step rel dev %.1e, |w-3| after 100 steps %.2e", bce_err, worst_step, qerr)};
}

std::vector<Sample> synthetic(std::size_t per_class, std::uint64_t seed, std::size_t gen, std::size_t input) {
    auto c = synth_crack_corpus(per_class, seed, gen);
    for (auto& s : c) s.image = prepare_image(s.image, input);
    return c;
}

// 7
Outcome desk_training() {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig cfg;
    cfg.variant = ModelVariant::DuCCNet;
    cfg.epochs = tol::train_epochs;
    cfg.seed = 42;
    cfg.target_val_acc = tol::train_val_acc;
    cfg.log = &std::cerr;
    const auto r = train(cfg, synthetic(200, 42, 256, 64));
    const double secs = seconds_since(t0);

    TrainConfig over;
    over.variant = ModelVariant::DuCCNet;
    over.epochs = tol::overfit_epochs;
    over.batch_size = 8;
    over.val_frac = 0.2;  // 16 train, 4 val
    over.augment.reset();
    over.patience = 0;
    over.seed = 7;
    over.record_timing = false;
    const auto o = train(over, synthetic(10, 7, 256, 64));
    std::size_t overfit_epoch = 0;
    for (const auto& e : o.history)
        if (e.train_acc >= 100.0) {
            overfit_epoch = e.epoch;
            break;
        }
    const bool ok = r.best_val_acc >= tol::train_val_acc && secs < tol::train_seconds && o.train_set.size() == 16 &&
                    overfit_epoch > 0;
    return {ok, fmt("synthetic 200+200: best val_acc %.2f%% at epoch %zu (>= %.0f%% within %zu), %.0f s; overfit on %zu "
                    "samples: 100%% train acc at epoch %zu (within %zu)",
                    r.best_val_acc, r.best_epoch, tol::train_val_acc, tol::train_epochs, secs, o.train_set.size(),
                    overfit_epoch, tol::overfit_epochs)};
}

TrainConfig small_run_config() {
    TrainConfig cfg;
    cfg.geometry = ModelGeometry{32, 3, 8, 32, 0.5};
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.val_frac = 0.2;
    cfg.seed = 2024;
    cfg.record_timing = false;
    cfg.patience = 0;
    return cfg;
}

// 8
Outcome ablation() {
    const auto data = synthetic(30, 8, 64, 32);
    const auto cfg = small_run_config();
    const auto a = run_ablation(cfg, data);
    const auto b = run_ablation(cfg, data);
    const std::string table = format_ablation_table(a);
    std::printf("%s", table.c_str());
    bool flags = a.rows.size() == 5;
    for (std::size_t i = 0; flags && i < 5; ++i) flags = a.rows[i].flags == flags_of(kAllVariants[i]);
    const bool same = table == format_ablation_table(b) && format_ablation_csv(a) == format_ablation_csv(b);
    return {flags && same, fmt("5 variants, flags %s, rerun byte-identical: %s", flags ? "ok" : "wrong",
                               same ? "yes" : "no")};
}

// 9
Outcome augmentation() {
    const auto corpus = synth_crack_corpus(3, 9, 32);
    double identity = 0.0;
    for (const auto& s : corpus) {
        Rng rng(1);
        const auto out = augment(s, AugmentConfig::identity(), rng);
        for (std::size_t i = 0; i < s.image.size(); ++i) identity = std::max(identity, double(std::fabs(out.image[i] - s.image[i])));
    }
    bool involution = true;
    for (const auto& s : corpus)
        involution = involution && flip_horizontal(flip_horizontal(s.image)) == s.image &&
                     flip_vertical(flip_vertical(s.image)) == s.image;
    const AugmentConfig cfg;
    Rng rng(99);
    std::size_t violations = 0;
    for (int i = 0; i < 10000; ++i) {
        const Sample& s = corpus[std::size_t(i) % corpus.size()];
        const Sample out = augment(s, cfg, rng);
        if (out.label != s.label || out.image.shape() != s.image.shape()) ++violations;
        for (float v : out.image.data())
            if (!(v >= 0.0f && v <= 1.0f)) {
                ++violations;
                break;
            }
    }
    return {identity < tol::augment_identity && involution && violations == 0,
            fmt("identity max dev %.1e, flips involutive: %s, 10^4 random draws with %zu violations", identity,
                involution ? "yes" : "no", violations)};
}

// 10
Outcome determinism() {
    const auto data = synthetic(12, 10, 64, 32);
    const auto cfg = small_run_config();
    const auto a = train(cfg, data), b = train(cfg, data);
    const std::string ha = format_history_csv(a.history), hb = format_history_csv(b.history);

    const auto ck = a.final_checkpoint;
    const std::filesystem::path path = std::filesystem::temp_directory_path() / "cracknet_acceptance.ckpt";
    save_checkpoint(path, ck);
    const auto restored = restore_model(load_checkpoint(path));
    std::filesystem::remove(path);
    std::vector<const Sample*> items;
    for (const auto& s : data) items.push_back(&s);
    const auto x = make_batch(items).first;
    const auto out_a = a.graph.infer(x), out_b = restored.graph.infer(x);
    const bool bitwise = std::memcmp(out_a.raw(), out_b.raw(), out_a.size() * sizeof(float)) == 0;
    return {ha == hb && bitwise, fmt("history CSV identical: %s (%zu bytes); infer after reload bitwise equal: %s",
                                     ha == hb ? "yes" : "no", ha.size(), bitwise ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"convolution oracle equivalence", conv_oracle},
        {"gradient checks", gradient_checks},
        {"batch-norm statistics", bn_statistics},
        {"structural conformance", structure},
        {"parameter-count transparency", parameter_counts},
        {"loss and optimizer analytics", loss_and_optimizer},
        {"desk-scale training", desk_training},
        {"ablation harness", ablation},
        {"augmentation suite", augmentation},
        {"determinism and persistence", determinism},
    };
    std::set<std::size_t> only;
    for (int i = 1; i < argc; ++i) only.insert(std::strtoul(argv[i], nullptr, 10));

    std::size_t failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!only.empty() && !only.count(i + 1)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
