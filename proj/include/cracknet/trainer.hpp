#pragma once

// Training and evaluation orchestration, history logging and the ablation
// runner.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cracknet/augment.hpp"
#include "cracknet/checkpoint.hpp"
#include "cracknet/dataset.hpp"
#include "cracknet/errors.hpp"
#include "cracknet/graph.hpp"
#include "cracknet/models.hpp"
#include "cracknet/optim.hpp"

namespace cracknet {

struct TrainConfig {
    ModelVariant variant = ModelVariant::DuCCNet;
    ModelGeometry geometry{};
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double lr = 0.0005;
    double val_frac = 0.1;
    // Each epoch trains on every original sample plus `augment_copies` freshly
    // augmented copies of it; nullopt disables augmentation.
    std::optional<AugmentConfig> augment = AugmentConfig{};
    std::size_t augment_copies = 1;
    std::uint64_t seed = 0;
    std::size_t patience = 10;              // epochs without val-loss improvement; 0 disables
    std::optional<double> target_val_acc;   // stop once validation accuracy reaches this
    std::filesystem::path output_dir;       // empty: keep everything in memory
    bool record_timing = true;              // false writes 0 in the seconds column
    std::size_t workers = 1;
    std::ostream* log = nullptr;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch normalization needs batch statistics)");
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(val_frac > 0.0 && val_frac < 1.0)) throw ConfigError("val_frac must be in (0, 1)");
        if (augment) augment->validate();
        if (workers < 1) throw ConfigError("workers must be >= 1");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double seconds = 0.0;
};

inline constexpr const char* kHistoryHeader = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

inline std::string format_history_csv(const std::vector<EpochRecord>& history) {
    std::string out = std::string(kHistoryHeader) + "\n";
    char line[160];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.4f,%.6f,%.4f,%.3f\n", r.epoch, r.train_loss, r.train_acc,
                      r.val_loss, r.val_acc, r.seconds);
        out += line;
    }
    return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

template <typename SampleRange>
std::pair<Tensor<float>, Tensor<float>> make_batch(const SampleRange& items) {
    std::vector<const Tensor<float>*> images;
    std::vector<float> labels;
    for (const Sample* s : items) {
        images.push_back(&s->image);
        labels.push_back(static_cast<float>(s->label));
    }
    const std::size_t n = labels.size();
    return {stack<float>(images), Tensor<float>(Shape{n, 1}, std::move(labels))};
}

struct EvalResult {
    Metrics metrics;
    double va = 0.0;
    double loss = 0.0;
    std::vector<float> probabilities;  // per sample, input order
};

// Infer-mode pass over `samples`. Batches may be spread over `workers`
// threads; probabilities land per index and are reduced in input order, so
// the result does not depend on the worker count.
inline EvalResult evaluate(const LayerGraph<float>& g, const std::vector<Sample>& samples, std::size_t batch_size = 32,
                           std::size_t workers = 1) {
    if (samples.empty()) throw DataError("evaluate on an empty sample set");
    batch_size = std::max<std::size_t>(1, batch_size);
    const std::size_t n_batches = (samples.size() + batch_size - 1) / batch_size;
    EvalResult r;
    r.probabilities.assign(samples.size(), 0.0f);
    parallel_for(n_batches, workers, [&](std::size_t b) {
        std::vector<const Sample*> items;
        for (std::size_t i = b * batch_size; i < std::min(samples.size(), (b + 1) * batch_size); ++i) {
            items.push_back(&samples[i]);
        }
        const auto [x, y] = make_batch(items);
        const Tensor<float> p = g.infer(x);
        for (std::size_t i = 0; i < items.size(); ++i) r.probabilities[b * batch_size + i] = p[i];
    });
    Tensor<float> pred(Shape{samples.size(), 1}, r.probabilities);
    std::vector<float> lab;
    for (const auto& s : samples) lab.push_back(static_cast<float>(s.label));
    r.loss = bce_loss(pred, Tensor<float>(Shape{samples.size(), 1}, std::move(lab))).loss;
    for (std::size_t i = 0; i < samples.size(); ++i) record_prediction(r.metrics, r.probabilities[i], samples[i].label);
    r.va = validation_accuracy(r.metrics);
    return r;
}

inline EvalResult evaluate(const Checkpoint& ck, const std::vector<Sample>& samples, std::size_t batch_size = 32,
                           std::size_t workers = 1) {
    const RestoredModel m = restore_model(ck);
    for (const auto& s : samples) {
        if (s.image.shape() != m.graph.input_shape()) {
            throw CheckpointError("sample " + s.source_id + " has shape " + shape_str(s.image.shape()) +
                                  " but the checkpoint graph expects " + shape_str(m.graph.input_shape()));
        }
    }
    return evaluate(m.graph, samples, batch_size, workers);
}

struct TrainResult {
    LayerGraph<float> graph;  // state after the last epoch
    Checkpoint final_checkpoint;
    Checkpoint best_checkpoint;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_acc = -1.0;
    std::vector<Sample> train_set;
    std::vector<Sample> val_set;
    std::string stop_reason;
};

// Mini-batch boundaries over n items; a trailing batch of one sample is
// folded into the previous batch so every batch has batch statistics.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t s = 0; s < n; s += batch_size) out.emplace_back(s, std::min(n, s + batch_size));
    if (out.size() > 1 && out.back().second - out.back().first == 1) {
        out.pop_back();
        out.back().second = n;
    }
    return out;
}

inline TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& samples) {
    cfg.validate();
    using clock = std::chrono::steady_clock;
    auto [train_set, val_set] = split_train_val(samples, cfg.val_frac, cfg.seed);
    if (train_set.size() < 2) throw DataError("training split needs at least 2 samples");

    TrainResult result{build_variant<float>(cfg.variant, cfg.geometry), {}, {}, {}, 0, -1.0, {}, {}, ""};
    LayerGraph<float>& g = result.graph;
    for (const auto& s : samples) {
        if (s.image.shape() != g.input_shape()) {
            throw DataError("sample " + s.source_id + " has shape " + shape_str(s.image.shape()) + ", model expects " +
                            shape_str(g.input_shape()));
        }
    }
    g.initialize(derive_seed(cfg.seed, {0x1417}));
    AdamState<float> adam(AdamConfig{cfg.lr});
    const std::string tag = variant_tag(cfg.variant, cfg.geometry);

    const std::size_t copies = cfg.augment ? cfg.augment_copies : 0;
    if (cfg.log) {
        *cfg.log << "train: variant=" << tag << " train=" << train_set.size() << " val=" << val_set.size()
                 << " seed=" << cfg.seed << '\n';
        if (cfg.augment) {
            *cfg.log << "augmentation: on the fly, each epoch uses the " << train_set.size() << " originals plus "
                     << copies << " augmented cop" << (copies == 1 ? "y" : "ies") << " of each ("
                     << train_set.size() * (1 + copies) << " images per epoch)\n";
        } else {
            *cfg.log << "augmentation: off\n";
        }
    }

    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t since_improvement = 0;
    const std::size_t n_epoch = train_set.size() * (1 + copies);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = clock::now();

        // originals first, then copy c of sample i at c * n + i
        std::vector<Sample> augmented(train_set.size() * copies);
        parallel_for(augmented.size(), cfg.workers, [&](std::size_t k) {
            const std::size_t i = k % train_set.size(), c = k / train_set.size() + 1;
            Rng rng(derive_seed(cfg.seed, {0xa59, epoch, i, c}));
            augmented[k] = augment(train_set[i], *cfg.augment, rng);
        });
        std::vector<const Sample*> order;
        order.reserve(n_epoch);
        for (const auto& s : train_set) order.push_back(&s);
        for (const auto& s : augmented) order.push_back(&s);
        Rng shuffler(derive_seed(cfg.seed, {0x5f1, epoch}));
        shuffler.shuffle(order);

        double loss_sum = 0.0;
        Metrics train_metrics;
        const auto ranges = batch_ranges(order.size(), cfg.batch_size);
        for (std::size_t bi = 0; bi < ranges.size(); ++bi) {
            const auto [lo, hi] = ranges[bi];
            std::vector<const Sample*> items(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                             order.begin() + static_cast<std::ptrdiff_t>(hi));
            const auto [x, y] = make_batch(items);
            auto fwd = g.forward(x, Mode::train, derive_seed(cfg.seed, {0xd0, epoch, bi}));
            const auto loss = bce_loss(fwd.output, y);
            if (!std::isfinite(loss.loss)) {
                throw DivergenceError("training loss is " + std::to_string(loss.loss) + " at epoch " +
                                      std::to_string(epoch) + ", batch " + std::to_string(bi));
            }
            const auto grads = g.backward(fwd.tape, loss.grad);
            const auto params = g.trainable();
            adam_step<float>(adam, params, grads.params);
            loss_sum += loss.loss * static_cast<double>(items.size());
            for (std::size_t i = 0; i < items.size(); ++i) record_prediction(train_metrics, fwd.output[i], items[i]->label);
        }

        const EvalResult ev = evaluate(g, val_set, cfg.batch_size, cfg.workers);
        const double seconds = std::chrono::duration<double>(clock::now() - t0).count();
        EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), validation_accuracy(train_metrics),
                        ev.loss, ev.va, cfg.record_timing ? seconds : 0.0};
        result.history.push_back(rec);
        if (cfg.log) {
            *cfg.log << "epoch " << epoch << ": train_loss=" << std::fixed << std::setprecision(4) << rec.train_loss
                     << " train_acc=" << std::setprecision(2) << rec.train_acc << " val_loss=" << std::setprecision(4)
                     << rec.val_loss << " val_acc=" << std::setprecision(2) << rec.val_acc
                     << " seconds=" << std::setprecision(1) << seconds << std::defaultfloat << std::endl;
        }

        if (rec.val_acc > result.best_val_acc) {
            result.best_val_acc = rec.val_acc;
            result.best_epoch = epoch;
            result.best_checkpoint = make_checkpoint(g, tag, cfg.seed, static_cast<std::uint32_t>(epoch));
            if (!cfg.output_dir.empty()) save_checkpoint(cfg.output_dir / "best.ckpt", result.best_checkpoint);
        }
        if (!cfg.output_dir.empty()) write_text_file(cfg.output_dir / "history.csv", format_history_csv(result.history));

        if (rec.val_loss < best_val_loss) {
            best_val_loss = rec.val_loss;
            since_improvement = 0;
        } else {
            ++since_improvement;
        }
        if (cfg.target_val_acc && rec.val_acc >= *cfg.target_val_acc) {
            result.stop_reason = "target validation accuracy reached";
            break;
        }
        if (cfg.patience > 0 && since_improvement >= cfg.patience) {
            result.stop_reason = "early stop: no validation-loss improvement for " + std::to_string(cfg.patience) +
                                 " epochs";
            break;
        }
    }
    if (result.stop_reason.empty()) result.stop_reason = "epoch limit";
    result.final_checkpoint =
        make_checkpoint(g, tag, cfg.seed, static_cast<std::uint32_t>(result.history.back().epoch));
    if (!cfg.output_dir.empty()) save_checkpoint(cfg.output_dir / "final.ckpt", result.final_checkpoint);
    if (cfg.log) {
        *cfg.log << "stopped: " << result.stop_reason << "; best val_acc " << std::fixed << std::setprecision(2)
                 << result.best_val_acc << std::defaultfloat << " at epoch " << result.best_epoch << '\n';
    }
    result.train_set = std::move(train_set);
    result.val_set = std::move(val_set);
    return result;
}

struct AblationRow {
    ModelVariant variant;
    VariantFlags flags;
    std::uint64_t trainable_params = 0;
    double best_val_acc = 0.0;
    double final_val_acc = 0.0;
    std::size_t epochs_run = 0;
    double reference_acc = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
};

// Trains every variant under the same data, split, seed and schedule.
inline AblationReport run_ablation(const TrainConfig& base, const std::vector<Sample>& samples) {
    AblationReport rep;
    for (ModelVariant v : kAllVariants) {
        TrainConfig cfg = base;
        cfg.variant = v;
        if (!base.output_dir.empty()) cfg.output_dir = base.output_dir / variant_name(v);
        if (cfg.log) *cfg.log << "== ablation: " << variant_display_name(v) << '\n';
        const TrainResult r = train(cfg, samples);
        AblationRow row;
        row.variant = v;
        row.flags = flags_of(v);
        row.trainable_params = count_params(r.graph).total_trainable;
        row.best_val_acc = r.best_val_acc;
        row.final_val_acc = r.history.back().val_acc;
        row.epochs_run = r.history.size();
        row.reference_acc = reference_accuracy(v);
        rep.rows.push_back(row);
    }
    return rep;
}

inline std::string format_ablation_table(const AblationReport& rep) {
    std::ostringstream os;
    const auto mark = [](bool b) { return b ? "yes" : "no"; };
    os << std::left << std::setw(16) << "model" << std::setw(10) << "channel1" << std::setw(10) << "channel2"
       << std::setw(7) << "skip" << std::setw(12) << "conv-block7" << std::right << std::setw(12) << "params"
       << std::setw(10) << "best VA" << std::setw(10) << "final VA" << std::setw(8) << "epochs" << std::setw(11)
       << "published" << '\n';
    for (const auto& r : rep.rows) {
        os << std::left << std::setw(16) << variant_display_name(r.variant) << std::setw(10) << "yes" << std::setw(10)
           << mark(r.flags.channel2) << std::setw(7) << mark(r.flags.skip_connection) << std::setw(12)
           << mark(r.flags.conv_block7) << std::right << std::setw(12) << r.trainable_params << std::fixed
           << std::setprecision(2) << std::setw(10) << r.best_val_acc << std::setw(10) << r.final_val_acc
           << std::setw(8) << r.epochs_run << std::setw(11) << r.reference_acc << std::defaultfloat << '\n';
    }
    os << "ordering by best VA:";
    std::vector<const AblationRow*> sorted;
    for (const auto& r : rep.rows) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const AblationRow* a, const AblationRow* b) { return a->best_val_acc < b->best_val_acc; });
    for (std::size_t i = 0; i < sorted.size(); ++i) os << (i ? " <= " : " ") << variant_display_name(sorted[i]->variant);
    os << "\npublished ordering:  Model 1 < Model 2 (SCNN) < Model 3 < Model 4 < DuCCNet\n";
    return os.str();
}

inline std::string format_ablation_csv(const AblationReport& rep) {
    std::ostringstream os;
    os << "variant,channel1,channel2,skip_connection,conv_block7,trainable_params,best_val_acc,final_val_acc,epochs,"
          "published_acc\n";
    char line[200];
    for (const auto& r : rep.rows) {
        std::snprintf(line, sizeof line, "%s,1,%d,%d,%d,%llu,%.4f,%.4f,%zu,%.2f\n", variant_name(r.variant).c_str(),
                      r.flags.channel2, r.flags.skip_connection, r.flags.conv_block7,
                      static_cast<unsigned long long>(r.trainable_params), r.best_val_acc, r.final_val_acc,
                      r.epochs_run, r.reference_acc);
        os << line;
    }
    return os.str();
}

}  // namespace cracknet
