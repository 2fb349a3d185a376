#pragma once

// Corpus handling: tiling mother images, indexing and loading a labelled
// directory tree, and stratified train/validation splitting.
//
// Directory layout: <root>/cracked/*.png|jpg and <root>/non-cracked/*.png|jpg.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cracknet/errors.hpp"
#include "cracknet/image_io.hpp"
#include "cracknet/ops.hpp"
#include "cracknet/rng.hpp"
#include "cracknet/tensor.hpp"

namespace cracknet {

inline constexpr int kCracked = 1;
inline constexpr int kNonCracked = 0;
inline constexpr const char* kCrackedDir = "cracked";
inline constexpr const char* kNonCrackedDir = "non-cracked";
inline constexpr std::size_t kWorkingSize = 64;

struct Sample {
    Tensor<float> image;  // (H,W,3), values in [0,1]
    int label = kNonCracked;
    std::string source_id;
};

struct Tile {
    std::size_t row;
    std::size_t col;
    Tensor<float> image;
};

// Non-overlapping tile x tile crops in row-major grid order from the top-left
// corner; partial tiles at the right and bottom edges are dropped.
inline std::vector<Tile> tile_mother_image(const Tensor<float>& image, std::size_t tile = 256) {
    if (image.rank() != 3) throw ShapeError("tile_mother_image needs (H,W,C), got " + shape_str(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (tile == 0 || h < tile || w < tile) {
        throw DataError("image " + shape_str(image.shape()) + " is smaller than one " + std::to_string(tile) + "px tile");
    }
    std::vector<Tile> tiles;
    for (std::size_t r = 0; r < h / tile; ++r) {
        for (std::size_t q = 0; q < w / tile; ++q) {
            Tensor<float> t(Shape{tile, tile, c});
            for (std::size_t y = 0; y < tile; ++y) {
                const float* src = image.raw() + ((r * tile + y) * w + q * tile) * c;
                std::copy(src, src + tile * c, t.raw() + y * tile * c);
            }
            tiles.push_back({r, q, std::move(t)});
        }
    }
    return tiles;
}

inline std::string tile_file_name(const std::string& stem, std::size_t row, std::size_t col) {
    return stem + "_r" + std::to_string(row) + "_c" + std::to_string(col) + ".png";
}

struct DatasetIndex {
    std::filesystem::path root;
    std::vector<std::filesystem::path> cracked;
    std::vector<std::filesystem::path> non_cracked;

    std::size_t count(int label) const { return label == kCracked ? cracked.size() : non_cracked.size(); }
    std::size_t size() const { return cracked.size() + non_cracked.size(); }
};

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) return out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && is_supported_image(e.path())) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline DatasetIndex index_dataset(const std::filesystem::path& root) {
    DatasetIndex idx;
    idx.root = root;
    if (!std::filesystem::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
    idx.cracked = list_images(root / kCrackedDir);
    idx.non_cracked = list_images(root / kNonCrackedDir);
    if (idx.cracked.empty()) throw DataError("empty class directory: " + (root / kCrackedDir).string());
    if (idx.non_cracked.empty()) throw DataError("empty class directory: " + (root / kNonCrackedDir).string());
    return idx;
}

// Resizes to the working resolution when needed.
inline Tensor<float> prepare_image(const Tensor<float>& image, std::size_t size = kWorkingSize) {
    if (image.rank() == 3 && image.dim(0) == size && image.dim(1) == size) return image;
    return resize_bilinear(image, size, size);
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
// handled by exactly one call, so results written per index do not depend on
// scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct LoadedDataset {
    DatasetIndex index;
    std::vector<Sample> samples;  // cracked files first, each class in lexicographic order
    std::size_t skipped = 0;
};

struct LoadOptions {
    std::size_t size = kWorkingSize;
    std::size_t workers = 1;
    std::ostream* log = nullptr;
};

// Decodes every indexed file, resizes to the working resolution and scales
// to [0,1]. Unreadable files are skipped with a warning; a class left empty
// is fatal.
inline LoadedDataset load_dataset(const std::filesystem::path& root, const LoadOptions& opt = {}) {
    LoadedDataset out;
    out.index = index_dataset(root);
    struct Job {
        std::filesystem::path path;
        int label;
    };
    std::vector<Job> jobs;
    for (const auto& p : out.index.cracked) jobs.push_back({p, kCracked});
    for (const auto& p : out.index.non_cracked) jobs.push_back({p, kNonCracked});

    std::vector<Sample> slots(jobs.size());
    std::vector<std::string> failures(jobs.size());
    parallel_for(jobs.size(), opt.workers, [&](std::size_t i) {
        try {
            slots[i].image = prepare_image(read_image(jobs[i].path), opt.size);
            slots[i].label = jobs[i].label;
            slots[i].source_id = jobs[i].path.string();
        } catch (const Error& e) {
            failures[i] = e.what();
        }
    });
    std::size_t per_class[2] = {0, 0};
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (!failures[i].empty()) {
            ++out.skipped;
            if (opt.log) *opt.log << "warning: skipping unreadable file: " << failures[i] << '\n';
            continue;
        }
        ++per_class[slots[i].label];
        out.samples.push_back(std::move(slots[i]));
    }
    if (per_class[kCracked] == 0 || per_class[kNonCracked] == 0) {
        throw DataError("no readable images in class '" +
                        std::string(per_class[kCracked] == 0 ? kCrackedDir : kNonCrackedDir) + "' under " +
                        root.string());
    }
    return out;
}

inline void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples) {
    std::size_t counters[2] = {0, 0};
    for (const auto& s : samples) {
        const std::filesystem::path dir = root / (s.label == kCracked ? kCrackedDir : kNonCrackedDir);
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.png", counters[s.label]++);
        write_png(dir / name, s.image);
    }
}

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

// Seeded stratified split: each class contributes max(1, round(val_frac * n))
// samples to validation, chosen after a per-class shuffle. Train and
// validation are disjoint and together cover every sample.
inline SplitIndices split_indices(const std::vector<int>& labels, double val_frac, std::uint64_t seed) {
    if (!(val_frac > 0.0 && val_frac < 1.0)) throw ConfigError("val_frac must be in (0, 1)");
    SplitIndices out;
    for (int label : {kCracked, kNonCracked}) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == label) members.push_back(i);
        if (members.size() < 2) {
            throw DataError("class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                            " sample(s); stratified split needs at least 2");
        }
        Rng rng(derive_seed(seed, {0x5117u, static_cast<std::uint64_t>(label)}));
        rng.shuffle(members);
        std::size_t n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(members.size())));
        n_val = std::clamp<std::size_t>(n_val, 1, members.size() - 1);
        out.val.insert(out.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
        out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
    }
    return out;
}

inline std::pair<std::vector<Sample>, std::vector<Sample>> split_train_val(const std::vector<Sample>& samples,
                                                                             double val_frac, std::uint64_t seed) {
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.label);
    const SplitIndices idx = split_indices(labels, val_frac, seed);
    std::pair<std::vector<Sample>, std::vector<Sample>> out;
    for (std::size_t i : idx.train) out.first.push_back(samples[i]);
    for (std::size_t i : idx.val) out.second.push_back(samples[i]);
    return out;
}

}  // namespace cracknet
