#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "htcnn/rng.hpp"
#include "htcnn/tensor.hpp"

namespace htcnn {

struct Dataset {
    std::string name;
    Tensor images;                       // [N,C,H,W]
    std::vector<std::int32_t> labels;
    std::int64_t num_classes = 10;

    std::int64_t size() const { return images.size() == 0 ? 0 : images.shape[0]; }

    Shape item_shape() const {
        if (images.rank() != 4) throw config_error("dataset images must be [N,C,H,W]");
        return Shape(images.shape.begin() + 1, images.shape.end());
    }

    void validate() const {
        if (images.rank() != 4) throw data_error("dataset images must be [N,C,H,W]");
        if (static_cast<std::int64_t>(labels.size()) != images.shape[0]) {
            throw data_error("dataset '" + name + "' has " + std::to_string(images.shape[0]) +
                             " images but " + std::to_string(labels.size()) + " labels");
        }
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes) {
                throw data_error("dataset '" + name + "' label " + std::to_string(labels[i]) +
                                 " at record " + std::to_string(i) + " outside [0," +
                                 std::to_string(num_classes) + ")");
            }
        }
    }
};

struct Batch {
    Tensor images;
    std::vector<std::int32_t> labels;
};

inline Batch gather(const Dataset& ds, const std::vector<std::int64_t>& indices) {
    const Shape item = ds.item_shape();
    const std::int64_t stride = numel(item);
    Batch b;
    b.images = Tensor({static_cast<std::int64_t>(indices.size()), item[0], item[1], item[2]});
    b.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::int64_t idx = indices[i];
        if (idx < 0 || idx >= ds.size()) {
            throw data_error("batch index " + std::to_string(idx) + " outside dataset of " +
                             std::to_string(ds.size()));
        }
        std::copy_n(ds.images.ptr() + idx * stride, stride, b.images.ptr() + i * stride);
        b.labels[i] = ds.labels[idx];
    }
    return b;
}

inline std::vector<std::int64_t> class_counts(const Dataset& ds) {
    std::vector<std::int64_t> counts(ds.num_classes, 0);
    for (std::int32_t l : ds.labels) {
        if (l < 0 || l >= ds.num_classes) {
            throw data_error("label " + std::to_string(l) + " outside [0," +
                             std::to_string(ds.num_classes) + ")");
        }
        ++counts[l];
    }
    return counts;
}

namespace detail {

constexpr std::int64_t kCifarRecordBytes = 3073;       // 1 label + 3*32*32 pixels
constexpr std::int64_t kCifarRecordsPerFile = 10000;
constexpr std::int64_t kCifarFileBytes = kCifarRecordBytes * kCifarRecordsPerFile;  // 30,730,000

inline void read_cifar_file(const std::filesystem::path& path, Dataset& out, std::int64_t offset) {
    std::error_code ec;
    const auto actual = std::filesystem::file_size(path, ec);
    if (ec) throw data_error("missing CIFAR-10 batch file: " + path.string());
    if (static_cast<std::int64_t>(actual) != kCifarFileBytes) {
        throw data_error("CIFAR-10 batch file " + path.string() + " is " + std::to_string(actual) +
                         " bytes, expected " + std::to_string(kCifarFileBytes));
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open CIFAR-10 batch file: " + path.string());
    std::vector<unsigned char> record(kCifarRecordBytes);
    const std::int64_t pixels = kCifarRecordBytes - 1;
    for (std::int64_t r = 0; r < kCifarRecordsPerFile; ++r) {
        if (!in.read(reinterpret_cast<char*>(record.data()), kCifarRecordBytes)) {
            throw data_error("truncated CIFAR-10 batch file " + path.string() + " at record " +
                             std::to_string(r));
        }
        if (record[0] > 9) {
            throw data_error("CIFAR-10 label " + std::to_string(record[0]) + " at record " +
                             std::to_string(r) + " of " + path.string());
        }
        out.labels[offset + r] = record[0];
        float* dst = out.images.ptr() + (offset + r) * pixels;
        for (std::int64_t p = 0; p < pixels; ++p) {
            dst[p] = static_cast<float>(record[1 + p]) / 255.0f;
        }
    }
}

}  // namespace detail

struct CifarData {
    Dataset train;
    Dataset test;
};

// Standard CIFAR-10 binary layout: five training batch files plus one test
// batch file, each a run of 10,000 records of (label byte, 3072 pixel bytes
// in channel-planar order). Pixels come out scaled to [0,1].
inline CifarData load_cifar10(const std::string& directory) {
    namespace fs = std::filesystem;
    CifarData d;
    d.train.name = "cifar10-train";
    d.train.images = Tensor::zeros({50000, 3, 32, 32});
    d.train.labels.assign(50000, 0);
    for (int i = 1; i <= 5; ++i) {
        detail::read_cifar_file(fs::path(directory) / ("data_batch_" + std::to_string(i) + ".bin"),
                                d.train, (i - 1) * detail::kCifarRecordsPerFile);
    }
    d.test.name = "cifar10-test";
    d.test.images = Tensor::zeros({10000, 3, 32, 32});
    d.test.labels.assign(10000, 0);
    detail::read_cifar_file(fs::path(directory) / "test_batch.bin", d.test, 0);
    return d;
}

// Writes a dataset in the CIFAR-10 binary record layout (label byte followed
// by 3072 channel-planar pixel bytes). Pixels are mapped back to bytes by
// rounding v*255, which inverts the loader's scaling exactly.
inline void write_cifar_batch(const Dataset& ds, const std::string& path) {
    ds.validate();
    if (ds.item_shape() != Shape{3, 32, 32}) {
        throw data_error("CIFAR batch writer needs [3,32,32] items, got " +
                         shape_str(ds.images.shape));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot write CIFAR batch file: " + path);
    const std::int64_t pixels = 3 * 32 * 32;
    std::vector<unsigned char> record(1 + pixels);
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        record[0] = static_cast<unsigned char>(ds.labels[i]);
        const float* src = ds.images.ptr() + i * pixels;
        for (std::int64_t p = 0; p < pixels; ++p) {
            const float v = std::clamp(src[p], 0.0f, 1.0f);
            record[1 + p] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        out.write(reinterpret_cast<const char*>(record.data()),
                  static_cast<std::streamsize>(record.size()));
    }
    if (!out) throw data_error("short write on CIFAR batch file: " + path);
}

// Deals each class's (seeded-shuffled) indices round-robin into k subsets, so
// per-class counts differ by at most 1 across subsets and the union is the
// exact input multiset.
inline std::vector<Dataset> stratified_split(const Dataset& ds, std::int64_t k, std::uint64_t seed) {
    if (k < 1) throw config_error("stratified split needs k >= 1, got " + std::to_string(k));
    ds.validate();
    std::vector<std::vector<std::int64_t>> by_class(ds.num_classes);
    for (std::int64_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

    std::vector<std::vector<std::int64_t>> subset_indices(k);
    for (std::int64_t c = 0; c < ds.num_classes; ++c) {
        Rng rng(mix_seed(seed, "stratified-split", c));
        rng.shuffle(by_class[c]);
        const std::int64_t n = static_cast<std::int64_t>(by_class[c].size());
        const std::int64_t base = n / k;
        const std::int64_t extra = n % k;
        std::int64_t pos = 0;
        for (std::int64_t s = 0; s < k; ++s) {
            // rotate which subsets absorb the remainder so totals stay even too
            std::int64_t take = base + (((s - c) % k + k) % k < extra ? 1 : 0);
            for (std::int64_t j = 0; j < take; ++j) subset_indices[s].push_back(by_class[c][pos++]);
        }
    }
    std::vector<Dataset> out;
    out.reserve(k);
    for (std::int64_t s = 0; s < k; ++s) {
        std::sort(subset_indices[s].begin(), subset_indices[s].end());
        Batch b = gather(ds, subset_indices[s]);
        Dataset sub;
        sub.name = ds.name + "/subset" + std::to_string(s + 1);
        sub.images = std::move(b.images);
        sub.labels = std::move(b.labels);
        sub.num_classes = ds.num_classes;
        out.push_back(std::move(sub));
    }
    return out;
}

// Stratified sample of `total` items (per-class quotas within ±1).
inline Dataset stratified_subset(const Dataset& ds, std::int64_t total, std::uint64_t seed) {
    ds.validate();
    if (total < 1 || total > ds.size()) {
        throw config_error("stratified subset of " + std::to_string(total) + " from dataset of " +
                           std::to_string(ds.size()));
    }
    std::vector<std::vector<std::int64_t>> by_class(ds.num_classes);
    for (std::int64_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
    const std::int64_t base = total / ds.num_classes;
    const std::int64_t extra = total % ds.num_classes;
    std::vector<std::int64_t> picked;
    for (std::int64_t c = 0; c < ds.num_classes; ++c) {
        Rng rng(mix_seed(seed, "stratified-subset", c));
        rng.shuffle(by_class[c]);
        const std::int64_t quota = base + (c < extra ? 1 : 0);
        if (quota > static_cast<std::int64_t>(by_class[c].size())) {
            throw data_error("class " + std::to_string(c) + " has only " +
                             std::to_string(by_class[c].size()) + " items, need " +
                             std::to_string(quota));
        }
        picked.insert(picked.end(), by_class[c].begin(), by_class[c].begin() + quota);
    }
    std::sort(picked.begin(), picked.end());
    Batch b = gather(ds, picked);
    Dataset sub;
    sub.name = ds.name + "/sub" + std::to_string(total);
    sub.images = std::move(b.images);
    sub.labels = std::move(b.labels);
    sub.num_classes = ds.num_classes;
    return sub;
}

// Subtracts the per-pixel mean of the training images from both sets and
// returns that mean image. The mean comes from train only.
inline Tensor preprocess_mean_subtract(Dataset& train, Dataset& test) {
    train.validate();
    test.validate();
    if (train.item_shape() != test.item_shape()) {
        throw data_error("train/test item shapes differ: " + shape_str(train.images.shape) +
                         " vs " + shape_str(test.images.shape));
    }
    const Shape item = train.item_shape();
    const std::int64_t stride = numel(item);
    const std::int64_t n = train.size();
    if (n == 0) throw data_error("cannot compute mean image of an empty training set");
    std::vector<double> acc(stride, 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const float* src = train.images.ptr() + i * stride;
        for (std::int64_t p = 0; p < stride; ++p) acc[p] += src[p];
    }
    Tensor mean(item);
    for (std::int64_t p = 0; p < stride; ++p) {
        mean.data[p] = static_cast<float>(acc[p] / static_cast<double>(n));
    }
    auto apply = [&](Dataset& ds) {
        for (std::int64_t i = 0; i < ds.size(); ++i) {
            float* dst = ds.images.ptr() + i * stride;
            for (std::int64_t p = 0; p < stride; ++p) dst[p] -= mean.data[p];
        }
    };
    apply(train);
    apply(test);
    return mean;
}

// Index order for one epoch: a seeded shuffle keyed on (seed, epoch).
inline std::vector<std::int64_t> epoch_order(std::int64_t n, std::uint64_t seed, std::int64_t epoch) {
    std::vector<std::int64_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::int64_t{0});
    Rng rng(mix_seed(seed, "minibatch-epoch", epoch));
    rng.shuffle(idx);
    return idx;
}

// Batches for one epoch: full shuffle partitioned into fixed-size batches,
// short tail dropped.
inline std::vector<std::vector<std::int64_t>> minibatch_iter(const Dataset& ds,
                                                             std::int64_t batch_size,
                                                             std::uint64_t seed, std::int64_t epoch) {
    if (batch_size < 1 || batch_size > ds.size()) {
        throw config_error("batch size " + std::to_string(batch_size) + " invalid for dataset of " +
                           std::to_string(ds.size()));
    }
    std::vector<std::int64_t> idx = epoch_order(ds.size(), seed, epoch);
    const std::int64_t nb = ds.size() / batch_size;
    std::vector<std::vector<std::int64_t>> batches(nb);
    for (std::int64_t b = 0; b < nb; ++b) {
        batches[b].assign(idx.begin() + b * batch_size, idx.begin() + (b + 1) * batch_size);
    }
    return batches;
}

// Stateful wrapper over minibatch_iter for open-ended iteration-count training:
// walks epoch 0,1,2,... reshuffling at each boundary.
class BatchStream {
public:
    BatchStream(const Dataset& ds, std::int64_t batch_size, std::uint64_t seed)
        : ds_(&ds), batch_size_(batch_size), seed_(seed) {
        if (batch_size < 1 || batch_size > ds.size()) {
            throw config_error("batch size " + std::to_string(batch_size) +
                               " invalid for dataset of " + std::to_string(ds.size()));
        }
    }

    Batch next() {
        if (cursor_ >= static_cast<std::int64_t>(epoch_batches_.size())) {
            epoch_batches_ = minibatch_iter(*ds_, batch_size_, seed_, epoch_++);
            cursor_ = 0;
        }
        return gather(*ds_, epoch_batches_[cursor_++]);
    }

    // Indices of the next batch without consuming it.
    std::vector<std::int64_t> peek_indices() {
        if (cursor_ >= static_cast<std::int64_t>(epoch_batches_.size())) {
            epoch_batches_ = minibatch_iter(*ds_, batch_size_, seed_, epoch_++);
            cursor_ = 0;
        }
        return epoch_batches_[cursor_];
    }

private:
    const Dataset* ds_;
    std::int64_t batch_size_;
    std::uint64_t seed_;
    std::int64_t epoch_ = 0;
    std::vector<std::vector<std::int64_t>> epoch_batches_;
    std::int64_t cursor_ = 0;
};

// Synthetic stand-in for CIFAR-scale experiments: each class is a smooth
// field of Gaussian bumps; samples add a circular shift and pixel noise.
struct SyntheticSpec {
    std::int64_t num_train = 5000;
    std::int64_t num_test = 1000;
    std::int64_t classes = 10;
    std::int64_t channels = 3;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t blobs_per_class = 3;
    double amplitude = 0.6;       // bump strength range [-amplitude, amplitude]
    double noise = 0.25;          // per-pixel Gaussian noise stddev
    std::int64_t max_shift = 2;   // circular shift radius per sample
    std::uint64_t seed = 7;
};

namespace detail {

struct BlobField {
    std::vector<float> pixels;    // [C,H,W] prototype
};

inline std::vector<BlobField> make_prototypes(const SyntheticSpec& s, Rng& rng) {
    std::vector<BlobField> protos(s.classes);
    for (std::int64_t c = 0; c < s.classes; ++c) {
        BlobField& f = protos[c];
        f.pixels.assign(static_cast<std::size_t>(s.channels * s.height * s.width), 0.5f);
        for (std::int64_t b = 0; b < s.blobs_per_class; ++b) {
            const double cy = rng.uniform() * s.height;
            const double cx = rng.uniform() * s.width;
            const double r = 2.0 + rng.uniform() * 6.0;
            std::vector<double> amp(s.channels);
            for (std::int64_t ch = 0; ch < s.channels; ++ch) {
                amp[ch] = (rng.uniform() * 2.0 - 1.0) * s.amplitude;
            }
            for (std::int64_t ch = 0; ch < s.channels; ++ch) {
                for (std::int64_t y = 0; y < s.height; ++y) {
                    for (std::int64_t x = 0; x < s.width; ++x) {
                        // nearest periodic image of the bump center keeps shifts seamless
                        double dy = std::abs(y - cy);
                        dy = std::min(dy, s.height - dy);
                        double dx = std::abs(x - cx);
                        dx = std::min(dx, s.width - dx);
                        const double g = amp[ch] * std::exp(-(dy * dy + dx * dx) / (2.0 * r * r));
                        f.pixels[static_cast<std::size_t>((ch * s.height + y) * s.width + x)] +=
                            static_cast<float>(g);
                    }
                }
            }
        }
    }
    return protos;
}

inline void render_samples(const SyntheticSpec& s, const std::vector<BlobField>& protos,
                           Dataset& ds, Rng& rng) {
    const std::int64_t plane = s.height * s.width;
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        const std::int32_t label = static_cast<std::int32_t>(i % s.classes);
        ds.labels[i] = label;
        const BlobField& f = protos[label];
        const std::int64_t span = 2 * s.max_shift + 1;
        const std::int64_t dy = s.max_shift > 0 ? static_cast<std::int64_t>(rng.bounded(
                                                      static_cast<std::uint64_t>(span))) - s.max_shift
                                                : 0;
        const std::int64_t dx = s.max_shift > 0 ? static_cast<std::int64_t>(rng.bounded(
                                                      static_cast<std::uint64_t>(span))) - s.max_shift
                                                : 0;
        float* dst = ds.images.ptr() + i * s.channels * plane;
        for (std::int64_t ch = 0; ch < s.channels; ++ch) {
            for (std::int64_t y = 0; y < s.height; ++y) {
                const std::int64_t sy = ((y + dy) % s.height + s.height) % s.height;
                for (std::int64_t x = 0; x < s.width; ++x) {
                    const std::int64_t sx = ((x + dx) % s.width + s.width) % s.width;
                    double v = f.pixels[static_cast<std::size_t>((ch * s.height + sy) * s.width + sx)];
                    v += s.noise * rng.normal();
                    dst[(ch * s.height + y) * s.width + x] =
                        static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }
}

}  // namespace detail

inline CifarData make_synthetic(const SyntheticSpec& spec) {
    if (spec.classes < 2 || spec.num_train < spec.classes || spec.num_test < spec.classes) {
        throw config_error("synthetic dataset needs >=2 classes and at least one sample per class");
    }
    Rng rng(mix_seed(spec.seed, "synthetic", 0));
    const std::vector<detail::BlobField> protos = detail::make_prototypes(spec, rng);
    CifarData d;
    d.train.name = "synthetic-train";
    d.train.images = Tensor::zeros({spec.num_train, spec.channels, spec.height, spec.width});
    d.train.labels.assign(spec.num_train, 0);
    d.train.num_classes = spec.classes;
    d.test.name = "synthetic-test";
    d.test.images = Tensor::zeros({spec.num_test, spec.channels, spec.height, spec.width});
    d.test.labels.assign(spec.num_test, 0);
    d.test.num_classes = spec.classes;
    detail::render_samples(spec, protos, d.train, rng);
    detail::render_samples(spec, protos, d.test, rng);
    return d;
}

}  // namespace htcnn
