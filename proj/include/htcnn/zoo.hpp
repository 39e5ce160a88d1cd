#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "htcnn/graph.hpp"
#include "htcnn/rng.hpp"
#include "htcnn/tensor.hpp"

namespace htcnn {

// Knobs shared by the stock architectures. Dropout keep probabilities of 1.0
// disable the corresponding layers entirely.
struct ArchitectureConfig {
    Shape input_shape{3, 32, 32};
    std::int64_t num_classes = 10;
    std::int64_t first_layer_filters = 8;                    // shallow net conv1 width
    std::int64_t shallow_second_filters = 32;
    std::vector<std::int64_t> cloud_filters{32, 32, 64, 64, 128, 128};
    std::int64_t cloud_fc_width = 512;
    std::int64_t filter_size = 3;
    double conv_keep = 1.0;
    double fc_keep = 1.0;
};

// Two 3x3 same-padded conv blocks, one 2x2 pool, one linear classifier head.
// conv1 width is the transplant currency: a bank of these nets donates its
// conv1 filters to the first layer of the deeper net below.
inline ModelGraph build_shallow_cifar(const ArchitectureConfig& cfg) {
    if (cfg.first_layer_filters < 1) {
        throw config_error("shallow net needs at least one first-layer filter, got " +
                           std::to_string(cfg.first_layer_filters));
    }
    const std::int64_t f = cfg.filter_size;
    const std::int64_t pad = (f - 1) / 2;
    ModelGraph m;
    m.arch = "shallow_cifar_f" + std::to_string(cfg.first_layer_filters);
    m.input_shape = cfg.input_shape;
    m.add_conv("conv1", cfg.input_shape[0], cfg.first_layer_filters, f, 1, pad);
    m.add_relu();
    if (cfg.conv_keep < 1.0) m.add_dropout(cfg.conv_keep);
    m.add_conv("conv2", cfg.first_layer_filters, cfg.shallow_second_filters, f, 1, pad);
    m.add_relu();
    if (cfg.conv_keep < 1.0) m.add_dropout(cfg.conv_keep);
    m.add_maxpool(2, 2);
    m.add_flatten();
    const std::int64_t flat =
        cfg.shallow_second_filters * (cfg.input_shape[1] / 2) * (cfg.input_shape[2] / 2);
    m.add_fc("fc1", flat, cfg.num_classes);
    infer_shapes(m);
    return m;
}

inline ModelGraph build_shallow_cifar(std::int64_t first_layer_filters) {
    ArchitectureConfig cfg;
    cfg.first_layer_filters = first_layer_filters;
    return build_shallow_cifar(cfg);
}

// Six 3x3 same-padded convs in three conv-conv-pool stages, then a 512-wide
// hidden linear layer. Its conv1 is the transplant target.
inline ModelGraph build_cloud_cifar(const ArchitectureConfig& cfg) {
    if (cfg.cloud_filters.empty() || cfg.cloud_filters.size() % 2 != 0) {
        throw config_error("cloud net needs an even, non-empty filter list");
    }
    const std::int64_t f = cfg.filter_size;
    const std::int64_t pad = (f - 1) / 2;
    ModelGraph m;
    m.arch = "cloud_cifar";
    m.input_shape = cfg.input_shape;
    std::int64_t in_ch = cfg.input_shape[0];
    std::int64_t h = cfg.input_shape[1];
    std::int64_t w = cfg.input_shape[2];
    for (std::size_t i = 0; i < cfg.cloud_filters.size(); ++i) {
        const std::string name = "conv" + std::to_string(i + 1);
        m.add_conv(name, in_ch, cfg.cloud_filters[i], f, 1, pad);
        m.add_relu();
        if (cfg.conv_keep < 1.0) m.add_dropout(cfg.conv_keep);
        in_ch = cfg.cloud_filters[i];
        if (i % 2 == 1) {
            m.add_maxpool(2, 2);
            h /= 2;
            w /= 2;
        }
    }
    m.add_flatten();
    m.add_fc("fc1", in_ch * h * w, cfg.cloud_fc_width);
    m.add_relu();
    if (cfg.fc_keep < 1.0) m.add_dropout(cfg.fc_keep);
    m.add_fc("fc2", cfg.cloud_fc_width, cfg.num_classes);
    infer_shapes(m);
    return m;
}

inline ModelGraph build_cloud_cifar() { return build_cloud_cifar(ArchitectureConfig{}); }

// Truncated large-input variant: one first layer made of two parallel
// stride-4 towers (11x11 filters, 12 each by default), pool, classifier.
// Exists to exercise tower-wise transplant plumbing, not to be trained far.
inline ModelGraph build_shallow_tower(std::int64_t filter_size = 11,
                                      std::int64_t filters_per_tower = 12,
                                      std::int64_t num_classes = 10) {
    if (filters_per_tower < 1) {
        throw config_error("tower net needs at least one filter per tower, got " +
                           std::to_string(filters_per_tower));
    }
    ModelGraph m;
    m.arch = "shallow_tower_f" + std::to_string(2 * filters_per_tower);
    m.input_shape = {3, 227, 227};
    m.add_split_conv("conv1", 3, filters_per_tower, filter_size, 4, 0);
    m.add_relu();
    m.add_maxpool(3, 2);
    m.add_flatten();
    const std::int64_t side = (227 - filter_size) / 4 + 1;       // 55 for 11x11 stride 4
    const std::int64_t pooled = (side - 3) / 2 + 1;              // 27
    m.add_fc("fc1", 2 * filters_per_tower * pooled * pooled, num_classes);
    infer_shapes(m);
    return m;
}

// Gaussian weights with variance 2/fan_in, zero biases. Layers are visited in
// graph order so a given seed always produces the same parameters.
inline void init_random(ModelGraph& model, Rng& rng) {
    auto fill = [&rng](Tensor& w, std::int64_t fan_in) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (float& v : w.data) v = static_cast<float>(rng.normal(0.0, stddev));
    };
    for (const LayerDesc& l : model.layers) {
        switch (l.kind) {
            case LayerKind::Conv: {
                const std::int64_t fan_in = l.conv.in_channels * l.conv.filter_h * l.conv.filter_w;
                fill(model.param(l.name), fan_in);
                break;
            }
            case LayerKind::SplitConv: {
                const std::int64_t fan_in = l.conv.in_channels * l.conv.filter_h * l.conv.filter_w;
                for (std::int64_t t = 0; t < l.towers; ++t) {
                    fill(model.param(l.name + ".t" + std::to_string(t)), fan_in);
                }
                break;
            }
            case LayerKind::FullyConnected:
                fill(model.param(l.name), l.fc_in);
                break;
            default:
                break;
        }
    }
}

}  // namespace htcnn
