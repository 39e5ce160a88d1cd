#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "htcnn/ops.hpp"
#include "htcnn/rng.hpp"
#include "htcnn/tensor.hpp"

namespace htcnn {

enum class LayerKind { Conv, SplitConv, ReLU, MaxPool, Flatten, FullyConnected, Dropout };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::SplitConv: return "split-conv";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::FullyConnected: return "fc";
        case LayerKind::Dropout: return "dropout";
    }
    return "?";
}

struct LayerDesc {
    LayerKind kind = LayerKind::ReLU;
    std::string name;               // parameter base name; empty for parameter-free layers
    ConvSpec conv;                  // Conv / SplitConv (out_channels = total over towers)
    std::int64_t towers = 1;        // SplitConv: parallel towers on the same input
    std::int64_t fc_in = 0;
    std::int64_t fc_out = 0;
    std::int64_t pool_window = 2;
    std::int64_t pool_stride = 2;
    double keep_prob = 1.0;         // Dropout
};

// Ordered layer list with named, addressable parameter tensors. A plain value
// type: copy it, mutate the copy, nothing else moves.
struct ModelGraph {
    std::string arch;               // builder tag, stored in checkpoints
    Shape input_shape;              // [C,H,W], without the batch dimension
    std::vector<LayerDesc> layers;
    std::map<std::string, Tensor> params;

    Tensor& param(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw config_error("model has no parameter '" + name + "'");
        return it->second;
    }
    const Tensor& param(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw config_error("model has no parameter '" + name + "'");
        return it->second;
    }
    bool has_param(const std::string& name) const { return params.count(name) != 0; }

    void add_conv(const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
                  std::int64_t filter, std::int64_t stride = 1, std::int64_t padding = 0) {
        LayerDesc d;
        d.kind = LayerKind::Conv;
        d.name = name;
        d.conv = ConvSpec{filter, filter, in_ch, out_ch, stride, padding};
        layers.push_back(d);
        params.emplace(name, Tensor::zeros({out_ch, in_ch, filter, filter}));
        params.emplace(name + ".bias", Tensor::zeros({out_ch}));
    }

    // Two parallel convolutions over the same input, outputs concatenated on
    // the channel axis. Parameters live under <name>.t0 / <name>.t1.
    void add_split_conv(const std::string& name, std::int64_t in_ch, std::int64_t out_ch_per_tower,
                        std::int64_t filter, std::int64_t stride = 1, std::int64_t padding = 0) {
        LayerDesc d;
        d.kind = LayerKind::SplitConv;
        d.name = name;
        d.towers = 2;
        d.conv = ConvSpec{filter, filter, in_ch, 2 * out_ch_per_tower, stride, padding};
        layers.push_back(d);
        for (int t = 0; t < 2; ++t) {
            const std::string tn = name + ".t" + std::to_string(t);
            params.emplace(tn, Tensor::zeros({out_ch_per_tower, in_ch, filter, filter}));
            params.emplace(tn + ".bias", Tensor::zeros({out_ch_per_tower}));
        }
    }

    void add_relu() { layers.push_back(LayerDesc{LayerKind::ReLU}); }

    void add_maxpool(std::int64_t window = 2, std::int64_t stride = 2) {
        LayerDesc d;
        d.kind = LayerKind::MaxPool;
        d.pool_window = window;
        d.pool_stride = stride;
        layers.push_back(d);
    }

    void add_flatten() { layers.push_back(LayerDesc{LayerKind::Flatten}); }

    void add_fc(const std::string& name, std::int64_t in_dim, std::int64_t out_dim) {
        LayerDesc d;
        d.kind = LayerKind::FullyConnected;
        d.name = name;
        d.fc_in = in_dim;
        d.fc_out = out_dim;
        layers.push_back(d);
        params.emplace(name, Tensor::zeros({in_dim, out_dim}));
        params.emplace(name + ".bias", Tensor::zeros({out_dim}));
    }

    void add_dropout(double keep_prob) {
        LayerDesc d;
        d.kind = LayerKind::Dropout;
        d.keep_prob = keep_prob;
        layers.push_back(d);
    }
};

// Propagates the declared input shape through every layer, throwing if any
// two consecutive layers do not compose. Returns the per-layer output shapes
// (without the batch dimension).
inline std::vector<Shape> infer_shapes(const ModelGraph& m) {
    if (m.input_shape.size() != 3) {
        throw config_error("model input shape must be [C,H,W], got " + shape_str(m.input_shape));
    }
    std::vector<Shape> out;
    Shape cur = m.input_shape;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const LayerDesc& l = m.layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) +
                                  (l.name.empty() ? "" : " '" + l.name + "'") + ")";
        switch (l.kind) {
            case LayerKind::Conv:
            case LayerKind::SplitConv: {
                if (cur.size() != 3) throw config_error(where + ": needs [C,H,W] input, got " + shape_str(cur));
                if (cur[0] != l.conv.in_channels) {
                    throw config_error(where + ": input has " + std::to_string(cur[0]) +
                                       " channels, spec expects " + std::to_string(l.conv.in_channels));
                }
                l.conv.validate(cur[1], cur[2]);
                cur = {l.conv.out_channels, l.conv.out_h(cur[1]), l.conv.out_w(cur[2])};
                break;
            }
            case LayerKind::ReLU:
            case LayerKind::Dropout:
                break;
            case LayerKind::MaxPool: {
                if (cur.size() != 3) throw config_error(where + ": needs [C,H,W] input, got " + shape_str(cur));
                if (cur[1] < l.pool_window || cur[2] < l.pool_window) {
                    throw config_error(where + ": window " + std::to_string(l.pool_window) +
                                       " exceeds input " + std::to_string(cur[1]) + "x" +
                                       std::to_string(cur[2]));
                }
                cur = {cur[0], (cur[1] - l.pool_window) / l.pool_stride + 1,
                       (cur[2] - l.pool_window) / l.pool_stride + 1};
                break;
            }
            case LayerKind::Flatten: {
                cur = {numel(cur)};
                break;
            }
            case LayerKind::FullyConnected: {
                if (cur.size() != 1 || cur[0] != l.fc_in) {
                    throw config_error(where + ": expects flat input of " + std::to_string(l.fc_in) +
                                       ", got " + shape_str(cur));
                }
                cur = {l.fc_out};
                break;
            }
        }
        out.push_back(cur);
    }
    return out;
}

struct LayerActivation {
    Tensor out;
    std::vector<std::int64_t> argmax;      // MaxPool
    std::vector<std::uint8_t> mask;        // Dropout
    double keep_prob = 1.0;
};

struct ForwardCache {
    Tensor input;
    std::vector<LayerActivation> acts;
};

namespace detail {

inline Tensor split_conv_forward(const ModelGraph& m, const LayerDesc& l, const Tensor& x) {
    const std::int64_t per_tower = l.conv.out_channels / l.towers;
    ConvSpec tower_spec = l.conv;
    tower_spec.out_channels = per_tower;
    const std::int64_t N = x.shape[0];
    const std::int64_t oh = l.conv.out_h(x.shape[2]);
    const std::int64_t ow = l.conv.out_w(x.shape[3]);
    Tensor out({N, l.conv.out_channels, oh, ow});
    const std::int64_t plane = per_tower * oh * ow;
    for (std::int64_t t = 0; t < l.towers; ++t) {
        const std::string tn = l.name + ".t" + std::to_string(t);
        Tensor part = conv2d_forward(x, m.param(tn), m.param(tn + ".bias"), tower_spec);
        for (std::int64_t n = 0; n < N; ++n) {
            std::memcpy(out.ptr() + (n * l.towers + t) * plane, part.ptr() + n * plane,
                        sizeof(float) * static_cast<std::size_t>(plane));
        }
    }
    return out;
}

inline Tensor split_conv_backward(const ModelGraph& m, const LayerDesc& l, const Tensor& upstream,
                                  const Tensor& input, std::map<std::string, Tensor>& grads) {
    const std::int64_t per_tower = l.conv.out_channels / l.towers;
    ConvSpec tower_spec = l.conv;
    tower_spec.out_channels = per_tower;
    const std::int64_t N = input.shape[0];
    const std::int64_t oh = l.conv.out_h(input.shape[2]);
    const std::int64_t ow = l.conv.out_w(input.shape[3]);
    const std::int64_t plane = per_tower * oh * ow;
    Tensor gx(input.shape);
    Tensor part({N, per_tower, oh, ow});
    for (std::int64_t t = 0; t < l.towers; ++t) {
        for (std::int64_t n = 0; n < N; ++n) {
            std::memcpy(part.ptr() + n * plane, upstream.ptr() + (n * l.towers + t) * plane,
                        sizeof(float) * static_cast<std::size_t>(plane));
        }
        const std::string tn = l.name + ".t" + std::to_string(t);
        ConvGrads<float> g = conv2d_backward(part, input, m.param(tn), tower_spec);
        for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g.input.data[i];
        grads.insert_or_assign(tn, std::move(g.weights));
        grads.insert_or_assign(tn + ".bias", std::move(g.bias));
    }
    return gx;
}

}  // namespace detail

// Runs the graph on a batch [N,C,H,W] and returns the logits. With training
// true, dropout draws masks from rng; cache (if given) records everything
// backward() needs.
inline Tensor forward(const ModelGraph& m, const Tensor& input, bool training = false,
                      Rng* rng = nullptr, ForwardCache* cache = nullptr) {
    if (input.rank() != 4) {
        throw config_error("model forward expects [N,C,H,W] input, got " + shape_str(input.shape));
    }
    if (Shape(input.shape.begin() + 1, input.shape.end()) != m.input_shape) {
        throw config_error("model expects input " + shape_str(m.input_shape) + ", got " +
                           shape_str(input.shape));
    }
    if (cache) {
        cache->input = input;
        cache->acts.clear();
        cache->acts.reserve(m.layers.size());
    }
    Tensor cur = input;
    for (const LayerDesc& l : m.layers) {
        LayerActivation act;
        switch (l.kind) {
            case LayerKind::Conv:
                act.out = conv2d_forward(cur, m.param(l.name), m.param(l.name + ".bias"), l.conv);
                break;
            case LayerKind::SplitConv:
                act.out = detail::split_conv_forward(m, l, cur);
                break;
            case LayerKind::ReLU:
                act.out = relu_forward(cur);
                break;
            case LayerKind::MaxPool: {
                PoolResult<float> r = maxpool2d_forward(cur, l.pool_window, l.pool_stride);
                act.out = std::move(r.output);
                act.argmax = std::move(r.argmax);
                break;
            }
            case LayerKind::Flatten: {
                act.out = cur;
                act.out.shape = {cur.shape[0], numel(cur.shape) / cur.shape[0]};
                break;
            }
            case LayerKind::FullyConnected:
                act.out = fc_forward(cur, m.param(l.name), m.param(l.name + ".bias"));
                break;
            case LayerKind::Dropout: {
                if (training && l.keep_prob < 1.0) {
                    if (!rng) throw config_error("training forward with dropout requires an Rng");
                    DropoutResult<float> r = dropout_forward(cur, l.keep_prob, *rng, true);
                    act.out = std::move(r.output);
                    act.mask = std::move(r.mask);
                } else {
                    act.out = cur;
                }
                act.keep_prob = l.keep_prob;
                break;
            }
        }
        cur = act.out;
        if (cache) cache->acts.push_back(std::move(act));
    }
    return cur;
}

// Reverse pass over a cached forward run; returns gradients keyed like params.
inline std::map<std::string, Tensor> backward(const ModelGraph& m, const ForwardCache& cache,
                                              const Tensor& grad_logits) {
    if (cache.acts.size() != m.layers.size()) {
        throw config_error("forward cache does not match model layer count");
    }
    std::map<std::string, Tensor> grads;
    Tensor g = grad_logits;
    for (std::size_t ri = m.layers.size(); ri-- > 0;) {
        const LayerDesc& l = m.layers[ri];
        const Tensor& layer_input = ri == 0 ? cache.input : cache.acts[ri - 1].out;
        const LayerActivation& act = cache.acts[ri];
        switch (l.kind) {
            case LayerKind::Conv: {
                ConvGrads<float> cg = conv2d_backward(g, layer_input, m.param(l.name), l.conv);
                g = std::move(cg.input);
                grads.insert_or_assign(l.name, std::move(cg.weights));
                grads.insert_or_assign(l.name + ".bias", std::move(cg.bias));
                break;
            }
            case LayerKind::SplitConv:
                g = detail::split_conv_backward(m, l, g, layer_input, grads);
                break;
            case LayerKind::ReLU:
                g = relu_backward(g, layer_input);
                break;
            case LayerKind::MaxPool:
                g = maxpool2d_backward(g, act.argmax, layer_input.shape);
                break;
            case LayerKind::Flatten:
                g.shape = layer_input.shape;
                break;
            case LayerKind::FullyConnected: {
                FcGrads<float> fg = fc_backward(g, layer_input, m.param(l.name));
                g = std::move(fg.input);
                grads.insert_or_assign(l.name, std::move(fg.weights));
                grads.insert_or_assign(l.name + ".bias", std::move(fg.bias));
                break;
            }
            case LayerKind::Dropout:
                if (!act.mask.empty()) {
                    g = dropout_backward(g, act.mask, act.keep_prob);
                }
                break;
        }
    }
    return grads;
}

}  // namespace htcnn
