#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "htcnn/rng.hpp"
#include "htcnn/tensor.hpp"

// Forward/backward kernels for every layer kind the architectures use.
// All kernels are pure functions of their inputs (plus an explicit Rng where
// randomness is involved): identical inputs and RNG state give bitwise
// identical outputs. Convolution and the fully connected layer lower to GEMM.

namespace htcnn {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvSpec {
    std::int64_t filter_h = 3;
    std::int64_t filter_w = 3;
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    std::int64_t stride = 1;
    std::int64_t padding = 0;

    std::int64_t out_h(std::int64_t in_h) const {
        return (in_h + 2 * padding - filter_h) / stride + 1;
    }
    std::int64_t out_w(std::int64_t in_w) const {
        return (in_w + 2 * padding - filter_w) / stride + 1;
    }

    void validate(std::int64_t in_h, std::int64_t in_w) const {
        if (filter_h < 1 || filter_w < 1) throw config_error("conv filter dims must be >= 1");
        if (stride < 1) throw config_error("conv stride must be >= 1");
        if (padding < 0) throw config_error("conv padding must be >= 0");
        if (out_h(in_h) < 1 || out_w(in_w) < 1) {
            throw config_error("conv output would be empty: input " + std::to_string(in_h) + "x" +
                               std::to_string(in_w) + ", filter " + std::to_string(filter_h) + "x" +
                               std::to_string(filter_w) + ", stride " + std::to_string(stride) +
                               ", padding " + std::to_string(padding));
        }
    }
};

namespace detail {

// Unpacks one image [C,H,W] into patch columns of a row-major matrix with row
// pitch `pitch` >= P = out_h*out_w (several images can share one matrix side
// by side). Row k = (c*fh + kh)*fw + kw matches the flattened weight layout,
// so conv becomes W[F x K] * cols[K x P].
template <typename T>
void im2col(const T* img, std::int64_t C, std::int64_t H, std::int64_t W, const ConvSpec& spec,
            T* cols, std::int64_t pitch) {
    const std::int64_t oh = spec.out_h(H);
    const std::int64_t ow = spec.out_w(W);
    for (std::int64_t c = 0; c < C; ++c) {
        const T* chan = img + c * H * W;
        for (std::int64_t kh = 0; kh < spec.filter_h; ++kh) {
            for (std::int64_t kw = 0; kw < spec.filter_w; ++kw) {
                T* row = cols + ((c * spec.filter_h + kh) * spec.filter_w + kw) * pitch;
                for (std::int64_t ho = 0; ho < oh; ++ho) {
                    const std::int64_t hi = ho * spec.stride - spec.padding + kh;
                    T* dst = row + ho * ow;
                    if (hi < 0 || hi >= H) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = chan + hi * W;
                    if (spec.stride == 1) {
                        const std::int64_t wi0 = kw - spec.padding;  // wi = wo + wi0
                        const std::int64_t lo = std::max<std::int64_t>(0, -wi0);
                        const std::int64_t hi_w = std::min<std::int64_t>(ow, W - wi0);
                        if (lo > 0) std::fill(dst, dst + std::min(lo, ow), T(0));
                        if (hi_w > lo) std::memcpy(dst + lo, src + lo + wi0, sizeof(T) * (hi_w - lo));
                        if (hi_w < ow) std::fill(dst + std::max<std::int64_t>(hi_w, 0), dst + ow, T(0));
                    } else {
                        for (std::int64_t wo = 0; wo < ow; ++wo) {
                            const std::int64_t wi = wo * spec.stride - spec.padding + kw;
                            dst[wo] = (wi >= 0 && wi < W) ? src[wi] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of patch columns back onto an image; adjoint of im2col.
template <typename T>
void col2im_add(const T* cols, std::int64_t C, std::int64_t H, std::int64_t W, const ConvSpec& spec,
                T* img, std::int64_t pitch) {
    const std::int64_t oh = spec.out_h(H);
    const std::int64_t ow = spec.out_w(W);
    for (std::int64_t c = 0; c < C; ++c) {
        T* chan = img + c * H * W;
        for (std::int64_t kh = 0; kh < spec.filter_h; ++kh) {
            for (std::int64_t kw = 0; kw < spec.filter_w; ++kw) {
                const T* row = cols + ((c * spec.filter_h + kh) * spec.filter_w + kw) * pitch;
                for (std::int64_t ho = 0; ho < oh; ++ho) {
                    const std::int64_t hi = ho * spec.stride - spec.padding + kh;
                    if (hi < 0 || hi >= H) continue;
                    const T* src = row + ho * ow;
                    T* dst = chan + hi * W;
                    if (spec.stride == 1) {
                        const std::int64_t wi0 = kw - spec.padding;  // wi = wo + wi0
                        const std::int64_t lo = std::max<std::int64_t>(0, -wi0);
                        const std::int64_t hi_w = std::min<std::int64_t>(ow, W - wi0);
                        for (std::int64_t wo = lo; wo < hi_w; ++wo) dst[wo + wi0] += src[wo];
                    } else {
                        for (std::int64_t wo = 0; wo < ow; ++wo) {
                            const std::int64_t wi = wo * spec.stride - spec.padding + kw;
                            if (wi >= 0 && wi < W) dst[wi] += src[wo];
                        }
                    }
                }
            }
        }
    }
}

inline void check_conv_shapes(const Shape& x, const Shape& w, const Shape& b, const ConvSpec& spec) {
    if (x.size() != 4) throw config_error("conv input must be rank 4 [N,C,H,W], got " + shape_str(x));
    if (w.size() != 4) throw config_error("conv weights must be rank 4 [F,C,fh,fw], got " + shape_str(w));
    if (x[1] != spec.in_channels) {
        throw config_error("conv input channels " + std::to_string(x[1]) +
                           " != spec.in_channels " + std::to_string(spec.in_channels));
    }
    if (w[1] != spec.in_channels) {
        throw config_error("conv weight channels " + std::to_string(w[1]) +
                           " != spec.in_channels " + std::to_string(spec.in_channels));
    }
    if (w[0] != spec.out_channels) {
        throw config_error("conv weight filter count " + std::to_string(w[0]) +
                           " != spec.out_channels " + std::to_string(spec.out_channels));
    }
    if (w[2] != spec.filter_h || w[3] != spec.filter_w) {
        throw config_error("conv weight spatial dims " + std::to_string(w[2]) + "x" +
                           std::to_string(w[3]) + " != spec filter " + std::to_string(spec.filter_h) +
                           "x" + std::to_string(spec.filter_w));
    }
    if (b.size() != 1 || b[0] != spec.out_channels) {
        throw config_error("conv bias must be [" + std::to_string(spec.out_channels) + "], got " +
                           shape_str(b));
    }
    spec.validate(x[2], x[3]);
}

// Images per GEMM: pack as many as fit a ~16MB column workspace. Larger
// GEMMs amortize much better than per-image ones on a single core.
inline std::int64_t conv_chunk_images(std::int64_t N, std::int64_t K, std::int64_t P) {
    constexpr std::int64_t kBudgetFloats = std::int64_t{1} << 22;
    const std::int64_t per_image = K * P;
    return std::clamp<std::int64_t>(per_image > 0 ? kBudgetFloats / per_image : N, 1, N);
}

}  // namespace detail

// Cross-correlation (no kernel flip) plus per-filter bias.
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                          const ConvSpec& spec) {
    detail::check_conv_shapes(input.shape, weights.shape, bias.shape, spec);
    const std::int64_t N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    const std::int64_t F = spec.out_channels;
    const std::int64_t oh = spec.out_h(H), ow = spec.out_w(W);
    const std::int64_t K = C * spec.filter_h * spec.filter_w;
    const std::int64_t P = oh * ow;

    TensorT<T> out({N, F, oh, ow});
    const std::int64_t G = detail::conv_chunk_images(N, K, P);
    std::vector<T> cols(static_cast<std::size_t>(K * G * P));
    std::vector<T> prod(static_cast<std::size_t>(F * G * P));
    Eigen::Map<const MatRM<T>> wm(weights.ptr(), F, K);
    for (std::int64_t n0 = 0; n0 < N; n0 += G) {
        const std::int64_t g = std::min(G, N - n0);
        for (std::int64_t j = 0; j < g; ++j) {
            detail::im2col(input.ptr() + (n0 + j) * C * H * W, C, H, W, spec,
                           cols.data() + j * P, g * P);
        }
        Eigen::Map<const MatRM<T>> cm(cols.data(), K, g * P);
        Eigen::Map<MatRM<T>> pm(prod.data(), F, g * P);
        pm.noalias() = wm * cm;
        // un-interleave [F x g*P] rows into per-image [F x P] blocks, adding bias
        for (std::int64_t j = 0; j < g; ++j) {
            for (std::int64_t f = 0; f < F; ++f) {
                const T* src = prod.data() + f * g * P + j * P;
                T* dst = out.ptr() + ((n0 + j) * F + f) * P;
                const T b = bias[f];
                for (std::int64_t p = 0; p < P; ++p) dst[p] = src[p] + b;
            }
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    TensorT<T> input;
    TensorT<T> weights;
    TensorT<T> bias;
};

// Exact reverse-mode gradients of conv2d_forward.
template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& upstream, const TensorT<T>& input,
                             const TensorT<T>& weights, const ConvSpec& spec) {
    detail::check_conv_shapes(input.shape, weights.shape, Shape{spec.out_channels}, spec);
    const std::int64_t N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    const std::int64_t F = spec.out_channels;
    const std::int64_t oh = spec.out_h(H), ow = spec.out_w(W);
    const Shape expect_up{N, F, oh, ow};
    if (upstream.shape != expect_up) {
        throw config_error("conv upstream grad shape " + shape_str(upstream.shape) +
                           " != forward output shape " + shape_str(expect_up));
    }
    const std::int64_t K = C * spec.filter_h * spec.filter_w;
    const std::int64_t P = oh * ow;

    ConvGrads<T> g{TensorT<T>({N, C, H, W}), TensorT<T>({F, C, spec.filter_h, spec.filter_w}),
                   TensorT<T>({F})};
    const std::int64_t G = detail::conv_chunk_images(N, K, P);
    std::vector<T> cols(static_cast<std::size_t>(K * G * P));
    std::vector<T> gcols(static_cast<std::size_t>(K * G * P));
    std::vector<T> gy(static_cast<std::size_t>(F * G * P));

    Eigen::Map<const MatRM<T>> wm(weights.ptr(), F, K);
    Eigen::Map<MatRM<T>> gwm(g.weights.ptr(), F, K);
    for (std::int64_t n0 = 0; n0 < N; n0 += G) {
        const std::int64_t g_imgs = std::min(G, N - n0);
        // interleave per-image upstream blocks into one [F x g*P] matrix
        for (std::int64_t j = 0; j < g_imgs; ++j) {
            for (std::int64_t f = 0; f < F; ++f) {
                std::memcpy(gy.data() + f * g_imgs * P + j * P,
                            upstream.ptr() + ((n0 + j) * F + f) * P,
                            sizeof(T) * static_cast<std::size_t>(P));
            }
        }
        for (std::int64_t j = 0; j < g_imgs; ++j) {
            detail::im2col(input.ptr() + (n0 + j) * C * H * W, C, H, W, spec,
                           cols.data() + j * P, g_imgs * P);
        }
        Eigen::Map<const MatRM<T>> gym(gy.data(), F, g_imgs * P);
        Eigen::Map<const MatRM<T>> cm(cols.data(), K, g_imgs * P);
        gwm.noalias() += gym * cm.transpose();   // accumulates in batch-chunk order

        Eigen::Map<MatRM<T>> gcm(gcols.data(), K, g_imgs * P);
        gcm.noalias() = wm.transpose() * gym;
        for (std::int64_t j = 0; j < g_imgs; ++j) {
            detail::col2im_add(gcols.data() + j * P, C, H, W, spec,
                               g.input.ptr() + (n0 + j) * C * H * W, g_imgs * P);
        }

        for (std::int64_t f = 0; f < F; ++f) {
            T acc = T(0);
            const T* row = gy.data() + f * g_imgs * P;
            for (std::int64_t p = 0; p < g_imgs * P; ++p) acc += row[p];
            g.bias[f] += acc;
        }
    }
    return g;
}

template <typename T>
struct PoolResult {
    TensorT<T> output;
    // Flat index into the input tensor of each output cell's max.
    std::vector<std::int64_t> argmax;
};

// Max pooling; ties break to the lowest flat index so backward is deterministic.
template <typename T>
PoolResult<T> maxpool2d_forward(const TensorT<T>& input, std::int64_t window, std::int64_t stride) {
    if (input.rank() != 4) {
        throw config_error("maxpool input must be rank 4 [N,C,H,W], got " + shape_str(input.shape));
    }
    if (window < 1 || stride < 1) throw config_error("maxpool window and stride must be >= 1");
    const std::int64_t N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    if (H < window || W < window) {
        throw config_error("maxpool window " + std::to_string(window) + " exceeds input " +
                           std::to_string(H) + "x" + std::to_string(W));
    }
    const std::int64_t oh = (H - window) / stride + 1;
    const std::int64_t ow = (W - window) / stride + 1;

    PoolResult<T> r{TensorT<T>({N, C, oh, ow}), {}};
    r.argmax.resize(static_cast<std::size_t>(N * C * oh * ow));
    std::int64_t o = 0;
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t c = 0; c < C; ++c) {
            const T* chan = input.ptr() + (n * C + c) * H * W;
            const std::int64_t chan_base = (n * C + c) * H * W;
            for (std::int64_t ho = 0; ho < oh; ++ho) {
                for (std::int64_t wo = 0; wo < ow; ++wo) {
                    const std::int64_t h0 = ho * stride, w0 = wo * stride;
                    T best = chan[h0 * W + w0];
                    std::int64_t best_idx = h0 * W + w0;
                    for (std::int64_t kh = 0; kh < window; ++kh) {
                        const T* row = chan + (h0 + kh) * W + w0;
                        for (std::int64_t kw = 0; kw < window; ++kw) {
                            if (row[kw] > best) {
                                best = row[kw];
                                best_idx = (h0 + kh) * W + w0 + kw;
                            }
                        }
                    }
                    r.output[o] = best;
                    r.argmax[static_cast<std::size_t>(o)] = chan_base + best_idx;
                    ++o;
                }
            }
        }
    }
    return r;
}

// Routes upstream gradient to the stored argmax positions.
template <typename T>
TensorT<T> maxpool2d_backward(const TensorT<T>& upstream, const std::vector<std::int64_t>& argmax,
                              const Shape& input_shape) {
    if (upstream.data.size() != argmax.size()) {
        throw config_error("maxpool backward: upstream size does not match argmax record");
    }
    TensorT<T> gx(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        gx[argmax[i]] += upstream.data[i];
    }
    return gx;
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& input) {
    TensorT<T> out;
    out.shape = input.shape;
    out.data.resize(input.data.size());
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        out.data[i] = input.data[i] > T(0) ? input.data[i] : T(0);
    }
    return out;
}

// Subgradient at 0 is 0.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& upstream, const TensorT<T>& input) {
    if (!upstream.same_shape(input)) throw config_error("relu backward shape mismatch");
    TensorT<T> gx;
    gx.shape = input.shape;
    gx.data.resize(input.data.size());
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        gx.data[i] = input.data[i] > T(0) ? upstream.data[i] : T(0);
    }
    return gx;
}

// y = x * w + b for x [N,D], w [D,K], b [K].
template <typename T>
TensorT<T> fc_forward(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias) {
    if (input.rank() != 2 || weights.rank() != 2) {
        throw config_error("fc expects input [N,D] and weights [D,K], got " + shape_str(input.shape) +
                           " and " + shape_str(weights.shape));
    }
    const std::int64_t N = input.shape[0], D = input.shape[1];
    const std::int64_t K = weights.shape[1];
    if (weights.shape[0] != D) {
        throw config_error("fc weights first dim " + std::to_string(weights.shape[0]) +
                           " != input feature dim " + std::to_string(D));
    }
    if (bias.shape != Shape{K}) {
        throw config_error("fc bias must be [" + std::to_string(K) + "], got " + shape_str(bias.shape));
    }
    TensorT<T> out({N, K});
    Eigen::Map<const MatRM<T>> xm(input.ptr(), N, D);
    Eigen::Map<const MatRM<T>> wm(weights.ptr(), D, K);
    Eigen::Map<MatRM<T>> om(out.ptr(), N, K);
    om.noalias() = xm * wm;
    for (std::int64_t n = 0; n < N; ++n) om.row(n) += Eigen::Map<const MatRM<T>>(bias.ptr(), 1, K);
    return out;
}

template <typename T>
struct FcGrads {
    TensorT<T> input;
    TensorT<T> weights;
    TensorT<T> bias;
};

template <typename T>
FcGrads<T> fc_backward(const TensorT<T>& upstream, const TensorT<T>& input, const TensorT<T>& weights) {
    const std::int64_t N = input.shape[0], D = input.shape[1];
    const std::int64_t K = weights.shape[1];
    if (upstream.shape != Shape{N, K}) {
        throw config_error("fc upstream grad shape " + shape_str(upstream.shape) + " != [" +
                           std::to_string(N) + "x" + std::to_string(K) + "]");
    }
    FcGrads<T> g{TensorT<T>({N, D}), TensorT<T>({D, K}), TensorT<T>({K})};
    Eigen::Map<const MatRM<T>> gym(upstream.ptr(), N, K);
    Eigen::Map<const MatRM<T>> xm(input.ptr(), N, D);
    Eigen::Map<const MatRM<T>> wm(weights.ptr(), D, K);
    Eigen::Map<MatRM<T>>(g.input.ptr(), N, D).noalias() = gym * wm.transpose();
    Eigen::Map<MatRM<T>>(g.weights.ptr(), D, K).noalias() = xm.transpose() * gym;
    Eigen::Map<MatRM<T>>(g.bias.ptr(), 1, K).noalias() = gym.colwise().sum();
    return g;
}

template <typename T>
struct SoftmaxLoss {
    double loss = 0.0;                 // mean over the batch
    TensorT<T> grad_logits;            // (softmax - onehot) / N
};

// Softmax cross entropy, stabilized by max subtraction.
template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const TensorT<T>& logits, const std::vector<std::int32_t>& labels) {
    if (logits.rank() != 2) throw config_error("softmax expects logits [N,K]");
    const std::int64_t N = logits.shape[0], K = logits.shape[1];
    if (static_cast<std::int64_t>(labels.size()) != N) {
        throw data_error("label count " + std::to_string(labels.size()) + " != batch size " +
                         std::to_string(N));
    }
    SoftmaxLoss<T> r;
    r.grad_logits = TensorT<T>({N, K});
    double loss_sum = 0.0;
    const T invN = T(1) / static_cast<T>(N);
    for (std::int64_t n = 0; n < N; ++n) {
        const std::int32_t label = labels[static_cast<std::size_t>(n)];
        if (label < 0 || label >= K) {
            throw data_error("label " + std::to_string(label) + " out of range [0," +
                             std::to_string(K) + ") at row " + std::to_string(n));
        }
        const T* row = logits.ptr() + n * K;
        T mx = row[0];
        for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T denom = T(0);
        for (std::int64_t k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
        const T log_denom = std::log(denom);
        loss_sum += static_cast<double>(log_denom - (row[label] - mx));
        T* grow = r.grad_logits.ptr() + n * K;
        for (std::int64_t k = 0; k < K; ++k) {
            grow[k] = std::exp(row[k] - mx) / denom * invN;
        }
        grow[label] -= invN;
    }
    r.loss = loss_sum / static_cast<double>(N);
    return r;
}

template <typename T>
struct DropoutResult {
    TensorT<T> output;
    std::vector<std::uint8_t> mask;  // 1 = kept
};

// Inverted dropout: survivors scale by 1/keep_prob, so inference is identity.
template <typename T>
DropoutResult<T> dropout_forward(const TensorT<T>& input, double keep_prob, Rng& rng, bool training) {
    if (!(keep_prob > 0.0) || keep_prob > 1.0) {
        throw config_error("dropout keep_prob must be in (0,1], got " + std::to_string(keep_prob));
    }
    DropoutResult<T> r;
    if (!training || keep_prob == 1.0) {
        r.output = input;
        r.mask.assign(input.data.size(), 1);
        return r;
    }
    r.output.shape = input.shape;
    r.output.data.resize(input.data.size());
    r.mask.resize(input.data.size());
    const T scale = static_cast<T>(1.0 / keep_prob);
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        const bool keep = rng.uniform() < keep_prob;
        r.mask[i] = keep ? 1 : 0;
        r.output.data[i] = keep ? input.data[i] * scale : T(0);
    }
    return r;
}

template <typename T>
TensorT<T> dropout(const TensorT<T>& input, double keep_prob, Rng& rng, bool training) {
    return dropout_forward(input, keep_prob, rng, training).output;
}

template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& upstream, const std::vector<std::uint8_t>& mask,
                            double keep_prob) {
    if (upstream.data.size() != mask.size()) throw config_error("dropout backward mask size mismatch");
    TensorT<T> gx;
    gx.shape = upstream.shape;
    gx.data.resize(upstream.data.size());
    const T scale = static_cast<T>(1.0 / keep_prob);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        gx.data[i] = mask[i] ? upstream.data[i] * scale : T(0);
    }
    return gx;
}

}  // namespace htcnn
