#pragma once

// Independent reference implementations used to pin expected values. These
// deliberately share no code with the library kernels: plain nested loops and
// textbook formulas, computed in 64-bit.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "htcnn/ops.hpp"
#include "htcnn/tensor.hpp"

namespace oracle {

// Quadruple-nested-loop cross-correlation with explicit padding/stride.
inline htcnn::TensorT<double> conv_naive(const htcnn::TensorT<double>& x,
                                         const htcnn::TensorT<double>& w,
                                         const htcnn::TensorT<double>& b,
                                         const htcnn::ConvSpec& spec) {
    const std::int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::int64_t F = w.shape[0], fh = w.shape[2], fw = w.shape[3];
    const std::int64_t oh = spec.out_h(H), ow = spec.out_w(W);
    htcnn::TensorT<double> out({N, F, oh, ow});
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t f = 0; f < F; ++f) {
            for (std::int64_t yo = 0; yo < oh; ++yo) {
                for (std::int64_t xo = 0; xo < ow; ++xo) {
                    double acc = b[f];
                    for (std::int64_t c = 0; c < C; ++c) {
                        for (std::int64_t ky = 0; ky < fh; ++ky) {
                            for (std::int64_t kx = 0; kx < fw; ++kx) {
                                const std::int64_t yi = yo * spec.stride - spec.padding + ky;
                                const std::int64_t xi = xo * spec.stride - spec.padding + kx;
                                if (yi < 0 || yi >= H || xi < 0 || xi >= W) continue;
                                acc += x[((n * C + c) * H + yi) * W + xi] *
                                       w[((f * C + c) * fh + ky) * fw + kx];
                            }
                        }
                    }
                    out[((n * F + f) * oh + yo) * ow + xo] = acc;
                }
            }
        }
    }
    return out;
}

// Central finite differences of a scalar function, step h, 64-bit throughout.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-3) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Largest elementwise deviation, relative to the largest magnitude present.
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double scale = 1e-12, diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
        diff = std::max(diff, std::abs(a[i] - b[i]));
    }
    return diff / scale;
}

// Straight-line summation forms of the curve metrics.
inline double aag_naive(const std::vector<double>& ht, const std::vector<double>& cc) {
    double s = 0.0;
    for (std::size_t i = 0; i < ht.size(); ++i) s += ht[i] - cc[i];
    return s / static_cast<double>(ht.size());
}

inline double pbp_naive(const std::vector<double>& ht, const std::vector<double>& cc) {
    double s = 0.0;
    for (std::size_t i = 0; i < ht.size(); ++i) s += ht[i] > cc[i] ? 1.0 : 0.0;
    return s / static_cast<double>(ht.size());
}

inline double windowed_aag_naive(const std::vector<double>& epochs, const std::vector<double>& ht,
                                 const std::vector<double>& cc, double lo, double hi) {
    double s = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < ht.size(); ++i) {
        if (epochs[i] >= lo && epochs[i] <= hi) {
            s += ht[i] - cc[i];
            ++n;
        }
    }
    return s / static_cast<double>(n);
}

// Textbook mean cross-entropy of softmax, no stabilization tricks.
inline double softmax_loss_naive(const std::vector<double>& logits, std::int64_t N, std::int64_t K,
                                 const std::vector<std::int32_t>& labels) {
    double total = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
        double denom = 0.0;
        for (std::int64_t k = 0; k < K; ++k) denom += std::exp(logits[n * K + k]);
        total += -std::log(std::exp(logits[n * K + labels[n]]) / denom);
    }
    return total / static_cast<double>(N);
}

}  // namespace oracle
