#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace htcnn {

// Thrown for invalid configuration: bad shapes, bad hyper-parameters,
// malformed config files, contract violations between components.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for problems with dataset content: missing/truncated files,
// out-of-range labels, empty sets.
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when training hits a non-finite loss or parameter.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense N-dimensional array of T in row-major order. The one value type
// every kernel, model and dataset in this library is built from.
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(Shape s) : shape(std::move(s)) {
        validate_shape();
        data.assign(static_cast<std::size_t>(numel(shape)), T(0));
    }

    TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        validate_shape();
        if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
            throw config_error("tensor data length " + std::to_string(data.size()) +
                               " does not match shape " + shape_str(shape));
        }
    }

    static TensorT zeros(Shape s) { return TensorT(std::move(s)); }

    static TensorT full(Shape s, T value) {
        TensorT t(std::move(s));
        for (auto& v : t.data) v = value;
        return t;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // Multi-index accessor for tests and cold paths; hot kernels index flat.
    T& at(std::initializer_list<std::int64_t> idx) { return data[static_cast<std::size_t>(flat(idx))]; }
    const T& at(std::initializer_list<std::int64_t> idx) const {
        return data[static_cast<std::size_t>(flat(idx))];
    }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (const T& v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

private:
    void validate_shape() const {
        for (auto d : shape) {
            if (d <= 0) throw config_error("tensor dimensions must be positive, got " + shape_str(shape));
        }
    }

    std::int64_t flat(std::initializer_list<std::int64_t> idx) const {
        if (idx.size() != shape.size()) throw config_error("index rank mismatch");
        std::int64_t f = 0;
        std::size_t k = 0;
        for (auto i : idx) {
            if (i < 0 || i >= shape[k]) throw config_error("index out of bounds");
            f = f * shape[k] + i;
            ++k;
        }
        return f;
    }
};

using Tensor = TensorT<float>;

inline void require_shape(const Tensor& t, const Shape& expect, const char* what) {
    if (t.shape != expect) {
        throw config_error(std::string(what) + ": expected shape " + shape_str(expect) + ", got " +
                           shape_str(t.shape));
    }
}

}  // namespace htcnn
