#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "statelens/error.hpp"

namespace statelens {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline void check_shape(const Shape& shape) {
    if (shape.empty()) throw ValidationError("tensor shape must have at least one dimension");
    for (auto d : shape)
        if (d < 1) throw ValidationError("tensor dimension < 1 in shape " + shape_string(shape));
}

/// Dense row-major n-dimensional array. Activations use (batch, channels, rows, cols);
/// conv kernels use (out-ch, in-ch, kh, kw).
template <class T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(shape_size(shape_), T{0});
    }

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (shape_size(shape_) != data_.size())
            throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* raw() noexcept { return data_.data(); }
    const T* raw() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Row-major offset of a rank-4 coordinate.
    std::size_t index(std::size_t b, std::size_t c, std::size_t r, std::size_t co) const {
        return ((b * shape_[1] + c) * shape_[2] + r) * shape_[3] + co;
    }
    T& at(std::size_t b, std::size_t c, std::size_t r, std::size_t co) { return data_[index(b, c, r, co)]; }
    const T& at(std::size_t b, std::size_t c, std::size_t r, std::size_t co) const {
        return data_[index(b, c, r, co)];
    }

    BasicTensor reshaped(Shape shape) const {
        return BasicTensor(std::move(shape), data_);
    }

    template <class U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

template <class T = float>
BasicTensor<T> zeros(const Shape& shape) {
    return BasicTensor<T>(shape);
}

enum class ElementwiseOp { add, mul, max_scalar };

namespace detail {
inline void require_same_shape(const Shape& a, const Shape& b) {
    if (a != b) throw ValidationError("shape mismatch: " + shape_string(a) + " vs " + shape_string(b));
}
}  // namespace detail

template <class T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape());
    BasicTensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        switch (op) {
            case ElementwiseOp::add: out[i] = a[i] + b[i]; break;
            case ElementwiseOp::mul: out[i] = a[i] * b[i]; break;
            case ElementwiseOp::max_scalar: out[i] = std::max(a[i], b[i]); break;
        }
    }
    return out;
}

template <class T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, T scalar) {
    BasicTensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        switch (op) {
            case ElementwiseOp::add: out[i] = a[i] + scalar; break;
            case ElementwiseOp::mul: out[i] = a[i] * scalar; break;
            case ElementwiseOp::max_scalar: out[i] = std::max(a[i], scalar); break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Weight blob: little-endian IEEE-754 binary32, concatenated, no padding.
// ---------------------------------------------------------------------------

inline void append_le_floats(std::string& out, std::span<const float> values) {
    static_assert(sizeof(float) == 4);
    for (float v : values) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFFu));
    }
}

inline std::vector<float> parse_le_floats(std::string_view bytes) {
    if (bytes.size() % 4 != 0)
        throw ValidationError("float blob length " + std::to_string(bytes.size()) + " is not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + k])) << (8 * k);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Fixture layout: one text line of space-separated dims, then the float blob.
inline void write_tensor_file(const std::string& path, const Tensor& t) {
    std::string bytes;
    for (std::size_t i = 0; i < t.rank(); ++i) bytes += (i ? " " : "") + std::to_string(t.dim(i));
    bytes += '\n';
    append_le_floats(bytes, t.data());
    write_file_bytes(path, bytes);
}

inline Tensor read_tensor_file(const std::string& path) {
    std::string bytes = read_file_bytes(path);
    auto nl = bytes.find('\n');
    if (nl == std::string::npos) throw ValidationError("tensor file missing shape header: " + path);
    std::istringstream header(bytes.substr(0, nl));
    Shape shape;
    std::size_t d;
    while (header >> d) shape.push_back(d);
    return Tensor(shape, parse_le_floats(std::string_view(bytes).substr(nl + 1)));
}

}  // namespace statelens
