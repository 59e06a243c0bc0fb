#pragma once

/// \file tensor.hpp
/// \brief Dense row-major tensor used by the codec and the numeric core.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "posekit/error.hpp"

namespace posekit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s)
{
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

/// 64-byte aligned storage. Vectorized reductions peel elements according to the buffer
/// address, so a fixed alignment keeps results bitwise reproducible between runs.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;
    using Storage = std::vector<T, AlignedAllocator<T>>;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}
    Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data))
    {
        detail::require(data_.size() == shape_numel(shape_),
                        "tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    Storage& vec() { return data_; }
    const Storage& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    /// Row `i` of a rank-2 tensor.
    std::span<T> row(std::size_t i) { return {data_.data() + i * shape_[1], shape_[1]}; }
    std::span<const T> row(std::size_t i) const { return {data_.data() + i * shape_[1], shape_[1]}; }

    Tensor reshaped(Shape shape) const
    {
        detail::require(shape_numel(shape) == size(), "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const
    {
        typename Tensor<U>::Storage out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    Storage data_;
};

/// FNV-1a over the raw bytes; used for bitwise-equality checks on parameters and outputs.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 1469598103934665603ull)
{
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

template <typename T>
std::uint64_t checksum(const Tensor<T>& t, std::uint64_t h = 1469598103934665603ull)
{
    return fnv1a(t.data(), t.size() * sizeof(T), h);
}

} // namespace posekit
