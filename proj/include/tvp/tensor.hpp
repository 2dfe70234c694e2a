#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace tvp {

/// Dense row-major array of doubles with an explicit shape.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> dims) : shape(std::move(dims)), data(count(shape), 0.0) {}

    static std::size_t count(const std::vector<int>& dims) {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                               [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
    }

    std::size_t size() const { return data.size(); }
    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }
    std::span<double> span() { return data; }
    std::span<const double> span() const { return data; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
    bool operator==(const Tensor&) const = default;
};

std::string shape_string(const std::vector<int>& shape);

}  // namespace tvp
