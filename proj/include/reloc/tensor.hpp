#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace reloc {

// Dense NCHW tensor of doubles. All network activations, gradients, and
// parameters use this; image types convert to/from it at module borders.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0) {}

    size_t size() const { return v.size(); }

    double& at(int i, int j, int y, int x) {
        return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
    }
    double at(int i, int j, int y, int x) const {
        return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
    }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }

    std::string shape_str() const {
        return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + "]";
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    a.shape_str() + " vs " + b.shape_str());
}

}  // namespace reloc
