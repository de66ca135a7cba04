#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace oats {

using Vec = std::vector<double>;

// Typed failure carrying a machine-readable kind. `validation` separates
// bad-input failures (CLI exit 1) from runtime failures (exit 2).
struct Error : std::runtime_error {
    std::string kind;
    bool validation;
    Error(std::string k, const std::string& msg, bool is_validation = false)
        : std::runtime_error(k + ": " + msg), kind(std::move(k)), validation(is_validation) {}
};

[[noreturn]] inline void fail(const std::string& kind, const std::string& msg) {
    throw Error(kind, msg, false);
}
[[noreturn]] inline void fail_validation(const std::string& kind, const std::string& msg) {
    throw Error(kind, msg, true);
}

// ---------------------------------------------------------------------------
// Dense row-major matrix of doubles. Deliberately minimal: the project only
// needs matmuls, transposed matmuls and elementwise loops.
// ---------------------------------------------------------------------------
struct Mat {
    int rows = 0;
    int cols = 0;
    Vec d;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}

    double& operator()(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return d.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return d.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return d.size(); }
    void set_zero() { std::fill(d.begin(), d.end(), 0.0); }
};

// C = A * B, A: (r x k), B: (k x c)
Mat matmul(const Mat& a, const Mat& b);
// C = A * B^T
Mat matmul_abt(const Mat& a, const Mat& b);
// C = A^T * B
Mat matmul_atb(const Mat& a, const Mat& b);

// ---------------------------------------------------------------------------
// (batch, channels, length) tensor for 1-D convolution stacks.
// ---------------------------------------------------------------------------
struct Tens3 {
    int b = 0, c = 0, n = 0;
    Vec d;

    Tens3() = default;
    Tens3(int b_, int c_, int n_) : b(b_), c(c_), n(n_), d(static_cast<size_t>(b_) * c_ * n_, 0.0) {}

    double& at(int bi, int ci, int ni) {
        return d[(static_cast<size_t>(bi) * c + ci) * n + ni];
    }
    double at(int bi, int ci, int ni) const {
        return d[(static_cast<size_t>(bi) * c + ci) * n + ni];
    }
    double* channel(int bi, int ci) { return d.data() + (static_cast<size_t>(bi) * c + ci) * n; }
    const double* channel(int bi, int ci) const {
        return d.data() + (static_cast<size_t>(bi) * c + ci) * n;
    }
    void set_zero() { std::fill(d.begin(), d.end(), 0.0); }
};

// ---------------------------------------------------------------------------
// Seeded RNG stream. Child streams are derived by hashing (seed, a, b) so
// parallel consumers never share state and results are order-independent.
// ---------------------------------------------------------------------------
uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0);

class RandomStream {
  public:
    explicit RandomStream(uint64_t seed) : eng_(seed), seed_(seed) {}

    double uniform() { return unif_(eng_); }                      // [0, 1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * unif_(eng_); }
    double gauss() { return normal_(eng_); }                      // N(0, 1)
    double gauss(double mu, double sigma) { return mu + sigma * normal_(eng_); }

    // inclusive bounds
    long long uniform_int(long long lo, long long hi) {
        return std::uniform_int_distribution<long long>(lo, hi)(eng_);
    }

    RandomStream derive(uint64_t a, uint64_t b = 0) const {
        return RandomStream(mix_seed(seed_, a, b));
    }

    std::mt19937_64& engine() { return eng_; }

  private:
    std::mt19937_64 eng_;
    uint64_t seed_;
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Small shared helpers
// ---------------------------------------------------------------------------

// Full-precision decimal rendering; round-trips a double exactly.
std::string fmt_g17(double v);

double mean_of(const Vec& v);
double variance_of(const Vec& v);  // population variance

// Linear interpolation of a series to a new length (endpoints preserved).
Vec resample_linear(const Vec& x, int out_len);

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_grad(double x) {
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    return cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

// Named view over one parameter tensor; optimizer and checkpoint I/O work on
// flat lists of these so every module's parameters serialize the same way.
struct TensorRef {
    std::string name;
    std::vector<int> dims;
    Vec* data;
};
struct ConstTensorRef {
    std::string name;
    std::vector<int> dims;
    const Vec* data;

    ConstTensorRef(std::string n, std::vector<int> d, const Vec* p)
        : name(std::move(n)), dims(std::move(d)), data(p) {}
    ConstTensorRef(const TensorRef& t) : name(t.name), dims(t.dims), data(t.data) {}
};

inline std::vector<ConstTensorRef> to_const_refs(const std::vector<TensorRef>& ts) {
    return std::vector<ConstTensorRef>(ts.begin(), ts.end());
}

}  // namespace oats
