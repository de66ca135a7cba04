#include "oats/common.hpp"

#include <algorithm>
#include <cstring>

namespace oats {

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) fail("ShapeMismatch", "matmul inner dims disagree");
    Mat c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* cr = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            const double* br = b.row(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
    return c;
}

Mat matmul_abt(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) fail("ShapeMismatch", "matmul_abt inner dims disagree");
    Mat c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* cr = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* br = b.row(j);
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += ar[k] * br[k];
            cr[j] = s;
        }
    }
    return c;
}

Mat matmul_atb(const Mat& a, const Mat& b) {
    if (a.rows != b.rows) fail("ShapeMismatch", "matmul_atb inner dims disagree");
    Mat c(a.cols, b.cols);
    for (int r = 0; r < a.rows; ++r) {
        const double* ar = a.row(r);
        const double* br = b.row(r);
        for (int i = 0; i < a.cols; ++i) {
            const double av = ar[i];
            if (av == 0.0) continue;
            double* cr = c.row(i);
            for (int j = 0; j < b.cols; ++j) cr[j] += av * br[j];
        }
    }
    return c;
}

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
    // splitmix64 over the concatenated words
    uint64_t x = seed;
    for (uint64_t w : {a + 0x9e3779b97f4a7c15ULL, b + 0xbf58476d1ce4e5b9ULL}) {
        x += w;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        x = x ^ (x >> 31);
    }
    return x;
}

std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double mean_of(const Vec& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double variance_of(const Vec& v) {
    if (v.empty()) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

Vec resample_linear(const Vec& x, int out_len) {
    const int n = static_cast<int>(x.size());
    if (out_len <= 0) fail("ShapeMismatch", "resample target length must be positive");
    if (n == out_len) return x;
    Vec out(static_cast<size_t>(out_len));
    if (n == 1) {
        std::fill(out.begin(), out.end(), x[0]);
        return out;
    }
    const double scale = static_cast<double>(n - 1) / static_cast<double>(out_len - 1);
    for (int i = 0; i < out_len; ++i) {
        const double pos = i * scale;
        const int lo = std::min(static_cast<int>(pos), n - 2);
        const double frac = pos - lo;
        out[i] = x[lo] * (1.0 - frac) + x[lo + 1] * frac;
    }
    return out;
}

}  // namespace oats
