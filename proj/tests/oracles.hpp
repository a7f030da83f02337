// Independent brute-force oracles shared by unit tests and the acceptance run.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <utility>
#include <cstdint>
#include <vector>

#include "longtrack/proposer.hpp"
#include "longtrack/rng.hpp"

namespace longtrack::oracle {

using Counts = std::array<std::uint64_t, Histogram::kBins>;
using i128 = __int128;

/// Exact fraction comparison a/b > c/d for positive denominators.
inline bool greater(i128 a, i128 b, i128 c, i128 d) { return a * d > c * b; }

/// Otsu split by exhaustive search: each candidate recomputes both classes
/// from scratch; between-class variance compared as exact fractions.
inline int otsu_split(const Counts& c) {
    int best = -1;
    i128 best_num = 0, best_den = 1;
    for (int k = 0; k + 1 < Histogram::kBins; ++k) {
        i128 n0 = 0, n1 = 0, s0 = 0, s1 = 0;
        for (int i = 0; i <= k; ++i) {
            n0 += c[i];
            s0 += static_cast<i128>(c[i]) * i;
        }
        for (int i = k + 1; i < Histogram::kBins; ++i) {
            n1 += c[i];
            s1 += static_cast<i128>(c[i]) * i;
        }
        if (n0 == 0 || n1 == 0) continue;
        // w0 w1 (mu0 - mu1)^2 * n^2 = (s0 n1 - s1 n0)^2 / (n0 n1)
        const i128 d = s0 * n1 - s1 * n0;
        const i128 num = d * d;
        const i128 den = n0 * n1;
        if (best < 0 || greater(num, den, best_num, best_den)) {
            best = k;
            best_num = num;
            best_den = den;
        }
    }
    return best;
}

/// Yen split by exhaustive search of (P1 (1 - P1))^2 / (sum p^2 below * sum p^2 above).
inline int yen_split(const Counts& c) {
    int best = -1;
    i128 best_num = 0, best_den = 1;
    i128 n = 0;
    for (auto v : c) n += v;
    for (int k = 0; k + 1 < Histogram::kBins; ++k) {
        i128 c1 = 0, q1 = 0, q2 = 0;
        for (int i = 0; i <= k; ++i) {
            c1 += c[i];
            q1 += static_cast<i128>(c[i]) * c[i];
        }
        for (int i = k + 1; i < Histogram::kBins; ++i) q2 += static_cast<i128>(c[i]) * c[i];
        if (q1 == 0 || q2 == 0) continue;
        const i128 p = c1 * (n - c1);
        const i128 num = p * p;
        const i128 den = q1 * q2;
        if (best < 0 || greater(num, den, best_num, best_den)) {
            best = k;
            best_num = num;
            best_den = den;
        }
    }
    return best;
}

inline Histogram histogram_from_counts(const Counts& c, double max_value) {
    Histogram h;
    h.max_value = max_value;
    h.counts = c;
    for (int k = 0; k < Histogram::kBins; ++k) {
        h.total += c[k];
        h.value_sum += static_cast<double>(c[k]) * h.center(k);
    }
    return h;
}

/// Seeded histogram: one to three bumps plus sparse noise, counts <= 60,
/// always at least two populated bins.
inline Counts random_counts(std::uint64_t seed) {
    Rng rng(seed);
    Counts c{};
    const int bumps = 1 + static_cast<int>(rng.next() % 3);
    for (int b = 0; b < bumps; ++b) {
        const double mu = rng.uniform(0, 255);
        const double sigma = rng.uniform(2, 30);
        const double height = rng.uniform(5, 40);
        for (int k = 0; k < Histogram::kBins; ++k) {
            const double z = (k - mu) / sigma;
            c[k] += static_cast<std::uint64_t>(height * std::exp(-0.5 * z * z));
        }
    }
    for (int k = 0; k < Histogram::kBins; ++k) {
        if (rng.bernoulli(0.1)) c[k] += rng.next() % 20;
    }
    int populated = 0;
    for (auto v : c) populated += v > 0;
    if (populated < 2) {
        c[0] += 1;
        c[255] += 1;
    }
    return c;
}

/// Class means of bin centers for background = bins 0..k.
inline std::pair<double, double> class_center_means(const Histogram& h, int k) {
    double n0 = 0, s0 = 0, n1 = 0, s1 = 0;
    for (int i = 0; i < Histogram::kBins; ++i) {
        const double n = static_cast<double>(h.counts[i]);
        if (i <= k) {
            n0 += n;
            s0 += n * h.center(i);
        } else {
            n1 += n;
            s1 += n * h.center(i);
        }
    }
    return {s0 / n0, s1 / n1};
}

/// Single-image, single-label AP at one threshold by brute force: greedy
/// matching in score order, then for each recall point i/100 the best
/// precision over every ranked prefix whose recall reaches it.
inline double ap_bruteforce(const std::vector<Detection>& dets, const std::vector<Detection>& gts, double t) {
    if (gts.empty()) return -1.0;
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::vector<bool> used(gts.size(), false);
    std::vector<int> hit;
    for (std::size_t i : order) {
        int best = -1;
        double best_v = 0.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            const double v = iou(dets[i].box, gts[g].box);
            if (v >= t && (best < 0 || v > best_v)) {
                best = static_cast<int>(g);
                best_v = v;
            }
        }
        if (best >= 0) used[static_cast<std::size_t>(best)] = true;
        hit.push_back(best >= 0 ? 1 : 0);
    }
    const std::size_t npig = gts.size();
    double sum = 0.0;
    for (std::size_t i = 0; i <= 100; ++i) {
        double q = 0.0;
        std::size_t tp = 0;
        for (std::size_t n = 1; n <= hit.size(); ++n) {
            tp += static_cast<std::size_t>(hit[n - 1]);
            if (tp * 100 >= i * npig) q = std::max(q, static_cast<double>(tp) / static_cast<double>(n));
        }
        sum += q;
    }
    return sum / 101.0;
}

/// Corner-transform oracle for affine_box in long double: map the four
/// corners, take the hull, clamp to the image.
inline std::optional<BBox> affine_box_oracle(const BBox& b, const std::array<double, 6>& m, int w, int h) {
    using L = long double;
    const L xs[2] = {b.x, static_cast<L>(b.x) + b.w};
    const L ys[2] = {b.y, static_cast<L>(b.y) + b.h};
    L x0 = 1e300L, x1 = -1e300L, y0 = 1e300L, y1 = -1e300L;
    for (L x : xs) {
        for (L y : ys) {
            const L u = m[0] * x + m[1] * y + m[2];
            const L v = m[3] * x + m[4] * y + m[5];
            x0 = std::min(x0, u);
            x1 = std::max(x1, u);
            y0 = std::min(y0, v);
            y1 = std::max(y1, v);
        }
    }
    x0 = std::max(x0, L{0});
    y0 = std::max(y0, L{0});
    x1 = std::min(x1, static_cast<L>(w));
    y1 = std::min(y1, static_cast<L>(h));
    if (x1 <= x0 || y1 <= y0 || (x1 - x0) * (y1 - y0) < 1) return std::nullopt;
    return BBox{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 - x0),
                static_cast<double>(y1 - y0)};
}

}  // namespace longtrack::oracle
