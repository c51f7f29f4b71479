// Discrete CRPS: closed form, decomposition, and the differentiable graph op.
#pragma once

#include <atomic>
#include <cmath>
#include <vector>

#include "bgts/common.hpp"
#include "bgts/tensor.hpp"

namespace bgts {

// Count of observations clamped to the boundary bins at loss time; pathological
// normalization shows up here.
inline std::atomic<uint64_t>& crps_clamp_counter() {
    static std::atomic<uint64_t> counter{0};
    return counter;
}

struct CrpsTerms {
    double term1 = 0.0;  // expected absolute error
    double term2 = 0.0;  // half expected pairwise distance
    double value() const { return term1 - term2; }
};

// Half the expected pairwise absolute distance, O(K) via prefix sums over the
// ascending bin grid.
inline double crps_term2(std::span<const double> p, std::span<const double> h) {
    double acc = 0.0, a = 0.0, b = 0.0;  // a = sum p_j, b = sum p_j h_j over j < i
    for (size_t i = 0; i < p.size(); ++i) {
        acc += p[i] * (h[i] * a - b);
        a += p[i];
        b += p[i] * h[i];
    }
    return acc;
}

inline CrpsTerms crps_terms(std::span<const double> p, std::span<const double> h, double y) {
    check<ContractError>(p.size() == h.size() && !p.empty(), "crps: p and h must be equal-length, nonempty");
    double mass = 0.0;
    for (double v : p) mass += v;
    check<ContractError>(std::abs(mass - 1.0) < 1e-6, "crps: p is not normalized (sum " + std::to_string(mass) + ")");
    for (size_t i = 1; i < h.size(); ++i)
        check<ContractError>(h[i] > h[i - 1], "crps: bin centers must be strictly increasing");
    CrpsTerms t;
    for (size_t i = 0; i < p.size(); ++i) t.term1 += p[i] * std::abs(h[i] - y);
    t.term2 = crps_term2(p, h);
    return t;
}

inline double crps_discrete(std::span<const double> p, std::span<const double> h, double y) {
    return crps_terms(p, h, y).value();
}

// dCRPS/dp_i = |h_i - y| - sum_j p_j |h_i - h_j|, both parts O(K).
inline void crps_grad_p(std::span<const double> p, std::span<const double> h, double y,
                        std::span<double> out) {
    const size_t k = p.size();
    std::vector<double> pre_a(k + 1, 0.0), pre_b(k + 1, 0.0);
    for (size_t i = 0; i < k; ++i) {
        pre_a[i + 1] = pre_a[i] + p[i];
        pre_b[i + 1] = pre_b[i] + p[i] * h[i];
    }
    const double a_tot = pre_a[k], b_tot = pre_b[k];
    for (size_t i = 0; i < k; ++i) {
        const double below = h[i] * pre_a[i] - pre_b[i];
        const double above = (b_tot - pre_b[i + 1]) - h[i] * (a_tot - pre_a[i + 1]);
        out[i] = std::abs(h[i] - y) - (below + above);
    }
}

// Graph op: per-row CRPS for probs (n,K) against observations y (n), on a
// shared ascending bin grid. Observations outside [h_1, h_K] are clamped to
// the boundary and counted.
inline Tensor crps_rows(const Tensor& probs, const std::vector<double>& y, std::vector<double> centers) {
    check<ShapeError>(probs.shape().size() == 2, "crps_rows: probs must be (n,K), got " + shape_str(probs.shape()));
    const int64_t n = probs.shape()[0], k = probs.shape()[1];
    check<ShapeError>(static_cast<int64_t>(centers.size()) == k, "crps_rows: centers length mismatch");
    check<ShapeError>(static_cast<int64_t>(y.size()) == n, "crps_rows: observation count mismatch");
    std::vector<double> yc(y);
    for (double& v : yc) {
        if (v < centers.front()) {
            v = centers.front();
            crps_clamp_counter()++;
        } else if (v > centers.back()) {
            v = centers.back();
            crps_clamp_counter()++;
        }
    }
    std::vector<double> value(n);
    for (int64_t r = 0; r < n; ++r)
        value[r] = crps_discrete(std::span(probs.value()).subspan(r * k, k), centers, yc[r]);
    auto backward = [n, k, yc, centers](Node& self) {
        Node& p = *self.inputs[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        std::vector<double> g(k);
        for (int64_t r = 0; r < n; ++r) {
            crps_grad_p(std::span(p.value).subspan(r * k, k), centers, yc[r], g);
            const double gr = self.grad[r];
            double* pg = p.grad.data() + r * k;
            for (int64_t i = 0; i < k; ++i) pg[i] += gr * g[i];
        }
    };
    return custom_op({probs}, Shape{static_cast<int>(n)}, std::move(value), backward);
}

}  // namespace bgts
