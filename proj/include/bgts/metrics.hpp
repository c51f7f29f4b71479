// Evaluation metrics: MASE, WAPE, scaled/weighted quantile losses, PIT
// calibration histograms, residual correlation.
//
// The quantile metrics follow the fev/GluonTS conventions:
//   pinball  rho_tau(y,f) = max(tau*(y-f), (tau-1)*(y-f))
//   WQL      mean over tau of [ 2*sum_t rho / sum_t |y_t| ]
//   SQL      mean over tau of [ mean_t 2*rho ] / seasonal-naive in-sample MAE
// so SQL shares its denominator with MASE and SQL == MASE when every quantile
// equals the point forecast.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bgts/common.hpp"

namespace bgts {

inline const std::vector<double>& default_quantile_levels() {
    static const std::vector<double> levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    return levels;
}

// Seasonal-naive in-sample MAE; nullopt when history is too short or constant.
inline std::optional<double> seasonal_naive_mae(std::span<const double> history, int m) {
    if (m < 1 || static_cast<int>(history.size()) <= m) return std::nullopt;
    double acc = 0.0;
    int n = 0;
    for (size_t t = m; t < history.size(); ++t) {
        acc += std::abs(history[t] - history[t - m]);
        ++n;
    }
    if (n == 0) return std::nullopt;
    double d = acc / n;
    if (d == 0.0) return std::nullopt;
    return d;
}

inline std::optional<double> mase(std::span<const double> y_true, std::span<const double> y_pred,
                                  std::span<const double> history, int m) {
    check<ContractError>(y_true.size() == y_pred.size() && !y_true.empty(), "mase: length mismatch");
    auto denom = seasonal_naive_mae(history, m);
    if (!denom) return std::nullopt;
    double num = 0.0;
    for (size_t t = 0; t < y_true.size(); ++t) num += std::abs(y_true[t] - y_pred[t]);
    return (num / y_true.size()) / *denom;
}

inline std::optional<double> wape(std::span<const double> y_true, std::span<const double> y_pred) {
    check<ContractError>(y_true.size() == y_pred.size() && !y_true.empty(), "wape: length mismatch");
    double num = 0.0, den = 0.0;
    for (size_t t = 0; t < y_true.size(); ++t) {
        num += std::abs(y_true[t] - y_pred[t]);
        den += std::abs(y_true[t]);
    }
    if (den == 0.0) return std::nullopt;
    return num / den;
}

inline double pinball(double tau, double y, double f) {
    const double d = y - f;
    return std::max(tau * d, (tau - 1.0) * d);
}

struct QuantileLosses {
    std::optional<double> sql;
    std::optional<double> wql;
};

// quantile_forecasts: one row of length H per level.
inline QuantileLosses quantile_losses(std::span<const double> y_true,
                                      const std::vector<std::vector<double>>& quantile_forecasts,
                                      const std::vector<double>& levels, std::span<const double> history,
                                      int seasonality) {
    check<ContractError>(!levels.empty(), "quantile_losses: no levels");
    check<ContractError>(quantile_forecasts.size() == levels.size(), "quantile_losses: level/forecast count mismatch");
    const size_t h = y_true.size();
    double abs_sum = 0.0;
    for (double v : y_true) abs_sum += std::abs(v);
    double mean2rho = 0.0;  // mean over tau of mean_t 2*rho
    double sum2rho = 0.0;   // mean over tau of sum_t 2*rho
    for (size_t q = 0; q < levels.size(); ++q) {
        check<ContractError>(quantile_forecasts[q].size() == h, "quantile_losses: horizon mismatch");
        double acc = 0.0;
        for (size_t t = 0; t < h; ++t) acc += 2.0 * pinball(levels[q], y_true[t], quantile_forecasts[q][t]);
        sum2rho += acc / levels.size();
        mean2rho += (acc / h) / levels.size();
    }
    QuantileLosses out;
    if (abs_sum > 0.0) out.wql = sum2rho / abs_sum;
    if (auto d = seasonal_naive_mae(history, seasonality)) out.sql = mean2rho / *d;
    return out;
}

// ---------------------------------------------------------------------------
// PIT

// Step-CDF value at y with linear interpolation across the bin containing y.
// Bins are uniform with centers h_i; lo/width describe the bin edges.
inline double pit_value(std::span<const double> probs, double lo, double width, double y) {
    const int k = static_cast<int>(probs.size());
    if (y <= lo) return 0.0;
    if (y >= lo + k * width) return 1.0;
    const int bin = std::min(k - 1, static_cast<int>((y - lo) / width));
    double below = 0.0;
    for (int i = 0; i < bin; ++i) below += probs[i];
    const double frac = (y - (lo + bin * width)) / width;
    return below + probs[bin] * frac;
}

// Frequencies over `bins` equal PIT intervals; sums to 1.
inline std::vector<double> pit_histogram(std::span<const double> pit_values, int bins = 10) {
    check<ContractError>(!pit_values.empty(), "pit_histogram: no observations");
    std::vector<double> freq(bins, 0.0);
    for (double u : pit_values) {
        int b = static_cast<int>(u * bins);
        b = std::clamp(b, 0, bins - 1);
        freq[b] += 1.0;
    }
    for (double& f : freq) f /= static_cast<double>(pit_values.size());
    return freq;
}

inline std::optional<double> residual_correlation(std::span<const double> a, std::span<const double> b) {
    check<ContractError>(a.size() == b.size() && a.size() >= 2, "residual_correlation: need equal lengths >= 2");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// report

struct MetricReport {
    // per item, metric name -> value
    std::map<std::string, std::map<std::string, double>> per_item;
    std::map<std::string, double> macro;
    std::map<std::string, int> undefined_counts;
    std::vector<double> quantile_levels = default_quantile_levels();

    void add(const std::string& item, const std::string& metric, std::optional<double> value) {
        if (value)
            per_item[item][metric] = *value;
        else
            undefined_counts[metric]++;
    }

    void finalize() {
        std::map<std::string, std::pair<double, int>> agg;
        for (const auto& [item, metrics] : per_item)
            for (const auto& [name, v] : metrics) {
                agg[name].first += v;
                agg[name].second += 1;
            }
        macro.clear();
        for (const auto& [name, sc] : agg) macro[name] = sc.first / sc.second;
    }
};

}  // namespace bgts
