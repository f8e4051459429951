#pragma once

// Discrimination, calibration and selective-prediction metrics: accuracy with
// Wilson score intervals, a 20-interval calibration table with Sanders'
// calibration score, ROC/AUC via threshold sweep (ties get half credit, i.e.
// the Mann-Whitney statistic), and uncertainty-informed removal curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "strokeuq/errors.hpp"

namespace strokeuq::metrics {

inline constexpr double kDefaultZ = 1.959964;  // two-sided 95%
inline constexpr int kCalibrationIntervals = 20;

struct WilsonInterval {
    double accuracy = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

inline WilsonInterval accuracy_with_wilson(long correct, long total, double z = kDefaultZ) {
    if (total < 1) throw ValidationError("accuracy_with_wilson: total must be >= 1");
    if (correct < 0 || correct > total) {
        throw ValidationError("accuracy_with_wilson: correct out of range");
    }
    const double n = static_cast<double>(total);
    const double p_hat = static_cast<double>(correct) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p_hat + z2 / (2.0 * n)) / denom;
    const double half =
        z * std::sqrt(p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)) / denom;
    WilsonInterval w;
    w.accuracy = p_hat;
    w.lower = std::max(0.0, center - half);
    w.upper = std::min(1.0, center + half);
    return w;
}

struct CalibrationRow {
    int interval = 0;                           // 1-based
    double representative = 0.0;                // pi_i = (i - 0.5) / 20
    long count = 0;                             // n_i
    std::optional<double> event_fraction;       // y_bar_i; absent when n_i = 0
};

struct CalibrationTable {
    std::vector<CalibrationRow> rows;  // always 20
    long total = 0;                    // N
};

// Interval i covers [(i-1)/20, i/20), final interval closed at 1.
inline CalibrationTable calibration(const std::vector<double>& probabilities,
                                    const std::vector<int>& labels) {
    if (probabilities.size() != labels.size()) {
        throw ValidationError("calibration: probabilities/labels length mismatch");
    }
    std::vector<long> counts(kCalibrationIntervals, 0);
    std::vector<long> events(kCalibrationIntervals, 0);
    for (size_t i = 0; i < probabilities.size(); ++i) {
        const double p = probabilities[i];
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError("calibration: probability out of range");
        }
        int b = static_cast<int>(p * kCalibrationIntervals);
        if (b >= kCalibrationIntervals) b = kCalibrationIntervals - 1;
        ++counts[static_cast<size_t>(b)];
        if (labels[i] != 0) ++events[static_cast<size_t>(b)];
    }
    CalibrationTable table;
    table.total = static_cast<long>(probabilities.size());
    table.rows.reserve(kCalibrationIntervals);
    for (int i = 0; i < kCalibrationIntervals; ++i) {
        CalibrationRow row;
        row.interval = i + 1;
        row.representative = (i + 0.5) / kCalibrationIntervals;
        row.count = counts[static_cast<size_t>(i)];
        if (row.count > 0) {
            row.event_fraction = static_cast<double>(events[static_cast<size_t>(i)]) / row.count;
        }
        table.rows.push_back(row);
    }
    return table;
}

// SC = sum_i n_i (y_bar_i - pi_i)^2 / N over occupied intervals; 0 is perfect.
inline double sanders_score(const CalibrationTable& table) {
    if (table.total < 1) throw ValidationError("sanders_score: empty table");
    double acc = 0.0;
    for (const auto& row : table.rows) {
        if (row.count == 0) continue;
        const double d = *row.event_fraction - row.representative;
        acc += static_cast<double>(row.count) * d * d;
    }
    return acc / static_cast<double>(table.total);
}

struct RocCurve {
    std::vector<std::pair<double, double>> points;  // (fpr, tpr), (0,0) .. (1,1)
    double auc = 0.0;
};

// Threshold sweep over distinct scores, higher score = more likely positive.
// Trapezoid AUC over the resulting points equals the Mann-Whitney statistic
// with 0.5 credit per tied pair.
inline RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& is_positive) {
    if (scores.size() != is_positive.size()) {
        throw ValidationError("roc_auc: scores/labels length mismatch");
    }
    long pos = 0;
    for (int y : is_positive) pos += (y != 0) ? 1 : 0;
    const long neg = static_cast<long>(scores.size()) - pos;
    if (pos == 0 || neg == 0) {
        throw ValidationError("roc_auc: degenerate input, need at least one positive and one negative");
    }
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.emplace_back(0.0, 0.0);
    long tp = 0;
    long fp = 0;
    double auc2 = 0.0;  // twice the trapezoid area, accumulated in counts
    long prev_tp = 0;
    long prev_fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            if (is_positive[order[i]] != 0) ++tp;
            else ++fp;
            ++i;
        }
        auc2 += static_cast<double>(fp - prev_fp) * static_cast<double>(tp + prev_tp);
        curve.points.emplace_back(static_cast<double>(fp) / neg, static_cast<double>(tp) / pos);
        prev_tp = tp;
        prev_fp = fp;
    }
    curve.auc = auc2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    return curve;
}

struct RemovalCurve {
    std::vector<std::pair<double, double>> points;  // (fraction_removed, accuracy_on_retained)
};

inline std::vector<double> default_removal_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(i * 0.05);
    return g;
}

// Items are dropped in descending uncertainty (ties: stable input order);
// retained count = ceil((1 - f) * N).
inline RemovalCurve removal_curve(const std::vector<double>& uncertainties,
                                  const std::vector<int>& is_correct,
                                  const std::vector<double>& grid = default_removal_grid()) {
    if (uncertainties.size() != is_correct.size()) {
        throw ValidationError("removal_curve: uncertainties/correctness length mismatch");
    }
    if (uncertainties.empty()) throw ValidationError("removal_curve: empty input");
    const auto n = static_cast<long>(uncertainties.size());
    std::vector<size_t> order(uncertainties.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return uncertainties[a] > uncertainties[b];
    });
    // prefix[k] = number correct among the k most uncertain items
    std::vector<long> prefix(uncertainties.size() + 1, 0);
    for (size_t k = 0; k < order.size(); ++k) {
        prefix[k + 1] = prefix[k] + (is_correct[order[k]] != 0 ? 1 : 0);
    }
    const long total_correct = prefix.back();
    RemovalCurve curve;
    for (double f : grid) {
        if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("removal_curve: fraction outside [0,1]");
        const long retained = static_cast<long>(std::ceil((1.0 - f) * static_cast<double>(n)));
        if (retained <= 0) {
            curve.points.emplace_back(f, 0.0);  // nothing retained; accuracy undefined, report 0
            continue;
        }
        const long removed = n - retained;
        const long correct_retained = total_correct - prefix[static_cast<size_t>(removed)];
        curve.points.emplace_back(f, static_cast<double>(correct_retained) /
                                         static_cast<double>(retained));
    }
    return curve;
}

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

// Closed intervals; touching endpoints count as overlap.
inline bool ci_overlap(const Interval& a, const Interval& b) {
    return a.lower <= b.upper && b.lower <= a.upper;
}

}  // namespace strokeuq::metrics
