#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "htcnn/tensor.hpp"
#include "htcnn/train.hpp"

namespace htcnn {

// Two learning curves on the same evaluation grid: the transfer-initialized
// net (ht) against the plainly initialized baseline (cc).
struct PairedCurves {
    LearningCurve ht;
    LearningCurve cc;

    void validate() const {
        if (ht.points.size() != cc.points.size()) {
            throw config_error("paired curves have different lengths: " +
                               std::to_string(ht.points.size()) + " vs " +
                               std::to_string(cc.points.size()));
        }
        for (std::size_t i = 0; i < ht.points.size(); ++i) {
            if (ht.points[i].iteration != cc.points[i].iteration) {
                throw config_error("paired curves diverge at point " + std::to_string(i) +
                                   ": iteration " + std::to_string(ht.points[i].iteration) +
                                   " vs " + std::to_string(cc.points[i].iteration));
            }
        }
    }
};

// Mean pointwise accuracy gain of ht over cc across the whole grid.
inline double aag(const PairedCurves& paired) {
    paired.validate();
    if (paired.ht.points.empty()) throw config_error("cannot compute AAG of empty curves");
    double sum = 0.0;
    for (std::size_t i = 0; i < paired.ht.points.size(); ++i) {
        sum += paired.ht.points[i].test_accuracy - paired.cc.points[i].test_accuracy;
    }
    return sum / static_cast<double>(paired.ht.points.size());
}

// 1 iff the transfer-initialized net is strictly better at this point.
inline int bp(double acc_ht, double acc_cc) { return acc_ht > acc_cc ? 1 : 0; }

// Fraction of grid points where ht is strictly better.
inline double pbp(const PairedCurves& paired) {
    paired.validate();
    if (paired.ht.points.empty()) throw config_error("cannot compute PBP of empty curves");
    double sum = 0.0;
    for (std::size_t i = 0; i < paired.ht.points.size(); ++i) {
        sum += bp(paired.ht.points[i].test_accuracy, paired.cc.points[i].test_accuracy);
    }
    return sum / static_cast<double>(paired.ht.points.size());
}

// AAG restricted to points whose epoch index lies in [start_epoch, end_epoch].
inline double windowed_aag(const PairedCurves& paired, double start_epoch, double end_epoch) {
    paired.validate();
    double sum = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < paired.ht.points.size(); ++i) {
        const double e = paired.ht.points[i].epoch;
        if (e >= start_epoch && e <= end_epoch) {
            sum += paired.ht.points[i].test_accuracy - paired.cc.points[i].test_accuracy;
            ++n;
        }
    }
    if (n == 0) {
        throw config_error("accuracy-gain window [" + std::to_string(start_epoch) + "," +
                           std::to_string(end_epoch) + "] contains no evaluation points");
    }
    return sum / static_cast<double>(n);
}

// AAG over the first `n` evaluation points of the grid.
inline double early_aag(const PairedCurves& paired, std::size_t n) {
    paired.validate();
    if (n == 0 || paired.ht.points.empty()) {
        throw config_error("early accuracy-gain window must cover at least one point");
    }
    n = std::min(n, paired.ht.points.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sum += paired.ht.points[i].test_accuracy - paired.cc.points[i].test_accuracy;
    }
    return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Metrics report CSV: `metric,window_start,window_end,mean,min,max,seeds`.
// Windows are epoch indices. One row aggregates one metric across seeds.
// ---------------------------------------------------------------------------

struct MetricRow {
    std::string metric;
    double window_start = 0.0;
    double window_end = 0.0;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::int64_t seeds = 0;
};

inline MetricRow aggregate_metric(const std::string& name, double window_start, double window_end,
                                  const std::vector<double>& per_seed) {
    if (per_seed.empty()) throw config_error("cannot aggregate metric '" + name + "' over 0 seeds");
    MetricRow row;
    row.metric = name;
    row.window_start = window_start;
    row.window_end = window_end;
    row.seeds = static_cast<std::int64_t>(per_seed.size());
    row.min = *std::min_element(per_seed.begin(), per_seed.end());
    row.max = *std::max_element(per_seed.begin(), per_seed.end());
    double sum = 0.0;
    for (double v : per_seed) sum += v;
    row.mean = sum / static_cast<double>(per_seed.size());
    return row;
}

inline std::string metrics_to_csv(const std::vector<MetricRow>& rows) {
    std::string out = "metric,window_start,window_end,mean,min,max,seeds\n";
    char buf[320];
    for (const MetricRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%lld\n", r.metric.c_str(),
                      r.window_start, r.window_end, r.mean, r.min, r.max,
                      static_cast<long long>(r.seeds));
        out += buf;
    }
    return out;
}

inline void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("cannot write metrics CSV: " + path);
    out << metrics_to_csv(rows);
}

}  // namespace htcnn
