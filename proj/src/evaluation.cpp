#include "fsad/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsad/error.hpp"

namespace fsad {

double roc_auc(const LabeledScores& s) {
    require(s.scores.size() == s.labels.size(), "scores and labels differ in length");
    const std::size_t n = s.scores.size();
    std::size_t n_pos = 0;
    for (auto l : s.labels) {
        require(l <= 1, "labels must be 0 or 1");
        n_pos += l;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw Error("undefined AUC");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

    // sum of (doubled) mid-ranks of the positives; integers keep it exact
    long double rank_sum_x2 = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
        const long double mid_x2 = static_cast<long double>(i + 1 + j); // 2 * average of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (s.labels[order[k]]) rank_sum_x2 += mid_x2;
        i = j;
    }
    const long double np = static_cast<long double>(n_pos), nn = static_cast<long double>(n_neg);
    const long double u = rank_sum_x2 / 2 - np * (np + 1) / 2;
    return static_cast<double>(u / (np * nn));
}

double fpr_at(const LabeledScores& s, double threshold) {
    require(s.scores.size() == s.labels.size(), "scores and labels differ in length");
    std::size_t neg = 0, fp = 0;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
        if (s.labels[i] != 0) continue;
        ++neg;
        if (s.scores[i] > threshold) ++fp;
    }
    if (neg == 0) throw Error("FPR needs at least one negative");
    return static_cast<double>(fp) / static_cast<double>(neg);
}

MeanSd mean_sd(std::span<const double> values) {
    require(!values.empty(), "mean of an empty list");
    MeanSd r;
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - r.mean) * (v - r.mean);
        r.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return r;
}

} // namespace fsad
