#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fsad {

enum class Granularity { image, pixel };

struct LabeledScores {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels; // 0 normal, 1 anomalous
    Granularity granularity = Granularity::image;

    void add(double score, int label) {
        scores.push_back(score);
        labels.push_back(static_cast<std::uint8_t>(label));
    }
};

/// Mann-Whitney AUC, P(pos > neg) + 1/2 P(pos == neg), from mid-ranks.
/// Throws "undefined AUC" unless both classes are present.
double roc_auc(const LabeledScores& s);

/// Fraction of label-0 items whose score is strictly above `threshold`.
double fpr_at(const LabeledScores& s, double threshold);

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0; // sample standard deviation; 0 for a single value
};
MeanSd mean_sd(std::span<const double> values);

} // namespace fsad
