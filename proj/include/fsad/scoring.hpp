#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Cholesky>

#include "fsad/estimators.hpp"
#include "fsad/feature_map.hpp"
#include "fsad/registration.hpp"

namespace fsad {

/// Score grid d (1 x H x W), the remapped full-resolution map and the
/// image-level score (max of `final`).
struct AnomalyMap {
    FeatureMap grid;
    FeatureMap final;
    double image_score = 0.0;
};

/// Mahalanobis distances against a fitted field.  Each covariance is
/// Cholesky-factored once at construction; scoring back-substitutes.
class MahalanobisScorer {
public:
    explicit MahalanobisScorer(GaussianField field);

    const GaussianField& field() const { return field_; }

    /// Distance of one full-dimension (D) feature vector at position p.
    double distance(std::size_t pos, const Eigen::Ref<const Eigen::VectorXd>& f) const;

    /// 1 x H x W grid for a single-sample feature set.
    FeatureMap score(const PatchFeatureSet& feats) const;

private:
    GaussianField field_;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> factors_;
};

FeatureMap mahalanobis_score(const PatchFeatureSet& feats, const GaussianField& field);

struct KnnResult {
    FeatureMap grid;
    double image_score = 0.0;
    double max_patch_score = 0.0;
    double reweight = 0.0;
};

inline constexpr std::size_t kDefaultNeighbors = 3;

/// Exact nearest-neighbour distances to the bank, plus the re-weighted image
/// score w * max(d) with w = 1 - exp(d*) / sum_{m in N_b} exp(|f* - m|),
/// where f* is the highest-scoring patch and N_b its b nearest bank items.
KnnResult knn_score(const PatchFeatureSet& feats, const MemoryBank& bank, std::size_t b_neighbors = kDefaultNeighbors);

/// Separable Gaussian filter, kernel truncated at 4 sigma, mirror-reflect
/// borders.  sigma == 0 returns the input.
FeatureMap gaussian_smooth(const FeatureMap& map, double sigma);

/// Remaps the grid to the image frame, optionally smooths it and sets the
/// image score to the maximum of the final map.
AnomalyMap assemble(const FeatureMap& grid, std::span<const AffineTransform> transforms, std::size_t out_h,
                    std::size_t out_w, double smooth_sigma = 0.0);

/// Writes <stem>.png (16-bit, min-max normalised), <stem>.json (raw min/max
/// and image score) and <stem>.carg (raw final grid).
void export_anomaly_map(const std::filesystem::path& stem, const AnomalyMap& map);

} // namespace fsad
