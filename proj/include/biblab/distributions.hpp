#pragma once

#include "biblab/tensor.hpp"

#include <utility>

namespace biblab {

/**
 * Diagonal Gaussian N(mu, diag(exp(log_sigma))^2).
 *
 * Rank-1 tensors describe a single distribution; rank-2 tensors a batch with
 * one distribution per row. Both members must share a shape.
 */
struct DiagGaussian {
    Tensor mu;
    Tensor log_sigma;

    DiagGaussian(Tensor mu_, Tensor log_sigma_);

    Index dim() const { return mu.cols(); }
    Index batch() const { return mu.rows(); }
};

/// Standard normal latent prior N(0, I).
struct StandardNormalPrior {
    explicit StandardNormalPrior(Index dim_);
    Index dim;

    /// n independent draws, one per row.
    Mat sample(Index n, Rng& rng) const;
};

/// Product Laplacian likelihood p(x|g) = (lambda/2)^n exp(-lambda * |x - g|_1).
struct LaplacianLikelihood {
    explicit LaplacianLikelihood(double scale_lambda_ = 1.0);
    double scale_lambda;
};

/// Isotropic Gaussian likelihood p(x|g) = N(x; g, sigma^2 I), the l2
/// alternative decoder binding.
struct GaussianLikelihood {
    explicit GaussianLikelihood(double sigma_ = 1.0);
    double sigma;
};

/// Finite atomic prior over latent centroids.
struct CodebookPrior {
    CodebookPrior(Mat centroids_, Vec probs_);
    Mat centroids; // L x n_z
    Vec probs;     // sums to 1

    Index size() const { return centroids.rows(); }
    Index dim() const { return centroids.cols(); }
};

// ---------------------------------------------------------------------------
// Sampling and densities. All tensor-valued results participate in the
// active tape, so gradients flow to mu / log_sigma / decoder outputs.
// ---------------------------------------------------------------------------

/// z = mu + exp(log_sigma) .* eps, the reparameterized sample.
Tensor sample_reparam(const DiagGaussian& d, const Tensor& eps);

/// KL(N(mu, sigma) || N(0, I)) = 1/2 sum_i (sigma_i^2 + mu_i^2 - 1 - 2 log sigma_i).
/// Requires a single (rank-1) distribution.
Tensor kl_to_std_normal(const DiagGaussian& d);

/// Batch mean of the per-row KL above; d holds one distribution per row.
Tensor kl_to_std_normal_mean(const DiagGaussian& d);

/// log p(x | g) under the normalized product Laplacian, single vectors.
Tensor log_prob_laplacian(const LaplacianLikelihood& l, const Tensor& x,
                          const Tensor& g);

/// Batch mean of per-row Laplacian log densities, x and g one row per sample.
Tensor log_prob_laplacian_mean(const LaplacianLikelihood& l, const Tensor& x,
                               const Tensor& g);

/// Batch mean of per-row isotropic Gaussian log densities.
Tensor log_prob_gaussian_mean(const GaussianLikelihood& l, const Tensor& x,
                              const Tensor& g);

/// Exact diagonal-Gaussian log density at a single vector v.
Tensor log_prob_gaussian(const DiagGaussian& d, const Tensor& v);

/// Standard-normal log density at v (rank-1) including the constant.
Tensor log_prob_gaussian(const StandardNormalPrior& p, const Tensor& v);

/// Plain-value standard-normal log density, for density evaluators.
double log_prob_std_normal(const RowVec& v);

/// Plain-value diagonal-Gaussian log density.
double log_prob_diag_gaussian(const RowVec& mu, const RowVec& log_sigma,
                              const RowVec& v);

/// Draws index j with probability probs[j]; returns (j, centroid row j).
std::pair<Index, RowVec> sample_codebook(const CodebookPrior& p, Rng& rng);

/// n codebook draws stacked as rows.
Mat sample_codebook_batch(const CodebookPrior& p, Index n, Rng& rng);

} // namespace biblab
