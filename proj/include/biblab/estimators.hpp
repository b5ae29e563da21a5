#pragma once

#include "biblab/models.hpp"
#include "biblab/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace biblab {

/// Sum of RBF kernels, k(a,b) = sum_s exp(-|a-b|^2 / (2 s^2)).
struct RbfKernel {
    std::vector<double> bandwidths;

    explicit RbfKernel(std::vector<double> bandwidths_ = {1.0});

    /// Default bandwidth ladder {0.25, 0.5, 1, 2, 4} scaled by the median
    /// pairwise distance of the pooled sample. The scale is computed once,
    /// outside any tape.
    static RbfKernel median_scaled(const Mat& x, const Mat& y);

    double operator()(const RowVec& a, const RowVec& b) const;
};

enum class EstimatorKind { ClosedForm, Mmd, DensityRatio, Enumeration, MonteCarlo };

const char* to_string(EstimatorKind k);

struct DivergenceEstimate {
    double value = 0.0;
    EstimatorKind estimator_kind = EstimatorKind::ClosedForm;
    Index n_p = 0;
    Index n_q = 0;
};

/**
 * Binary classifier between two sample sets, the density-ratio machinery
 * behind the sampled KL terms. Labels are 1 for P-samples and 0 for
 * Q-samples, so the trained logit approximates log(p/q).
 */
class Discriminator {
  public:
    Discriminator(Index input_dim, std::vector<Index> hidden, Activation act,
                  Rng& rng, const std::string& name = "disc",
                  bool zero_init_head = true);

    /// Logits with trainable parameters on the tape.
    Tensor logits(const Tensor& x);
    /// Logits with parameters treated as constants; gradients flow to x only.
    Tensor logits_frozen(const Tensor& x) const;
    Vec logits_values(const Mat& x) const;

    std::vector<Parameter*> parameters() { return net_.parameters(); }
    Index input_dim() const { return net_.input_dim(); }

    /// Number of gradient updates applied so far.
    long update_count() const { return update_count_; }
    void note_update() { ++update_count_; }

  private:
    Mlp net_;
    long update_count_ = 0;
};

/// Unbiased U-statistic estimate of MMD^2. Recorded as a single tape
/// operation so gradients reach both sample batches; the kernel bandwidths
/// are constants. May be slightly negative by unbiasedness.
Tensor mmd2_unbiased(const Tensor& samples_p, const Tensor& samples_q,
                     const RbfKernel& k);

/// Plain-value overload.
double mmd2_unbiased(const Mat& samples_p, const Mat& samples_q, const RbfKernel& k);

/// One binary cross-entropy step on (P = label 1, Q = label 0); returns the
/// loss before the update.
double discriminator_step(Discriminator& d, const Mat& samples_p,
                          const Mat& samples_q, Optimizer& opt);

/// Fraction of samples the discriminator classifies correctly.
double discriminator_accuracy(const Discriminator& d, const Mat& samples_p,
                              const Mat& samples_q);

/// Runs `steps` full-batch BCE updates; returns the last loss.
double train_discriminator(Discriminator& d, const Mat& samples_p,
                           const Mat& samples_q, Optimizer& opt, int steps);

/// Density-ratio KL estimate: mean over samples_p of clamp(logit, +-bound).
/// Differentiable with respect to samples_p; the discriminator is frozen.
Tensor kl_from_ratio(const Discriminator& d, const Tensor& samples_p,
                     double clamp_bound = 10.0);
double kl_from_ratio(const Discriminator& d, const Mat& samples_p,
                     double clamp_bound = 10.0);

/// Monte-Carlo cross-entropy -E_P[log q]; errors on non-finite evaluations.
double mc_cross_entropy(const std::function<double(const RowVec&)>& log_q,
                        const Mat& samples_p);

/// 95th-percentile threshold of the permutation null for mmd2 at the given
/// batch split, used by the same-distribution MMD tests.
double mmd2_permutation_threshold(const Mat& pooled, Index n_p, const RbfKernel& k,
                                  int permutations, double quantile, Rng& rng);

} // namespace biblab
