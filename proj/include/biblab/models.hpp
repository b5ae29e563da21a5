#pragma once

#include "biblab/distributions.hpp"
#include "biblab/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace biblab {

enum class Activation { Tanh, Relu };

/**
 * Plain fully connected network, linear output layer. Forward passes go
 * through the active tape; parameters must be watched explicitly, which
 * forward() does.
 */
class Mlp {
  public:
    /// widths = {in, hidden..., out}. Hidden weights use the symmetric
    /// uniform fan-in/fan-out init, biases start at zero. zero_init_last
    /// zeroes the output layer entirely.
    Mlp(const std::vector<Index>& widths, Activation act, Rng& rng,
        const std::string& name_prefix, bool zero_init_last = false);

    Tensor forward(const Tensor& x);
    /// Forward with parameters held constant (no tape nodes for weights):
    /// gradients flow through x only.
    Tensor forward_frozen(const Tensor& x) const;
    Mat forward_values(const Mat& x) const;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    Index input_dim() const { return widths_.front(); }
    Index output_dim() const { return widths_.back(); }

  private:
    Tensor forward_impl(const Tensor& x, bool watch_params) const;

    std::vector<Index> widths_;
    Activation act_;
    mutable std::vector<Parameter> weights_;
    mutable std::vector<Parameter> biases_;
};

enum class EncoderKind { Deterministic, GaussianHead, AdditiveInputNoise, ConcatNoise };

const char* to_string(EncoderKind k);

/// Gaussian posterior batch emitted by a gaussian-head encoder.
struct PosteriorBatch {
    Tensor mu;        // B x n_z
    Tensor log_sigma; // B x n_z
    DiagGaussian dist() const { return DiagGaussian(mu, log_sigma); }
};

struct EncodeResult {
    Tensor z; // B x n_z
    std::optional<PosteriorBatch> posterior;
};

/**
 * The encoder family: deterministic z = f(x), the gaussian head
 * z = mu(x) + sigma(x).*eps with tractable posterior, and the two
 * noise-injection forms z = f(x + eps) and z = f([x, eps]) whose posteriors
 * are intractable.
 */
class Encoder {
  public:
    struct Spec {
        EncoderKind kind = EncoderKind::GaussianHead;
        Index input_dim = 2;
        Index latent_dim = 2;
        std::vector<Index> hidden = {32, 32};
        Activation act = Activation::Tanh;
        Index noise_dim = 0;      // concat-noise only
        double noise_sigma = 0.0; // additive-input-noise only
        /// Zero the head layer so a fresh gaussian-head posterior equals the
        /// prior exactly (mu = 0, log sigma = 0).
        bool zero_init_head = true;
    };

    Encoder(Spec spec, Rng& rng);

    /// eps_override replaces the drawn noise (gaussian-head only); it must be
    /// B x latent_dim.
    EncodeResult encode(const Tensor& x, Rng& rng,
                        const Mat* eps_override = nullptr);
    Mat encode_values(const Mat& x, Rng& rng);

    const Spec& spec() const { return spec_; }
    std::vector<Parameter*> parameters() { return body_.parameters(); }
    Mlp& body() { return body_; }

  private:
    Spec spec_;
    Mlp body_;
};

/// Decoder forward pass, x_hat = g(z).
Tensor decode(Mlp& g, const Tensor& z);
Mat decode_values(const Mlp& g, const Mat& z);

/// Mean softmax cross-entropy of logits (B x K) against integer labels in
/// [0, K). A single tape operation with adjoint (softmax - onehot)/B.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Vector quantization
// ---------------------------------------------------------------------------

/**
 * L latent centroids with usage counts from the last assignment pass.
 * Assignment is hard nearest-neighbor in l2, ties to the lowest index.
 */
struct Codebook {
    Mat centroids; // L x n_z
    std::vector<long> usage_counts;

    Index size() const { return centroids.rows(); }
    Index dim() const { return centroids.cols(); }

    /// Usage frequencies as an atomic prior (requires nonzero total usage).
    CodebookPrior prior() const;
};

struct QuantizeResult {
    std::vector<Index> indices;
    Mat centroids_out; // row i = centroid assigned to z row i
};

/// Nearest-centroid hard assignment; refreshes cb.usage_counts.
QuantizeResult quantize(Codebook& cb, const Mat& z);

/// Empirical entropy of usage frequencies, nats.
double codebook_rate(const Codebook& cb);

/// k-means with k-means++ seeding; iters = 0 returns the seeds.
Codebook fit_codebook(const Mat& latents, Index count, int iters, Rng& rng);

/// Mean squared l2 distance from rows of z to their assigned centroids.
double quantization_distortion(Codebook& cb, const Mat& z);

/// centroid + u, u ~ N(0, u_sigma^2 I).
RowVec dither(const RowVec& centroid, double u_sigma, Rng& rng);

} // namespace biblab
