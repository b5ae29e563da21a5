#pragma once

#include "biblab/tensor.hpp"

#include <iosfwd>
#include <optional>
#include <string>

namespace biblab::oracle {

struct OracleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/**
 * Fully enumerated joint model over tiny alphabets. Ground truth for every
 * information quantity: nothing here is estimated.
 *
 * Tables:
 *   px          p(x), length |X|
 *   enc         q(z|x), |X| rows x |Z| cols, rows sum to 1
 *   prior       p(z), length |Z|
 *   labels      p(c,x) joint, |C| rows x |X| cols (optional)
 *   classifier  p(c|z) variational table, |Z| rows x |C| cols (optional)
 *
 * All logarithms are natural; conversion to bits is a presentation concern.
 */
struct DiscreteWorld {
    Vec px;
    Mat enc;
    Vec prior;
    std::optional<Mat> labels;
    std::optional<Mat> classifier;

    Index nx() const { return px.size(); }
    Index nz() const { return prior.size(); }
    Index nc() const { return labels ? labels->rows() : 0; }

    /// Throws OracleError when a table is malformed (negative entries, rows
    /// not summing to 1 within 1e-12, inconsistent alphabet sizes, sizes
    /// beyond the 16/16/8 caps).
    void validate() const;

    /// Encoder-induced latent marginal q(z) = sum_x p(x) q(z|x).
    Vec latent_marginal() const;
};

/// Closed-form test world: x ~ N(0, prior_cov), z = A x + n, n ~ N(0, noise_cov).
struct LinearGaussianModel {
    Mat prior_cov; // n x n, s.p.d.
    Mat enc_matrix; // n_z x n
    Mat noise_cov; // n_z x n_z, s.p.d.
};

enum class MiPair { XZ, ZC };

/// Exact mutual information in nats by double summation over the joint.
double exact_mi(const DiscreteWorld& w, MiPair pair);

struct FirstTermDecomposition {
    double term_a; // E_px[ KL(q(z|x) || p(z)) ]
    double term_b; // KL(q(z) || p(z))
    double mi;     // exact I(X;Z)
};

/// Splits I(X;Z) into the posterior-to-prior and marginal-to-prior parts;
/// mi = term_a - term_b exactly.
FirstTermDecomposition decompose_first_term(const DiscreteWorld& w);

struct SupervisedBound {
    double exact_izc; // exact I(Z;C) through the encoder
    double bound;     // H(C) - H(C|Z) under the variational classifier
};

/// Variational classification bound; bound <= exact_izc always, equality
/// when the classifier equals the true conditional p(c|z).
SupervisedBound supervised_bound(const DiscreteWorld& w);

/// True conditional p(c|z) induced by the world; the classifier achieving
/// the bound with equality.
Mat true_classifier(const DiscreteWorld& w);

/// I(X;Z) of the linear-Gaussian model:
/// 1/2 log det(A Sx A' + Sn) - 1/2 log det(Sn).
double lg_exact_mi(const LinearGaussianModel& m);

/// KL between plain probability tables; hard error when q lacks support
/// where p has mass.
double exact_kl(const Vec& p, const Vec& q);

/// Entropy of a table in nats, with 0 log 0 = 0.
double entropy(const Vec& p);

// ---------------------------------------------------------------------------
// World generation and text round-trip
// ---------------------------------------------------------------------------

struct WorldGenOptions {
    Index nx = 4;
    Index nz = 4;
    Index nc = 0;               // 0 = unlabeled
    bool deterministic_enc = false; // point-mass encoder rows
    bool with_classifier = false;   // random strictly-positive rows
    bool prior_is_marginal = false; // prior = q(z)
};

DiscreteWorld random_world(const WorldGenOptions& opt, Rng& rng);

/// Plain-text tabular format: one header line per table ("name rows cols"),
/// then rows of decimal probabilities.
void save_world(std::ostream& os, const DiscreteWorld& w);
DiscreteWorld load_world(std::istream& is);
std::string world_to_string(const DiscreteWorld& w);

} // namespace biblab::oracle
