#pragma once

#include "biblab/distributions.hpp"
#include "biblab/estimators.hpp"
#include "biblab/models.hpp"
#include "biblab/oracle.hpp"

#include <optional>
#include <string>

namespace biblab {

struct BindingError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Term weights and estimator bindings
// ---------------------------------------------------------------------------

/**
 * Coefficients of the four-term objective
 *
 *   total = w_a * A - b_sign * w_b * B - beta * (w_c * C - w_d * D)
 *
 * with A the posterior-to-prior KL, B the aggregated-posterior-to-prior KL,
 * C the reconstruction log-likelihood and D the data-to-model KL. The
 * canonical composition has b_sign = +1 (B subtracted inside the first
 * mutual-information term); b_sign = -1 turns B into a penalty, which is how
 * the adversarial-autoencoder objective is transcribed.
 */
struct TermWeights {
    double w_a = 1.0;
    double w_b = 1.0;
    double w_c = 1.0;
    double w_d = 1.0;
    double beta = 1.0;
    double b_sign = 1.0;
};

enum class TermABinding { ClosedFormGaussian, Unavailable };
enum class TermBBinding { DensityRatio, Mmd, Enumeration };
enum class TermCBinding { LaplacianLoglik, GaussianLoglik };
enum class TermDBinding { DensityRatio, Enumeration, Off };

struct TermBindings {
    TermABinding a = TermABinding::ClosedFormGaussian;
    TermBBinding b = TermBBinding::DensityRatio;
    TermCBinding c = TermCBinding::LaplacianLoglik;
    TermDBinding d = TermDBinding::DensityRatio;
};

const char* to_string(TermABinding b);
const char* to_string(TermBBinding b);
const char* to_string(TermCBinding b);
const char* to_string(TermDBinding b);
TermBBinding term_b_binding_from_string(const std::string& s);
TermCBinding term_c_binding_from_string(const std::string& s);
TermDBinding term_d_binding_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

enum class PresetName {
    VAE,
    BetaVAE,
    AAE,
    InfoVAE,
    GAN,
    VAEGAN,
    ShannonAE,
    GCAE,
    SupervisedIB,
    BIBAE,
};

const char* to_string(PresetName p);
PresetName preset_from_string(const std::string& s);

/// A preset pins weights, bindings and the encoder requirement so that the
/// four-term objective transcribes one known method.
struct PresetConfig {
    PresetName name = PresetName::BIBAE;
    TermWeights weights;
    TermBindings bindings;
    /// Required encoder form; empty means latents are drawn from the prior
    /// and no encoder participates.
    std::optional<EncoderKind> encoder = EncoderKind::GaussianHead;
    /// Latents pass through the hard vector quantizer; the A slot reports
    /// the codebook rate and B is off.
    bool quantized = false;
    /// Quantized centroids are dithered before decoding.
    bool dithered = false;
};

PresetConfig preset(PresetName name);

/// Plain-text preset reference table (one line per preset).
std::string preset_table_text();

// ---------------------------------------------------------------------------
// Loss evaluation
// ---------------------------------------------------------------------------

/// Per-batch values of the four terms and the assembled total. c is the
/// log-likelihood term, so it enters the total negated.
struct LossReport {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double d = 0.0;
    double total = 0.0;
    std::string a_kind = "off";
    std::string b_kind = "off";
    std::string c_kind = "off";
    std::string d_kind = "off";
};

/// Trainable actors of one objective instance.
struct BibModels {
    Encoder* encoder = nullptr; // null only when the preset has no encoder
    Mlp* decoder = nullptr;
    StandardNormalPrior latent_prior{2};
    LaplacianLikelihood laplacian{1.0};
    GaussianLikelihood gaussian{1.0};
    Codebook* codebook = nullptr; // quantized presets
    double dither_sigma = 0.0;

    std::vector<Parameter*> parameters();
};

/// Estimator auxiliaries. Discriminators are trained in alternation by the
/// harness and enter the loss as constants.
struct Auxiliaries {
    Discriminator* disc_b = nullptr; // latent space, q(z) vs prior
    Discriminator* disc_d = nullptr; // data space, data vs generated
    std::optional<RbfKernel> kernel_b; // fixed MMD kernel; median-scaled per batch if absent
    double clamp_bound = 10.0;
};

struct LossResult {
    LossReport report;
    Tensor total; // differentiable under the active tape
};

/// Rejects binding/model combinations the estimators cannot serve (for
/// example a closed-form A with a noise-injection encoder).
void validate_bindings(const PresetConfig& cfg, const BibModels& models,
                       const Auxiliaries& aux);

/**
 * The four-term objective on one batch. Terms with zero effective weight are
 * skipped and reported as "off". eps_override replaces the gaussian-head
 * noise draw (B x n_z), which pins the loss for oracle comparisons and
 * finite-difference checks.
 */
LossResult bib_loss(const Mat& batch_x, BibModels& models, const PresetConfig& cfg,
                    Auxiliaries& aux, Rng& rng, const Mat* eps_override = nullptr);

/**
 * Supervised objective: w_a*A - b_sign*w_b*B - beta*C with
 * C = E[log p(c|z)] = -(classifier cross-entropy). The classifier plays the
 * decoder's role and must emit one logit per class.
 */
LossResult supervised_ib_loss(const Mat& batch_x, const std::vector<int>& labels,
                              Encoder& encoder, Mlp& classifier,
                              const TermWeights& weights, TermBBinding b_binding,
                              Auxiliaries& aux, Rng& rng,
                              const Mat* eps_override = nullptr);

/**
 * Generator-side objective of the adversarial reduction:
 * total = D + lambda * E|x - g(z)|_1 with z drawn from the prior and paired
 * randomly with data rows. The report stores the negative mean l1 in c.
 */
LossResult gan_generator_loss(const Mat& batch_x, Mlp& decoder,
                              const StandardNormalPrior& prior,
                              const Discriminator& disc_d, double lambda,
                              Auxiliaries& aux, Rng& rng);

// ---------------------------------------------------------------------------
// Discrete (enumeration) mode
// ---------------------------------------------------------------------------

/**
 * Exact evaluation of the four terms on a fully enumerated world. a and b
 * come from the exact first-term decomposition, so a - b equals I(X;Z) to
 * enumeration precision. decoder_table, when given, is p(x|z) (|Z| x |X|,
 * rows sum to 1) and supplies exact C and D.
 */
LossReport bib_loss_discrete(const oracle::DiscreteWorld& world,
                             const TermWeights& weights,
                             const Mat* decoder_table = nullptr);

} // namespace biblab
