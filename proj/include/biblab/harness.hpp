#pragma once

#include "biblab/checkpoint.hpp"
#include "biblab/objectives.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace biblab {

/// Raised when a training loss turns non-finite; carries the step and the
/// term that broke first.
struct DivergenceError : std::runtime_error {
    DivergenceError(long step_, std::string term_);
    long step;
    std::string term;
};

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

class Adam : public Optimizer {
  public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam();
    explicit Adam(Options opt);
    void step(const std::vector<Parameter*>& params) override;

  private:
    struct State {
        Mat m, v;
        long t = 0;
    };
    Options opt_;
    std::unordered_map<Parameter*, State> state_;
};

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

enum class DatasetKind { Gmm2d, Ring2d, LinearGaussian, LabeledGmm, DiscreteWorldSamples };

const char* to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Gmm2d;
    std::uint64_t seed = 1;
    Index n_train = 4096;
    Index n_test = 1024;

    // gmm2d / labeled-gmm: isotropic components at the given means
    std::vector<RowVec> means = {(RowVec(2) << -2.0, 0.0).finished(),
                                 (RowVec(2) << 2.0, 0.0).finished()};
    double component_sigma = 0.5;

    // ring2d
    double ring_radius = 2.0;
    double ring_noise = 0.1;

    // linear-gaussian: x ~ N(0, I_dx), z = A x + noise
    Index lg_dim_x = 4;
    Index lg_dim_z = 2;
    double lg_noise_sigma = 1.0;

    // discrete-world-samples: one-hot rows drawn from px
    std::optional<oracle::DiscreteWorld> world;
};

struct Dataset {
    DatasetSpec spec;
    Mat train, test;
    std::vector<int> train_labels, test_labels;
    std::optional<oracle::LinearGaussianModel> lg;
    std::optional<oracle::DiscreteWorld> world;

    Index dim() const { return train.cols(); }
};

/// Deterministic generation: identical spec yields identical arrays; train
/// and test come from disjoint streams of the same seed lineage.
Dataset generate(const DatasetSpec& spec);

/// Extra samples from the same lineage (salted separately from train/test).
Mat extend_samples(const DatasetSpec& spec, Index n, std::uint64_t salt);

/// Seed derivation for independent substreams.
Rng derive_rng(std::uint64_t seed, std::uint64_t salt);

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

struct ModelSpec {
    Index input_dim = 2;
    Index latent_dim = 2;
    std::vector<Index> enc_hidden = {32, 32};
    std::vector<Index> dec_hidden = {32, 32};
    std::vector<Index> disc_hidden = {32, 32};
    Activation act = Activation::Tanh;
    double laplacian_lambda = 1.0;
    double gaussian_sigma = 1.0;
    Index noise_dim = 0;      // concat-noise encoder
    double noise_sigma = 0.0; // additive-input-noise encoder
    Index codebook_size = 8;  // quantized presets
    double dither_sigma = -1.0; // < 0 selects the automatic scale
    Index classes = 0;          // supervised runs
};

/**
 * Owns every actor a run needs: encoder/decoder, both discriminators when
 * the bindings call for them, and the codebook for quantized presets.
 */
struct Workbench {
    PresetConfig preset_cfg;
    ModelSpec model_spec;
    std::optional<Encoder> encoder;
    std::optional<Mlp> decoder;
    std::optional<Mlp> classifier;
    std::optional<Discriminator> disc_b;
    std::optional<Discriminator> disc_d;
    std::optional<Codebook> codebook;
    double dither_sigma = 0.0;

    BibModels models();
    Auxiliaries aux();
    std::vector<Parameter*> model_parameters();
    std::vector<Parameter*> disc_parameters();
    std::vector<Parameter*> all_parameters();

    void save(const std::string& path) const;
    void load(const std::string& path);
};

Workbench build_workbench(const PresetConfig& cfg, const ModelSpec& mspec,
                          std::uint64_t seed);

/// 0.1 of the mean nearest-neighbor distance between centroids (0 for L=1).
double default_dither_sigma(const Codebook& cb);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class DiscDSource { Prior, Reconstruction };

struct TrainConfig {
    long steps = 1000;
    Index batch_size = 128;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int disc_steps_per_gen_step = 3;
    long eval_every = 10;
    std::uint64_t seed = 1;
    double beta = 1.0;
    DiscDSource disc_d_source = DiscDSource::Prior;
    long quantized_pretrain_steps = -1; // < 0: same as steps
    int codebook_iters = 50;
};

struct MetricRecord {
    long step = 0;
    LossReport report;
    double disc_acc = std::numeric_limits<double>::quiet_NaN();
    double mmd = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> mi_exact;
};

struct MetricLog {
    std::vector<MetricRecord> records;
    bool has_oracle = false;

    std::string to_csv() const;
    std::string to_json() const;
};

/// Adam on the model parameters against the configured objective, with k
/// discriminator BCE steps before each model step for density-ratio
/// bindings. Discriminators and models never share a tape; the alternation
/// is asserted every step.
MetricLog train(Workbench& wb, const Dataset& data, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct DecomposeOptions {
    Index n_eval = 4096;
    int disc_train_steps = 1200;
    Index disc_batch = 256;
    double disc_lr = 1e-3;
    std::uint64_t seed = 7;
};

struct DecomposeReport {
    LossReport report;
    std::optional<double> mi_exact;      // discrete or linear-Gaussian data
    std::optional<double> term_a_exact;
    std::optional<double> term_b_exact;
};

/// Estimates all four terms on held-out data, training fresh estimator
/// auxiliaries where the bindings need them; reports exact values alongside
/// when the dataset carries an enumerable or closed-form world.
DecomposeReport decompose(Workbench& wb, const Dataset& data,
                          const DecomposeOptions& opt);

// ---------------------------------------------------------------------------
// Rate-distortion and generative compression
// ---------------------------------------------------------------------------

struct RdPoint {
    Index codebook_size;
    double rate_nats;
    double rate_bits;
    double distortion; // mean squared reconstruction error on test data
};

/// Two-phase pipeline per codebook size: deterministic autoencoder training,
/// k-means on frozen latents, decoder fine-tuning on quantized latents.
/// Output is sorted by codebook size.
std::vector<RdPoint> rd_curve(const Dataset& data, const ModelSpec& mspec,
                              const std::vector<Index>& codebook_sizes,
                              const TrainConfig& cfg);

/// Quantizes x, then decodes n_draws dithered copies of its centroid.
std::vector<RowVec> gc_reconstruct(Workbench& wb, const RowVec& x, double u_sigma,
                                   int n_draws, Rng& rng);

// ---------------------------------------------------------------------------
// Novelty scoring
// ---------------------------------------------------------------------------

/// weight_disc * (-logit D(x)) + weight_recon * |x - reconstruction|_1;
/// higher means more novel. Requires a trained data discriminator when
/// weight_disc is nonzero.
double novelty_score(Workbench& wb, const RowVec& x, double weight_disc,
                     double weight_recon, Rng& rng);

Vec novelty_scores(Workbench& wb, const Mat& xs, double weight_disc,
                   double weight_recon, Rng& rng);

/// Area under the ROC curve for scores where positives should score higher.
double auroc(const Vec& negative_scores, const Vec& positive_scores);

// ---------------------------------------------------------------------------
// Gradient-check suite
// ---------------------------------------------------------------------------

struct GradcheckReport {
    double max_rel_err_ops = 0.0;
    double max_rel_err_composite = 0.0;
    int op_trials = 0;
    int composite_trials = 0;
};

/// Every primitive op plus a rotation of composite losses against the
/// central-difference oracle. Inputs are drawn away from the relu/abs/clamp
/// kinks, where the documented subgradient convention applies.
GradcheckReport run_gradcheck(std::uint64_t seed, int op_trials,
                              int composite_trials);

} // namespace biblab
