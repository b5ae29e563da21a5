#include "biblab/objectives.hpp"

#include <cmath>
#include <sstream>

namespace biblab {

// ---------------------------------------------------------------------------
// Binding and preset names
// ---------------------------------------------------------------------------

const char* to_string(TermABinding b) {
    return b == TermABinding::ClosedFormGaussian ? "closed-form-gaussian" : "unavailable";
}

const char* to_string(TermBBinding b) {
    switch (b) {
    case TermBBinding::DensityRatio: return "density-ratio";
    case TermBBinding::Mmd: return "mmd";
    case TermBBinding::Enumeration: return "enumeration";
    }
    return "?";
}

const char* to_string(TermCBinding b) {
    return b == TermCBinding::LaplacianLoglik ? "laplacian-loglik" : "gaussian-loglik";
}

const char* to_string(TermDBinding b) {
    switch (b) {
    case TermDBinding::DensityRatio: return "density-ratio";
    case TermDBinding::Enumeration: return "enumeration";
    case TermDBinding::Off: return "off";
    }
    return "?";
}

TermBBinding term_b_binding_from_string(const std::string& s) {
    if (s == "density-ratio") return TermBBinding::DensityRatio;
    if (s == "mmd") return TermBBinding::Mmd;
    if (s == "enumeration") return TermBBinding::Enumeration;
    throw BindingError("unknown term-b binding '" + s +
                       "' (valid: density-ratio, mmd, enumeration)");
}

TermCBinding term_c_binding_from_string(const std::string& s) {
    if (s == "laplacian-loglik") return TermCBinding::LaplacianLoglik;
    if (s == "gaussian-loglik") return TermCBinding::GaussianLoglik;
    throw BindingError("unknown term-c binding '" + s +
                       "' (valid: laplacian-loglik, gaussian-loglik)");
}

TermDBinding term_d_binding_from_string(const std::string& s) {
    if (s == "density-ratio") return TermDBinding::DensityRatio;
    if (s == "enumeration") return TermDBinding::Enumeration;
    if (s == "off") return TermDBinding::Off;
    throw BindingError("unknown term-d binding '" + s +
                       "' (valid: density-ratio, enumeration, off)");
}

const char* to_string(PresetName p) {
    switch (p) {
    case PresetName::VAE: return "VAE";
    case PresetName::BetaVAE: return "BetaVAE";
    case PresetName::AAE: return "AAE";
    case PresetName::InfoVAE: return "InfoVAE";
    case PresetName::GAN: return "GAN";
    case PresetName::VAEGAN: return "VAEGAN";
    case PresetName::ShannonAE: return "ShannonAE";
    case PresetName::GCAE: return "GCAE";
    case PresetName::SupervisedIB: return "SupervisedIB";
    case PresetName::BIBAE: return "BIBAE";
    }
    return "?";
}

PresetName preset_from_string(const std::string& s) {
    for (PresetName p : {PresetName::VAE, PresetName::BetaVAE, PresetName::AAE,
                         PresetName::InfoVAE, PresetName::GAN, PresetName::VAEGAN,
                         PresetName::ShannonAE, PresetName::GCAE,
                         PresetName::SupervisedIB, PresetName::BIBAE}) {
        if (s == to_string(p)) return p;
    }
    throw BindingError("unknown preset '" + s + "'");
}

PresetConfig preset(PresetName name) {
    PresetConfig cfg;
    cfg.name = name;
    switch (name) {
    case PresetName::VAE:
    case PresetName::BetaVAE:
        // A + C only; BetaVAE is the same transcription with beta free
        cfg.weights = {1.0, 0.0, 1.0, 0.0, 1.0, 1.0};
        cfg.bindings = {TermABinding::ClosedFormGaussian, TermBBinding::DensityRatio,
                        TermCBinding::LaplacianLoglik, TermDBinding::Off};
        cfg.encoder = EncoderKind::GaussianHead;
        break;
    case PresetName::AAE:
        // B (as a penalty) + C with a deterministic encoder
        cfg.weights = {0.0, 1.0, 1.0, 0.0, 1.0, -1.0};
        cfg.bindings = {TermABinding::Unavailable, TermBBinding::DensityRatio,
                        TermCBinding::LaplacianLoglik, TermDBinding::Off};
        cfg.encoder = EncoderKind::Deterministic;
        break;
    case PresetName::InfoVAE:
        // A - B + C
        cfg.weights = {1.0, 1.0, 1.0, 0.0, 1.0, 1.0};
        cfg.bindings = {TermABinding::ClosedFormGaussian, TermBBinding::DensityRatio,
                        TermCBinding::LaplacianLoglik, TermDBinding::Off};
        cfg.encoder = EncoderKind::GaussianHead;
        break;
    case PresetName::GAN:
        // no encoder: latents come from the prior, C + D remain
        cfg.weights = {0.0, 0.0, 1.0, 1.0, 1.0, 1.0};
        cfg.bindings = {TermABinding::Unavailable, TermBBinding::DensityRatio,
                        TermCBinding::LaplacianLoglik, TermDBinding::DensityRatio};
        cfg.encoder = std::nullopt;
        break;
    case PresetName::VAEGAN:
        // A + C + D
        cfg.weights = {1.0, 0.0, 1.0, 1.0, 1.0, 1.0};
        cfg.bindings = {TermABinding::ClosedFormGaussian, TermBBinding::DensityRatio,
                        TermCBinding::LaplacianLoglik, TermDBinding::DensityRatio};
        cfg.encoder = EncoderKind::GaussianHead;
        break;
    case PresetName::ShannonAE:
        // rate + C through the hard quantizer
        cfg.weights = {1.0, 0.0, 1.0, 0.0, 1.0, 1.0};
        cfg.bindings = {TermABinding::Unavailable, TermBBinding::DensityRatio,
                        TermCBinding::GaussianLoglik, TermDBinding::Off};
        cfg.encoder = EncoderKind::Deterministic;
        cfg.quantized = true;
        break;
    case PresetName::GCAE:
        // rate + C + D with dithered decoding
        cfg.weights = {1.0, 0.0, 1.0, 1.0, 1.0, 1.0};
        cfg.bindings = {TermABinding::Unavailable, TermBBinding::DensityRatio,
                        TermCBinding::GaussianLoglik, TermDBinding::DensityRatio};
        cfg.encoder = EncoderKind::Deterministic;
        cfg.quantized = true;
        cfg.dithered = true;
        break;
    case PresetName::SupervisedIB:
        // A bound on I(X;Z) plus the class prediction term
        cfg.weights = {1.0, 0.0, 1.0, 0.0, 1.0, 1.0};
        cfg.bindings = {TermABinding::ClosedFormGaussian, TermBBinding::DensityRatio,
                        TermCBinding::GaussianLoglik, TermDBinding::Off};
        cfg.encoder = EncoderKind::GaussianHead;
        break;
    case PresetName::BIBAE:
        cfg.weights = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
        cfg.bindings = {TermABinding::ClosedFormGaussian, TermBBinding::DensityRatio,
                        TermCBinding::LaplacianLoglik, TermDBinding::DensityRatio};
        cfg.encoder = EncoderKind::GaussianHead;
        break;
    }
    return cfg;
}

std::string preset_table_text() {
    std::ostringstream os;
    os << "preset        w_a w_b w_c w_d b_sign  term_a                term_b         "
          "term_c            term_d         encoder               quantized dithered\n";
    for (PresetName p : {PresetName::VAE, PresetName::BetaVAE, PresetName::AAE,
                         PresetName::InfoVAE, PresetName::GAN, PresetName::VAEGAN,
                         PresetName::ShannonAE, PresetName::GCAE,
                         PresetName::SupervisedIB, PresetName::BIBAE}) {
        PresetConfig c = preset(p);
        auto pad = [](std::string s, std::size_t w) {
            s.resize(std::max(s.size(), w), ' ');
            return s;
        };
        os << pad(to_string(p), 14);
        os << c.weights.w_a << "   " << c.weights.w_b << "   " << c.weights.w_c << "   "
           << c.weights.w_d << "   " << (c.weights.b_sign < 0 ? "-1" : "+1") << "      ";
        os << pad(to_string(c.bindings.a), 22) << pad(to_string(c.bindings.b), 15)
           << pad(to_string(c.bindings.c), 18) << pad(to_string(c.bindings.d), 15);
        os << pad(c.encoder ? to_string(*c.encoder) : "none", 22);
        os << (c.quantized ? "yes" : "no") << "        " << (c.dithered ? "yes" : "no")
           << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Loss evaluation
// ---------------------------------------------------------------------------

std::vector<Parameter*> BibModels::parameters() {
    std::vector<Parameter*> out;
    if (encoder) {
        for (Parameter* p : encoder->parameters()) out.push_back(p);
    }
    if (decoder) {
        for (Parameter* p : decoder->parameters()) out.push_back(p);
    }
    return out;
}

void validate_bindings(const PresetConfig& cfg, const BibModels& models,
                       const Auxiliaries& aux) {
    const TermWeights& w = cfg.weights;
    const bool want_a = w.w_a > 0.0 && !cfg.quantized;
    const bool want_b = w.w_b > 0.0 && !cfg.quantized;
    const bool want_c = w.w_c > 0.0;
    const bool want_d = w.w_d > 0.0 && cfg.bindings.d != TermDBinding::Off;

    if (cfg.encoder) {
        if (!models.encoder) throw BindingError("preset requires an encoder, none supplied");
        if (models.encoder->spec().kind != *cfg.encoder) {
            throw BindingError(std::string("preset requires a ") + to_string(*cfg.encoder) +
                               " encoder, got " + to_string(models.encoder->spec().kind));
        }
    }
    if (want_a) {
        if (cfg.bindings.a != TermABinding::ClosedFormGaussian) {
            throw BindingError("term A is weighted but its binding is unavailable");
        }
        if (!cfg.encoder || *cfg.encoder != EncoderKind::GaussianHead) {
            throw BindingError("closed-form term A needs a gaussian-head encoder; the "
                               "posterior of a noise-injection or deterministic encoder "
                               "is intractable");
        }
    }
    if (want_b && cfg.bindings.b == TermBBinding::DensityRatio && !aux.disc_b) {
        throw BindingError("term B density-ratio binding needs a latent discriminator");
    }
    if (want_b && cfg.bindings.b == TermBBinding::Enumeration) {
        throw BindingError("enumeration binding only applies in discrete mode");
    }
    if (want_c && !models.decoder) throw BindingError("term C needs a decoder");
    if (want_d && cfg.bindings.d == TermDBinding::DensityRatio && !aux.disc_d) {
        throw BindingError("term D density-ratio binding needs a data discriminator");
    }
    if (cfg.quantized && !models.codebook) {
        throw BindingError("quantized preset needs a codebook");
    }
    if (!cfg.encoder && !cfg.quantized && (w.w_a > 0.0 || w.w_b > 0.0)) {
        throw BindingError("preset without an encoder cannot weight terms A or B");
    }
}

namespace {

Mat normal_matrix(Index rows, Index cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
    return m;
}

Tensor reconstruction_loglik(const PresetConfig& cfg, const BibModels& models,
                             const Tensor& x, const Tensor& x_hat) {
    if (cfg.bindings.c == TermCBinding::LaplacianLoglik) {
        return log_prob_laplacian_mean(models.laplacian, x, x_hat);
    }
    return log_prob_gaussian_mean(models.gaussian, x, x_hat);
}

} // namespace

LossResult bib_loss(const Mat& batch_x, BibModels& models, const PresetConfig& cfg,
                    Auxiliaries& aux, Rng& rng, const Mat* eps_override) {
    validate_bindings(cfg, models, aux);
    const TermWeights& w = cfg.weights;
    const Index batch = batch_x.rows();
    const Tensor x = Tensor::matrix(batch_x);

    LossReport report;
    Tensor zero = Tensor::scalar(0.0);
    Tensor a_t = zero, b_t = zero, c_t = zero, d_t = zero;

    // -- latents ------------------------------------------------------------
    Tensor z;
    std::optional<PosteriorBatch> posterior;
    if (cfg.quantized) {
        // two-phase contract: the quantizer is a hard assignment, so the
        // encoder receives no gradient here
        Rng enc_rng = rng; // encoder draws nothing for the deterministic kind
        Mat latents = models.encoder->encode_values(batch_x, enc_rng);
        QuantizeResult q = quantize(*models.codebook, latents);
        Mat decoded_from = q.centroids_out;
        if (cfg.dithered && models.dither_sigma > 0.0) {
            decoded_from += models.dither_sigma * normal_matrix(batch, decoded_from.cols(), rng);
        }
        z = Tensor::matrix(std::move(decoded_from));
        report.a = codebook_rate(*models.codebook);
        report.a_kind = "rate";
        a_t = Tensor::scalar(report.a);
    } else if (!cfg.encoder) {
        z = Tensor::matrix(models.latent_prior.sample(batch, rng));
    } else {
        EncodeResult enc = models.encoder->encode(x, rng, eps_override);
        z = enc.z;
        posterior = enc.posterior;
    }

    // -- term A: E_x KL(q(z|x) || p(z)) --------------------------------------
    if (!cfg.quantized && w.w_a > 0.0) {
        a_t = kl_to_std_normal_mean(posterior->dist());
        report.a = a_t.scalar_value();
        report.a_kind = to_string(TermABinding::ClosedFormGaussian);
    }

    // -- term B: KL(q(z) || p(z)) --------------------------------------------
    if (!cfg.quantized && w.w_b > 0.0) {
        const Index n_prior = batch;
        if (cfg.bindings.b == TermBBinding::DensityRatio) {
            b_t = kl_from_ratio(*aux.disc_b, z, aux.clamp_bound);
            report.b_kind = to_string(TermBBinding::DensityRatio);
        } else {
            Mat prior_draw = models.latent_prior.sample(n_prior, rng);
            RbfKernel kernel = aux.kernel_b
                                   ? *aux.kernel_b
                                   : RbfKernel::median_scaled(z.value(), prior_draw);
            b_t = mmd2_unbiased(z, Tensor::matrix(prior_draw), kernel);
            report.b_kind = to_string(TermBBinding::Mmd);
        }
        report.b = b_t.scalar_value();
    }

    // -- term C: E[log p(x|z)] ------------------------------------------------
    if (w.w_c > 0.0) {
        Tensor x_hat = models.decoder->forward(z);
        c_t = reconstruction_loglik(cfg, models, x, x_hat);
        report.c = c_t.scalar_value();
        report.c_kind = to_string(cfg.bindings.c);
    }

    // -- term D: KL(p_data(x) || p_model(x)) ----------------------------------
    if (w.w_d > 0.0 && cfg.bindings.d == TermDBinding::DensityRatio) {
        d_t = kl_from_ratio(*aux.disc_d, x, aux.clamp_bound);
        report.d = d_t.scalar_value();
        report.d_kind = to_string(TermDBinding::DensityRatio);
    }

    // -- total ----------------------------------------------------------------
    Tensor total = add(add(scale(a_t, w.w_a), scale(b_t, -w.b_sign * w.w_b)),
                       add(scale(c_t, -w.beta * w.w_c), scale(d_t, w.beta * w.w_d)));
    report.total = total.scalar_value();
    return {report, total};
}

LossResult supervised_ib_loss(const Mat& batch_x, const std::vector<int>& labels,
                              Encoder& encoder, Mlp& classifier,
                              const TermWeights& weights, TermBBinding b_binding,
                              Auxiliaries& aux, Rng& rng, const Mat* eps_override) {
    if (static_cast<Index>(labels.size()) != batch_x.rows()) {
        throw BindingError("supervised_ib_loss: label count != batch size");
    }
    const Tensor x = Tensor::matrix(batch_x);
    EncodeResult enc = encoder.encode(x, rng, eps_override);

    LossReport report;
    Tensor zero = Tensor::scalar(0.0);
    Tensor a_t = zero, b_t = zero;
    if (weights.w_a > 0.0) {
        if (!enc.posterior) {
            throw BindingError("closed-form term A needs a gaussian-head encoder");
        }
        a_t = kl_to_std_normal_mean(enc.posterior->dist());
        report.a = a_t.scalar_value();
        report.a_kind = to_string(TermABinding::ClosedFormGaussian);
    }
    if (weights.w_b > 0.0) {
        if (b_binding == TermBBinding::DensityRatio) {
            if (!aux.disc_b) throw BindingError("term B needs a latent discriminator");
            b_t = kl_from_ratio(*aux.disc_b, enc.z, aux.clamp_bound);
            report.b_kind = to_string(TermBBinding::DensityRatio);
        } else {
            StandardNormalPrior prior(enc.z.cols());
            Mat prior_draw = prior.sample(enc.z.rows(), rng);
            RbfKernel kernel = aux.kernel_b
                                   ? *aux.kernel_b
                                   : RbfKernel::median_scaled(enc.z.value(), prior_draw);
            b_t = mmd2_unbiased(enc.z, Tensor::matrix(prior_draw), kernel);
            report.b_kind = to_string(TermBBinding::Mmd);
        }
        report.b = b_t.scalar_value();
    }

    Tensor logits = classifier.forward(enc.z);
    Tensor ce = softmax_cross_entropy(logits, labels);
    Tensor c_t = negate(ce); // E[log p(c|z)]
    report.c = c_t.scalar_value();
    report.c_kind = "classifier-loglik";

    Tensor total = add(add(scale(a_t, weights.w_a), scale(b_t, -weights.b_sign * weights.w_b)),
                       scale(c_t, -weights.beta * weights.w_c));
    report.total = total.scalar_value();
    return {report, total};
}

LossResult gan_generator_loss(const Mat& batch_x, Mlp& decoder,
                              const StandardNormalPrior& prior,
                              const Discriminator& disc_d, double lambda,
                              Auxiliaries& aux, Rng& rng) {
    const Index batch = batch_x.rows();
    const Tensor x = Tensor::matrix(batch_x);
    Tensor z = Tensor::matrix(prior.sample(batch, rng)); // random pairing with data rows
    Tensor x_hat = decoder.forward(z);

    Tensor l1 = scale(sum(abs(sub(x, x_hat))), 1.0 / static_cast<double>(batch));
    Tensor d_t = kl_from_ratio(disc_d, x, aux.clamp_bound);

    LossReport report;
    report.c = -l1.scalar_value();
    report.c_kind = "paired-l1";
    report.d = d_t.scalar_value();
    report.d_kind = to_string(TermDBinding::DensityRatio);
    Tensor total = add(d_t, scale(l1, lambda));
    report.total = total.scalar_value();
    return {report, total};
}

// ---------------------------------------------------------------------------
// Discrete mode
// ---------------------------------------------------------------------------

LossReport bib_loss_discrete(const oracle::DiscreteWorld& world,
                             const TermWeights& weights, const Mat* decoder_table) {
    world.validate();
    LossReport report;
    oracle::FirstTermDecomposition dec = oracle::decompose_first_term(world);
    report.a = dec.term_a;
    report.b = dec.term_b;
    report.a_kind = "enumeration";
    report.b_kind = "enumeration";
    if (decoder_table) {
        const Mat& dt = *decoder_table;
        if (dt.rows() != world.nz() || dt.cols() != world.nx()) {
            throw BindingError("bib_loss_discrete: decoder table must be |Z| x |X|");
        }
        double c = 0.0; // E_{p(x) q(z|x)}[log p(x|z)]
        for (Index xx = 0; xx < world.nx(); ++xx) {
            for (Index zz = 0; zz < world.nz(); ++zz) {
                const double joint = world.px[xx] * world.enc(xx, zz);
                if (joint > 0.0) {
                    if (dt(zz, xx) <= 0.0) {
                        throw BindingError("bib_loss_discrete: decoder assigns zero "
                                           "to a reachable (z,x) pair");
                    }
                    c += joint * std::log(dt(zz, xx));
                }
            }
        }
        report.c = c;
        report.c_kind = "enumeration";
        Vec generated = dt.transpose() * world.prior; // p_model(x)
        report.d = oracle::exact_kl(world.px, generated);
        report.d_kind = "enumeration";
    }
    report.total = weights.w_a * report.a - weights.b_sign * weights.w_b * report.b -
                   weights.beta * (weights.w_c * report.c - weights.w_d * report.d);
    return report;
}

} // namespace biblab
