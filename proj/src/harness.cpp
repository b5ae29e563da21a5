#include "biblab/harness.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace biblab {

DivergenceError::DivergenceError(long step_, std::string term_)
    : std::runtime_error("loss diverged at step " + std::to_string(step_) +
                         " (term " + term_ + " non-finite)"),
      step(step_), term(std::move(term_)) {}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam() : Adam(Options{}) {}

Adam::Adam(Options opt) : opt_(opt) {}

void Adam::step(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        State& s = state_[p];
        if (s.t == 0) {
            s.m = Mat::Zero(p->grad.rows(), p->grad.cols());
            s.v = Mat::Zero(p->grad.rows(), p->grad.cols());
        }
        ++s.t;
        s.m = opt_.beta1 * s.m + (1.0 - opt_.beta1) * p->grad;
        s.v = opt_.beta2 * s.v + (1.0 - opt_.beta2) * p->grad.cwiseProduct(p->grad);
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(s.t));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(s.t));
        Mat m_hat = s.m / bc1;
        Mat v_hat = s.v / bc2;
        p->value.value_mut().array() -=
            opt_.lr * m_hat.array() / (v_hat.array().sqrt() + opt_.eps);
        p->zero_grad();
    }
}

// ---------------------------------------------------------------------------
// Workbench
// ---------------------------------------------------------------------------

BibModels Workbench::models() {
    BibModels m;
    m.encoder = encoder ? &*encoder : nullptr;
    m.decoder = decoder ? &*decoder : nullptr;
    m.latent_prior = StandardNormalPrior(model_spec.latent_dim);
    m.laplacian = LaplacianLikelihood(model_spec.laplacian_lambda);
    m.gaussian = GaussianLikelihood(model_spec.gaussian_sigma);
    m.codebook = codebook ? &*codebook : nullptr;
    m.dither_sigma = dither_sigma;
    return m;
}

Auxiliaries Workbench::aux() {
    Auxiliaries a;
    a.disc_b = disc_b ? &*disc_b : nullptr;
    a.disc_d = disc_d ? &*disc_d : nullptr;
    return a;
}

std::vector<Parameter*> Workbench::model_parameters() {
    std::vector<Parameter*> out;
    if (encoder) {
        for (Parameter* p : encoder->parameters()) out.push_back(p);
    }
    if (decoder) {
        for (Parameter* p : decoder->parameters()) out.push_back(p);
    }
    if (classifier) {
        for (Parameter* p : classifier->parameters()) out.push_back(p);
    }
    return out;
}

std::vector<Parameter*> Workbench::disc_parameters() {
    std::vector<Parameter*> out;
    if (disc_b) {
        for (Parameter* p : disc_b->parameters()) out.push_back(p);
    }
    if (disc_d) {
        for (Parameter* p : disc_d->parameters()) out.push_back(p);
    }
    return out;
}

std::vector<Parameter*> Workbench::all_parameters() {
    std::vector<Parameter*> out = model_parameters();
    for (Parameter* p : disc_parameters()) out.push_back(p);
    return out;
}

void Workbench::save(const std::string& path) const {
    auto& self = const_cast<Workbench&>(*this); // snapshot only reads values
    std::vector<CheckpointEntry> entries = snapshot(self.all_parameters());
    if (codebook) {
        entries.push_back({"codebook.centroids",
                           {codebook->centroids.rows(), codebook->centroids.cols()},
                           Tensor::matrix(codebook->centroids).flat()});
        std::vector<double> counts;
        for (long c : codebook->usage_counts) counts.push_back(static_cast<double>(c));
        entries.push_back(
            {"codebook.counts", {static_cast<Index>(counts.size())}, counts});
    }
    write_checkpoint(path, entries);
}

void Workbench::load(const std::string& path) {
    std::vector<CheckpointEntry> entries = read_checkpoint(path);
    restore(entries, all_parameters());
    for (const auto& e : entries) {
        if (e.name == "codebook.centroids") {
            if (e.dims.size() != 2) throw CheckpointError("bad codebook dims");
            if (!codebook) codebook.emplace();
            codebook->centroids =
                Tensor::from_flat(e.dims, e.values).value();
        } else if (e.name == "codebook.counts") {
            if (!codebook) codebook.emplace();
            codebook->usage_counts.clear();
            for (double v : e.values) codebook->usage_counts.push_back(static_cast<long>(v));
        }
    }
}

Workbench build_workbench(const PresetConfig& cfg, const ModelSpec& mspec,
                          std::uint64_t seed) {
    Workbench wb;
    wb.preset_cfg = cfg;
    wb.model_spec = mspec;
    Rng enc_rng = derive_rng(seed, 11);
    Rng dec_rng = derive_rng(seed, 12);
    Rng db_rng = derive_rng(seed, 13);
    Rng dd_rng = derive_rng(seed, 14);
    Rng cls_rng = derive_rng(seed, 15);

    if (cfg.encoder) {
        Encoder::Spec es;
        es.kind = *cfg.encoder;
        es.input_dim = mspec.input_dim;
        es.latent_dim = mspec.latent_dim;
        es.hidden = mspec.enc_hidden;
        es.act = mspec.act;
        es.noise_dim = mspec.noise_dim;
        es.noise_sigma = mspec.noise_sigma;
        wb.encoder.emplace(es, enc_rng);
    }
    std::vector<Index> dec_widths;
    dec_widths.push_back(mspec.latent_dim);
    dec_widths.insert(dec_widths.end(), mspec.dec_hidden.begin(), mspec.dec_hidden.end());
    dec_widths.push_back(mspec.input_dim);
    wb.decoder.emplace(dec_widths, mspec.act, dec_rng, "decoder");

    const TermWeights& w = cfg.weights;
    const bool need_disc_b = !cfg.quantized && w.w_b > 0.0 &&
                             cfg.bindings.b == TermBBinding::DensityRatio;
    const bool need_disc_d = w.w_d > 0.0 && cfg.bindings.d == TermDBinding::DensityRatio;
    if (need_disc_b) {
        wb.disc_b.emplace(mspec.latent_dim, mspec.disc_hidden, mspec.act, db_rng,
                          "disc_b");
    }
    if (need_disc_d) {
        wb.disc_d.emplace(mspec.input_dim, mspec.disc_hidden, mspec.act, dd_rng,
                          "disc_d");
    }
    if (mspec.classes > 0) {
        std::vector<Index> cw;
        cw.push_back(mspec.latent_dim);
        cw.insert(cw.end(), mspec.dec_hidden.begin(), mspec.dec_hidden.end());
        cw.push_back(mspec.classes);
        wb.classifier.emplace(cw, mspec.act, cls_rng, "classifier");
    }
    wb.dither_sigma = std::max(0.0, mspec.dither_sigma);
    return wb;
}

double default_dither_sigma(const Codebook& cb) {
    if (cb.size() < 2) return 0.0;
    double total = 0.0;
    for (Index i = 0; i < cb.size(); ++i) {
        double nearest = std::numeric_limits<double>::infinity();
        for (Index j = 0; j < cb.size(); ++j) {
            if (j == i) continue;
            nearest = std::min(nearest, (cb.centroids.row(i) - cb.centroids.row(j)).norm());
        }
        total += nearest;
    }
    return 0.1 * total / static_cast<double>(cb.size());
}

// ---------------------------------------------------------------------------
// MetricLog
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

std::string MetricLog::to_csv() const {
    std::ostringstream os;
    os << "step,term_a,term_b,term_c,term_d,total,disc_acc,mmd";
    if (has_oracle) os << ",mi_exact";
    os << "\n";
    for (const MetricRecord& r : records) {
        os << r.step << ',' << fmt_double(r.report.a) << ',' << fmt_double(r.report.b)
           << ',' << fmt_double(r.report.c) << ',' << fmt_double(r.report.d) << ','
           << fmt_double(r.report.total) << ',' << fmt_double(r.disc_acc) << ','
           << fmt_double(r.mmd);
        if (has_oracle) {
            os << ',' << (r.mi_exact ? fmt_double(*r.mi_exact) : std::string("nan"));
        }
        os << "\n";
    }
    return os.str();
}

std::string MetricLog::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const MetricRecord& r : records) {
        nlohmann::json row{{"step", r.step},           {"term_a", r.report.a},
                           {"term_b", r.report.b},     {"term_c", r.report.c},
                           {"term_d", r.report.d},     {"total", r.report.total},
                           {"disc_acc", r.disc_acc},   {"mmd", r.mmd}};
        if (r.mi_exact) row["mi_exact"] = *r.mi_exact;
        arr.push_back(std::move(row));
    }
    return arr.dump(2);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

Mat sample_batch(const Mat& pool, Index batch, Rng& rng) {
    std::uniform_int_distribution<Index> pick(0, pool.rows() - 1);
    Mat out(batch, pool.cols());
    for (Index i = 0; i < batch; ++i) out.row(i) = pool.row(pick(rng));
    return out;
}

void require_zero_grads(const std::vector<Parameter*>& params, const char* who) {
    for (const Parameter* p : params) {
        if (p->grad.cwiseAbs().maxCoeff() != 0.0) {
            throw std::logic_error(std::string("alternation contract violated: ") + who +
                                   " received gradients outside its own update");
        }
    }
}

const char* worst_term(const LossReport& r) {
    if (!std::isfinite(r.a)) return "A";
    if (!std::isfinite(r.b)) return "B";
    if (!std::isfinite(r.c)) return "C";
    if (!std::isfinite(r.d)) return "D";
    return "total";
}

/// Negative samples for the data discriminator.
Mat generated_batch(Workbench& wb, const Mat& data_batch, DiscDSource source,
                    Rng& rng) {
    BibModels m = wb.models();
    const Index n = data_batch.rows();
    if (source == DiscDSource::Reconstruction && wb.encoder) {
        Mat z = wb.encoder->encode_values(data_batch, rng);
        if (wb.preset_cfg.quantized && wb.codebook) {
            z = quantize(*wb.codebook, z).centroids_out;
        }
        return decode_values(*wb.decoder, z);
    }
    Mat z = m.latent_prior.sample(n, rng);
    if (wb.preset_cfg.quantized && wb.codebook) {
        z = quantize(*wb.codebook, z).centroids_out;
    }
    return decode_values(*wb.decoder, z);
}

struct TrainPhaseConfig {
    PresetConfig preset;
    long steps;
    long step_offset;
};

void train_phase(Workbench& wb, const Dataset& data, const TrainConfig& cfg,
                 const TrainPhaseConfig& phase, Adam& model_opt, Adam& disc_b_opt,
                 Adam& disc_d_opt, Rng& train_rng, Rng& eval_rng, MetricLog& log) {
    BibModels models = wb.models();
    Auxiliaries aux = wb.aux();
    const TermWeights& w = phase.preset.weights;
    const bool use_disc_b = !phase.preset.quantized && w.w_b > 0.0 &&
                            phase.preset.bindings.b == TermBBinding::DensityRatio;
    const bool use_disc_d = w.w_d > 0.0 &&
                            phase.preset.bindings.d == TermDBinding::DensityRatio;
    const bool use_mmd_b = !phase.preset.quantized && w.w_b > 0.0 &&
                           phase.preset.bindings.b == TermBBinding::Mmd;

    std::vector<Parameter*> model_params = wb.model_parameters();
    std::vector<Parameter*> disc_params = wb.disc_parameters();

    for (long s = 0; s < phase.steps; ++s) {
        // discriminator updates first, on their own tapes
        if (use_disc_b) {
            for (int k = 0; k < cfg.disc_steps_per_gen_step; ++k) {
                Mat xb = sample_batch(data.train, cfg.batch_size, train_rng);
                Mat zb = wb.encoder->encode_values(xb, train_rng);
                if (phase.preset.quantized && wb.codebook) {
                    zb = quantize(*wb.codebook, zb).centroids_out;
                }
                Mat prior_draw = models.latent_prior.sample(zb.rows(), train_rng);
                discriminator_step(*wb.disc_b, zb, prior_draw, disc_b_opt);
            }
        }
        if (use_disc_d) {
            for (int k = 0; k < cfg.disc_steps_per_gen_step; ++k) {
                Mat xb = sample_batch(data.train, cfg.batch_size, train_rng);
                Mat gen = generated_batch(wb, xb, cfg.disc_d_source, train_rng);
                discriminator_step(*wb.disc_d, xb, gen, disc_d_opt);
            }
        }
        if (use_disc_b || use_disc_d) require_zero_grads(model_params, "model");

        // model update
        Mat batch = sample_batch(data.train, cfg.batch_size, train_rng);
        LossReport report;
        {
            Tape tape;
            LossResult res = bib_loss(batch, models, phase.preset, aux, train_rng);
            report = res.report;
            if (!std::isfinite(report.total)) {
                throw DivergenceError(phase.step_offset + s, worst_term(report));
            }
            tape.backward(res.total);
        }
        require_zero_grads(disc_params, "discriminator");
        model_opt.step(model_params);

        if (cfg.eval_every > 0 && s % cfg.eval_every == 0) {
            MetricRecord rec;
            rec.step = phase.step_offset + s;
            rec.report = report;
            const Index eval_n = std::min<Index>(256, data.test.rows());
            Mat ex = data.test.topRows(eval_n);
            if (wb.encoder) {
                Mat ez = wb.encoder->encode_values(ex, eval_rng);
                Mat ep = models.latent_prior.sample(eval_n, eval_rng);
                if (eval_n >= 2) {
                    rec.mmd = mmd2_unbiased(ez, ep, RbfKernel::median_scaled(ez, ep));
                }
                if (wb.disc_b) rec.disc_acc = discriminator_accuracy(*wb.disc_b, ez, ep);
            }
            if (!wb.disc_b && wb.disc_d) {
                Mat gen = generated_batch(wb, ex, cfg.disc_d_source, eval_rng);
                rec.disc_acc = discriminator_accuracy(*wb.disc_d, ex, gen);
            }
            if (data.lg) rec.mi_exact = oracle::lg_exact_mi(*data.lg);
            if (data.world) rec.mi_exact = oracle::exact_mi(*data.world, oracle::MiPair::XZ);
            log.records.push_back(std::move(rec));
        }
    }
}

} // namespace

MetricLog train(Workbench& wb, const Dataset& data, const TrainConfig& cfg) {
    wb.preset_cfg.weights.beta = cfg.beta;
    MetricLog log;
    log.has_oracle = data.lg.has_value() || data.world.has_value();

    Adam model_opt({cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    Adam disc_b_opt({cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    Adam disc_d_opt({cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    Rng train_rng = derive_rng(cfg.seed, 21);
    Rng eval_rng = derive_rng(cfg.seed, 22);

    long offset = 0;
    if (wb.preset_cfg.quantized) {
        const long pretrain = cfg.quantized_pretrain_steps < 0
                                  ? cfg.steps
                                  : cfg.quantized_pretrain_steps;
        if (pretrain == 0 && cfg.steps == 0) return log;
        // phase 1: plain reconstruction autoencoder
        PresetConfig warm = wb.preset_cfg;
        warm.quantized = false;
        warm.dithered = false;
        warm.weights.w_a = 0.0;
        warm.weights.w_b = 0.0;
        warm.weights.w_d = 0.0;
        train_phase(wb, data, cfg, {warm, pretrain, 0}, model_opt, disc_b_opt,
                    disc_d_opt, train_rng, eval_rng, log);
        // phase 2: codebook on frozen latents
        Rng km_rng = derive_rng(cfg.seed, 23);
        Mat latents = wb.encoder->encode_values(data.train, km_rng);
        wb.codebook = fit_codebook(latents, wb.model_spec.codebook_size,
                                   cfg.codebook_iters, km_rng);
        if (wb.model_spec.dither_sigma < 0.0) {
            wb.dither_sigma = default_dither_sigma(*wb.codebook);
        }
        offset = pretrain;
    }
    train_phase(wb, data, cfg, {wb.preset_cfg, cfg.steps, offset}, model_opt,
                disc_b_opt, disc_d_opt, train_rng, eval_rng, log);
    return log;
}

// ---------------------------------------------------------------------------
// Decompose
// ---------------------------------------------------------------------------

namespace {

/// Minibatched BCE training for a fresh estimator auxiliary.
void fit_aux_discriminator(Discriminator& d, const Mat& p, const Mat& q,
                           const DecomposeOptions& opt, Rng& rng) {
    Adam adam({opt.disc_lr, 0.9, 0.999, 1e-8});
    for (int s = 0; s < opt.disc_train_steps; ++s) {
        Mat pb = sample_batch(p, std::min(opt.disc_batch, p.rows()), rng);
        Mat qb = sample_batch(q, std::min(opt.disc_batch, q.rows()), rng);
        discriminator_step(d, pb, qb, adam);
    }
}

} // namespace

DecomposeReport decompose(Workbench& wb, const Dataset& data,
                          const DecomposeOptions& opt) {
    DecomposeReport out;
    const TermWeights& w = wb.preset_cfg.weights;

    // discrete mode is exact: enumerate, never estimate
    if (data.world) {
        out.report = bib_loss_discrete(*data.world, w);
        out.mi_exact = oracle::exact_mi(*data.world, oracle::MiPair::XZ);
        oracle::FirstTermDecomposition dec = oracle::decompose_first_term(*data.world);
        out.term_a_exact = dec.term_a;
        out.term_b_exact = dec.term_b;
        return out;
    }

    Rng rng = derive_rng(opt.seed, 31);
    Mat eval_x = opt.n_eval <= data.test.rows()
                     ? Mat(data.test.topRows(opt.n_eval))
                     : extend_samples(data.spec, opt.n_eval, 3);
    const Index n = eval_x.rows();
    BibModels models = wb.models();
    LossReport& rep = out.report;

    // latents and term A
    Mat z;
    if (wb.preset_cfg.quantized && wb.codebook && wb.encoder) {
        Mat raw = wb.encoder->encode_values(eval_x, rng);
        z = quantize(*wb.codebook, raw).centroids_out;
        rep.a = codebook_rate(*wb.codebook);
        rep.a_kind = "rate";
    } else if (wb.encoder) {
        EncodeResult enc = wb.encoder->encode(Tensor::matrix(eval_x), rng);
        z = enc.z.value();
        if (enc.posterior) {
            rep.a = kl_to_std_normal_mean(enc.posterior->dist()).scalar_value();
            rep.a_kind = to_string(TermABinding::ClosedFormGaussian);
        }
    } else {
        z = models.latent_prior.sample(n, rng);
    }

    // term B
    if (!wb.preset_cfg.quantized && wb.encoder) {
        Mat prior_draw = models.latent_prior.sample(n, rng);
        if (wb.preset_cfg.bindings.b == TermBBinding::Mmd) {
            rep.b = mmd2_unbiased(z, prior_draw, RbfKernel::median_scaled(z, prior_draw));
            rep.b_kind = to_string(TermBBinding::Mmd);
        } else {
            Rng disc_rng = derive_rng(opt.seed, 32);
            Discriminator fresh(z.cols(), wb.model_spec.disc_hidden, wb.model_spec.act,
                                disc_rng, "decompose_disc_b");
            fit_aux_discriminator(fresh, z, prior_draw, opt, disc_rng);
            rep.b = kl_from_ratio(fresh, z);
            rep.b_kind = to_string(TermBBinding::DensityRatio);
        }
    }

    // term C
    if (wb.decoder) {
        Mat x_hat = decode_values(*wb.decoder, z);
        Tensor xt = Tensor::matrix(eval_x), ht = Tensor::matrix(x_hat);
        if (wb.preset_cfg.bindings.c == TermCBinding::LaplacianLoglik) {
            rep.c = log_prob_laplacian_mean(models.laplacian, xt, ht).scalar_value();
        } else {
            rep.c = log_prob_gaussian_mean(models.gaussian, xt, ht).scalar_value();
        }
        rep.c_kind = to_string(wb.preset_cfg.bindings.c);
    }

    // term D
    if (wb.decoder && wb.preset_cfg.bindings.d == TermDBinding::DensityRatio) {
        Mat gen_z = models.latent_prior.sample(n, rng);
        if (wb.preset_cfg.quantized && wb.codebook) {
            gen_z = quantize(*wb.codebook, gen_z).centroids_out;
        }
        Mat generated = decode_values(*wb.decoder, gen_z);
        Rng disc_rng = derive_rng(opt.seed, 33);
        Discriminator fresh(eval_x.cols(), wb.model_spec.disc_hidden, wb.model_spec.act,
                            disc_rng, "decompose_disc_d");
        fit_aux_discriminator(fresh, eval_x, generated, opt, disc_rng);
        rep.d = kl_from_ratio(fresh, eval_x);
        rep.d_kind = to_string(TermDBinding::DensityRatio);
    }

    rep.total = w.w_a * rep.a - w.b_sign * w.w_b * rep.b -
                w.beta * (w.w_c * rep.c - w.w_d * rep.d);

    if (data.lg) {
        const oracle::LinearGaussianModel& m = *data.lg;
        const Mat cov_z = m.enc_matrix * m.prior_cov * m.enc_matrix.transpose() + m.noise_cov;
        const auto nz = static_cast<double>(cov_z.rows());
        auto logdet = [](const Mat& s) {
            Eigen::LLT<Mat> llt(s);
            return 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
        };
        out.mi_exact = oracle::lg_exact_mi(m);
        out.term_a_exact = 0.5 * ((m.enc_matrix * m.prior_cov * m.enc_matrix.transpose())
                                      .trace() +
                                  m.noise_cov.trace() - nz - logdet(m.noise_cov));
        out.term_b_exact = 0.5 * (cov_z.trace() - nz - logdet(cov_z));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rate–distortion sweep
// ---------------------------------------------------------------------------

std::vector<RdPoint> rd_curve(const Dataset& data, const ModelSpec& mspec,
                              const std::vector<Index>& codebook_sizes,
                              const TrainConfig& cfg) {
    if (codebook_sizes.empty()) throw std::invalid_argument("rd_curve: no codebook sizes");
    for (std::size_t i = 0; i < codebook_sizes.size(); ++i) {
        if (codebook_sizes[i] < 1) throw std::invalid_argument("rd_curve: L must be >= 1");
        if (i > 0 && codebook_sizes[i] <= codebook_sizes[i - 1]) {
            throw std::invalid_argument("rd_curve: codebook sizes must ascend");
        }
    }

    // phase 1: deterministic autoencoder trained on reconstruction only
    PresetConfig ae;
    ae.name = PresetName::ShannonAE;
    ae.weights = {0.0, 0.0, 1.0, 0.0, 1.0, 1.0};
    ae.bindings = {TermABinding::Unavailable, TermBBinding::DensityRatio,
                   TermCBinding::GaussianLoglik, TermDBinding::Off};
    ae.encoder = EncoderKind::Deterministic;
    Workbench wb = build_workbench(ae, mspec, cfg.seed);
    TrainConfig warm_cfg = cfg;
    warm_cfg.eval_every = 0;
    train(wb, data, warm_cfg);

    Rng enc_rng = derive_rng(cfg.seed, 41);
    Mat train_latents = wb.encoder->encode_values(data.train, enc_rng);
    Mat test_latents = wb.encoder->encode_values(data.test, enc_rng);

    std::vector<RdPoint> out;
    for (Index L : codebook_sizes) {
        Rng km_rng = derive_rng(cfg.seed, 42 + static_cast<std::uint64_t>(L));
        Codebook cb = fit_codebook(train_latents, L, cfg.codebook_iters, km_rng);
        QuantizeResult q = quantize(cb, test_latents);
        const double rate = codebook_rate(cb);
        Mat recon = decode_values(*wb.decoder, q.centroids_out);
        const double distortion = (data.test - recon).rowwise().squaredNorm().mean();
        out.push_back({L, rate, rate / std::numbers::ln2, distortion});
    }
    return out;
}

std::vector<RowVec> gc_reconstruct(Workbench& wb, const RowVec& x, double u_sigma,
                                   int n_draws, Rng& rng) {
    if (!wb.encoder || !wb.decoder || !wb.codebook) {
        throw std::invalid_argument("gc_reconstruct: needs encoder, decoder and codebook");
    }
    Mat xm(1, x.size());
    xm.row(0) = x;
    Mat z = wb.encoder->encode_values(xm, rng);
    QuantizeResult q = quantize(*wb.codebook, z);
    const RowVec centroid = q.centroids_out.row(0);
    std::vector<RowVec> out;
    out.reserve(static_cast<std::size_t>(n_draws));
    for (int i = 0; i < n_draws; ++i) {
        RowVec dz = dither(centroid, u_sigma, rng);
        Mat zi(1, dz.size());
        zi.row(0) = dz;
        out.push_back(decode_values(*wb.decoder, zi).row(0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Novelty
// ---------------------------------------------------------------------------

Vec novelty_scores(Workbench& wb, const Mat& xs, double weight_disc,
                   double weight_recon, Rng& rng) {
    if (weight_disc != 0.0) {
        if (!wb.disc_d) {
            throw std::invalid_argument("novelty_score: no data discriminator in model");
        }
        if (wb.disc_d->update_count() == 0) {
            throw std::invalid_argument("novelty_score: data discriminator is untrained");
        }
    }
    Vec scores = Vec::Zero(xs.rows());
    if (weight_disc != 0.0) {
        scores -= weight_disc * wb.disc_d->logits_values(xs);
    }
    if (weight_recon != 0.0) {
        if (!wb.encoder || !wb.decoder) {
            throw std::invalid_argument("novelty_score: needs encoder and decoder");
        }
        Mat z = wb.encoder->encode_values(xs, rng);
        if (wb.preset_cfg.quantized && wb.codebook) {
            z = quantize(*wb.codebook, z).centroids_out;
        }
        Mat recon = decode_values(*wb.decoder, z);
        scores += weight_recon * (xs - recon).cwiseAbs().rowwise().sum();
    }
    return scores;
}

double novelty_score(Workbench& wb, const RowVec& x, double weight_disc,
                     double weight_recon, Rng& rng) {
    Mat xm(1, x.size());
    xm.row(0) = x;
    return novelty_scores(wb, xm, weight_disc, weight_recon, rng)[0];
}

double auroc(const Vec& negative_scores, const Vec& positive_scores) {
    const Index n_neg = negative_scores.size(), n_pos = positive_scores.size();
    if (n_neg < 1 || n_pos < 1) throw std::invalid_argument("auroc: empty score set");
    struct Item {
        double score;
        bool positive;
    };
    std::vector<Item> items;
    items.reserve(static_cast<std::size_t>(n_neg + n_pos));
    for (Index i = 0; i < n_neg; ++i) items.push_back({negative_scores[i], false});
    for (Index i = 0; i < n_pos; ++i) items.push_back({positive_scores[i], true});
    std::sort(items.begin(), items.end(),
              [](const Item& a, const Item& b) { return a.score < b.score; });
    // average ranks across ties
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < items.size()) {
        std::size_t j = i;
        while (j + 1 < items.size() && items[j + 1].score == items[i].score) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (items[k].positive) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    const double n_pos_d = static_cast<double>(n_pos);
    const double n_neg_d = static_cast<double>(n_neg);
    return (rank_sum_pos - n_pos_d * (n_pos_d + 1.0) / 2.0) / (n_pos_d * n_neg_d);
}

// ---------------------------------------------------------------------------
// Gradient-check suite
// ---------------------------------------------------------------------------

namespace {

Mat random_mat(Index r, Index c, Rng& rng, double lo = -1.5, double hi = 1.5) {
    std::uniform_real_distribution<double> u(lo, hi);
    Mat m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = u(rng);
    return m;
}

/// Uniform values with |x| >= margin, for ops with a kink or domain edge at 0.
Mat random_mat_off_zero(Index r, Index c, Rng& rng, double margin) {
    Mat m = random_mat(r, c, rng);
    for (Index i = 0; i < r; ++i) {
        for (Index j = 0; j < c; ++j) {
            if (std::abs(m(i, j)) < margin) {
                m(i, j) = m(i, j) >= 0.0 ? m(i, j) + margin : m(i, j) - margin;
            }
        }
    }
    return m;
}

double check_params_fd(const std::function<double()>& f,
                       const std::function<double(Parameter&)>& tape_loss,
                       std::vector<Parameter*> params, double h) {
    double worst = 0.0;
    for (Parameter* p : params) {
        p->zero_grad();
    }
    // one tape pass collects every gradient
    double unused = tape_loss(*params.front());
    (void)unused;
    for (Parameter* p : params) {
        Mat fd = finite_diff_grad(f, *p, h);
        worst = std::max(worst, max_rel_error(p->grad, fd));
    }
    return worst;
}

/// One primitive-op trial; returns the max relative error across the
/// operands of the chosen op.
double op_trial(int which, Rng& rng) {
    const Index r = 3, c = 4;
    auto run = [&](std::vector<Parameter> params,
                   const std::function<Tensor(const std::vector<Tensor>&)>& build) {
        // weight the output so the adjoint is not a constant field
        const Index pr = params[0].value.rows();
        (void)pr;
        std::vector<Parameter*> ptrs;
        for (Parameter& p : params) ptrs.push_back(&p);
        auto value_of = [&]() {
            std::vector<Tensor> ins;
            for (Parameter& p : params) ins.push_back(p.value);
            return build(ins).scalar_value();
        };
        auto tape_pass = [&](Parameter&) {
            Tape tape;
            std::vector<Tensor> ins;
            for (Parameter& p : params) ins.push_back(tape.watch(p));
            Tensor loss = build(ins);
            tape.backward(loss);
            return loss.scalar_value();
        };
        return check_params_fd(value_of, tape_pass, ptrs, 1e-5);
    };
    auto weight = [&](Index rr, Index cc) {
        return Tensor::matrix(random_mat(rr, cc, rng, -1.0, 1.0));
    };

    switch (which % 17) {
    case 0: {
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))},
                    {"b", Tensor::matrix(random_mat(r, c, rng))}},
                   [w](const std::vector<Tensor>& in) {
                       return sum(mul(add(in[0], in[1]), w));
                   });
    }
    case 1: {
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))},
                    {"b", Tensor::matrix(random_mat(r, c, rng))}},
                   [w](const std::vector<Tensor>& in) {
                       return sum(mul(sub(in[0], in[1]), w));
                   });
    }
    case 2: {
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))},
                    {"b", Tensor::matrix(random_mat(r, c, rng))}},
                   [w](const std::vector<Tensor>& in) {
                       return sum(mul(mul(in[0], in[1]), w));
                   });
    }
    case 3: {
        Tensor w = weight(r, 2);
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))},
                    {"b", Tensor::matrix(random_mat(c, 2, rng))}},
                   [w](const std::vector<Tensor>& in) {
                       return sum(mul(matmul(in[0], in[1]), w));
                   });
    }
    case 4:
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))}},
                   [](const std::vector<Tensor>& in) { return sum(in[0]); });
    case 5:
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))}},
                   [](const std::vector<Tensor>& in) { return mean(in[0]); });
    case 6: {
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))}},
                   [w](const std::vector<Tensor>& in) { return sum(mul(exp(in[0]), w)); });
    }
    case 7: {
        Tensor w = weight(r, c);
        Mat pos = random_mat(r, c, rng).cwiseAbs().array() + 0.5;
        return run({{"a", Tensor::matrix(pos)}}, [w](const std::vector<Tensor>& in) {
            return sum(mul(log(in[0]), w));
        });
    }
    case 8: {
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))}},
                   [w](const std::vector<Tensor>& in) { return sum(mul(tanh(in[0]), w)); });
    }
    case 9: {
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat_off_zero(r, c, rng, 1e-2))}},
                   [w](const std::vector<Tensor>& in) { return sum(mul(relu(in[0]), w)); });
    }
    case 10: {
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))}},
                   [w](const std::vector<Tensor>& in) {
                       return sum(mul(softplus(in[0]), w));
                   });
    }
    case 11: {
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))}},
                   [w](const std::vector<Tensor>& in) {
                       return sum(mul(sigmoid(in[0]), w));
                   });
    }
    case 12: {
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))}},
                   [w](const std::vector<Tensor>& in) { return sum(mul(negate(in[0]), w)); });
    }
    case 13: {
        std::uniform_real_distribution<double> cs(-2.0, 2.0);
        const double k = cs(rng);
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat(r, c, rng))}},
                   [w, k](const std::vector<Tensor>& in) {
                       return sum(mul(scale(in[0], k), w));
                   });
    }
    case 14: {
        Tensor w = weight(r, c);
        return run({{"a", Tensor::matrix(random_mat_off_zero(r, c, rng, 1e-2))}},
                   [w](const std::vector<Tensor>& in) { return sum(mul(abs(in[0]), w)); });
    }
    case 15: {
        Tensor w = weight(r, c);
        return run({{"x", Tensor::matrix(random_mat(r, c, rng))},
                    {"row", Tensor::row(random_mat(1, c, rng).row(0))}},
                   [w](const std::vector<Tensor>& in) {
                       return sum(mul(broadcast_add_row(in[0], in[1]), w));
                   });
    }
    default: {
        // clamp away from its saturation edges, and the mmd composite
        Tensor w = weight(r, c);
        Mat vals = random_mat(r, c, rng, -0.8, 0.8);
        double e1 = run({{"a", Tensor::matrix(vals)}}, [w](const std::vector<Tensor>& in) {
            return sum(mul(clamp(in[0], -1.0, 1.0), w));
        });
        RbfKernel kern({0.7, 1.3});
        double e2 = run({{"p", Tensor::matrix(random_mat(5, 2, rng))},
                         {"q", Tensor::matrix(random_mat(4, 2, rng))}},
                        [kern](const std::vector<Tensor>& in) {
                            return mmd2_unbiased(in[0], in[1], kern);
                        });
        std::vector<int> labels = {0, 2, 1};
        double e3 = run({{"logits", Tensor::matrix(random_mat(3, 3, rng))}},
                        [labels](const std::vector<Tensor>& in) {
                            return softmax_cross_entropy(in[0], labels);
                        });
        return std::max({e1, e2, e3});
    }
    }
}

struct CompositeSetup {
    Workbench wb;
    Mat batch;
    std::vector<int> labels;
    std::uint64_t eval_seed;
    bool supervised = false;
};

CompositeSetup make_composite(int which, std::uint64_t seed, Rng& rng) {
    CompositeSetup s;
    ModelSpec ms;
    ms.input_dim = 3;
    ms.latent_dim = 2;
    ms.enc_hidden = {4};
    ms.dec_hidden = {4};
    ms.disc_hidden = {4};
    ms.act = Activation::Tanh;
    s.eval_seed = seed;

    PresetConfig pc;
    switch (which % 6) {
    case 0:
        pc = preset(PresetName::VAE);
        pc.bindings.c = TermCBinding::GaussianLoglik;
        break;
    case 1:
        pc = preset(PresetName::VAE);
        pc.bindings.c = TermCBinding::LaplacianLoglik;
        break;
    case 2:
        pc = preset(PresetName::InfoVAE);
        pc.bindings.b = TermBBinding::Mmd;
        pc.bindings.c = TermCBinding::GaussianLoglik;
        break;
    case 3:
        pc = preset(PresetName::AAE);
        pc.bindings.b = TermBBinding::Mmd;
        pc.bindings.c = TermCBinding::GaussianLoglik;
        break;
    case 4: {
        pc = preset(PresetName::SupervisedIB);
        ms.classes = 3;
        s.supervised = true;
        break;
    }
    default:
        pc = preset(PresetName::BIBAE);
        pc.bindings.c = TermCBinding::GaussianLoglik;
        break;
    }
    s.wb = build_workbench(pc, ms, seed);
    // gradients must flow through the head and the frozen discriminators
    if (s.wb.encoder && pc.encoder == EncoderKind::GaussianHead) {
        Rng r2 = derive_rng(seed, 71);
        Encoder::Spec es = s.wb.encoder->spec();
        es.zero_init_head = false;
        s.wb.encoder.emplace(es, r2);
    }
    if (s.wb.disc_b) {
        Rng r3 = derive_rng(seed, 72);
        s.wb.disc_b.emplace(ms.latent_dim, ms.disc_hidden, ms.act, r3, "disc_b", false);
    }
    if (s.wb.disc_d) {
        Rng r4 = derive_rng(seed, 73);
        s.wb.disc_d.emplace(ms.input_dim, ms.disc_hidden, ms.act, r4, "disc_d", false);
    }
    s.batch = random_mat(5, ms.input_dim, rng);
    if (s.supervised) {
        std::uniform_int_distribution<int> lab(0, 2);
        for (Index i = 0; i < s.batch.rows(); ++i) s.labels.push_back(lab(rng));
    }
    return s;
}

double composite_trial(int which, std::uint64_t seed, Rng& rng) {
    for (int attempt = 0; attempt < 8; ++attempt) {
        CompositeSetup s = make_composite(which, seed + static_cast<std::uint64_t>(attempt),
                                          rng);
        BibModels models = s.wb.models();
        Auxiliaries aux = s.wb.aux();
        RbfKernel fixed_kernel({0.5, 1.0, 2.0});
        aux.kernel_b = fixed_kernel; // median scaling is not differentiable

        auto eval = [&]() -> double {
            Rng r = derive_rng(s.eval_seed, 99);
            if (s.supervised) {
                return supervised_ib_loss(s.batch, s.labels, *s.wb.encoder,
                                          *s.wb.classifier, s.wb.preset_cfg.weights,
                                          s.wb.preset_cfg.bindings.b, aux, r)
                    .report.total;
            }
            return bib_loss(s.batch, models, s.wb.preset_cfg, aux, r).report.total;
        };

        // the laplacian l1 and the logit clamp have kinks; keep away from them
        if (s.wb.preset_cfg.bindings.c == TermCBinding::LaplacianLoglik) {
            Rng r = derive_rng(s.eval_seed, 99);
            Mat z = s.wb.encoder->encode_values(s.batch, r);
            Mat xh = decode_values(*s.wb.decoder, z);
            if ((s.batch - xh).cwiseAbs().minCoeff() < 5e-3) continue;
        }
        if (s.wb.disc_b || s.wb.disc_d) {
            bool near_edge = false;
            Rng r = derive_rng(s.eval_seed, 99);
            if (s.wb.disc_b) {
                Mat z = s.wb.encoder->encode_values(s.batch, r);
                near_edge |= s.wb.disc_b->logits_values(z).cwiseAbs().maxCoeff() > 9.0;
            }
            if (s.wb.disc_d) {
                near_edge |= s.wb.disc_d->logits_values(s.batch).cwiseAbs().maxCoeff() > 9.0;
            }
            if (near_edge) continue;
        }

        std::vector<Parameter*> params = s.wb.model_parameters();
        for (Parameter* p : params) p->zero_grad();
        {
            Tape tape;
            Rng r = derive_rng(s.eval_seed, 99);
            Tensor total =
                s.supervised
                    ? supervised_ib_loss(s.batch, s.labels, *s.wb.encoder,
                                         *s.wb.classifier, s.wb.preset_cfg.weights,
                                         s.wb.preset_cfg.bindings.b, aux, r)
                          .total
                    : bib_loss(s.batch, models, s.wb.preset_cfg, aux, r).total;
            tape.backward(total);
        }
        double worst = 0.0;
        for (Parameter* p : params) {
            Mat fd = finite_diff_grad(eval, *p, 1e-5);
            worst = std::max(worst, max_rel_error(p->grad, fd));
        }
        return worst;
    }
    throw std::runtime_error("composite_trial: could not find a kink-free configuration");
}

} // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, int op_trials, int composite_trials) {
    GradcheckReport rep;
    rep.op_trials = op_trials;
    rep.composite_trials = composite_trials;
    Rng rng = derive_rng(seed, 61);
    for (int t = 0; t < op_trials; ++t) {
        rep.max_rel_err_ops = std::max(rep.max_rel_err_ops, op_trial(t, rng));
    }
    Rng crng = derive_rng(seed, 62);
    for (int t = 0; t < composite_trials; ++t) {
        rep.max_rel_err_composite =
            std::max(rep.max_rel_err_composite,
                     composite_trial(t, seed * 1000 + static_cast<std::uint64_t>(t), crng));
    }
    return rep;
}

} // namespace biblab
