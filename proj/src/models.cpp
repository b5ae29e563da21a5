#include "biblab/models.hpp"

#include <cmath>
#include <limits>

namespace biblab {

const char* to_string(EncoderKind k) {
    switch (k) {
    case EncoderKind::Deterministic: return "deterministic";
    case EncoderKind::GaussianHead: return "gaussian-head";
    case EncoderKind::AdditiveInputNoise: return "additive-input-noise";
    case EncoderKind::ConcatNoise: return "concat-noise";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Mlp
// ---------------------------------------------------------------------------

Mlp::Mlp(const std::vector<Index>& widths, Activation act, Rng& rng,
         const std::string& name_prefix, bool zero_init_last)
    : widths_(widths), act_(act) {
    if (widths_.size() < 2) throw ShapeError("Mlp: needs at least input and output width");
    for (Index w : widths_) {
        if (w < 1) throw ShapeError("Mlp: non-positive layer width");
    }
    const std::size_t layers = widths_.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const Index fan_in = widths_[l], fan_out = widths_[l + 1];
        Mat w(fan_in, fan_out);
        const bool zero = zero_init_last && l == layers - 1;
        if (zero) {
            w.setZero();
        } else {
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (Index r = 0; r < fan_in; ++r)
                for (Index c = 0; c < fan_out; ++c) w(r, c) = u(rng);
        }
        const std::string tag = name_prefix + ".l" + std::to_string(l);
        weights_.emplace_back(tag + ".w", Tensor::matrix(std::move(w)));
        biases_.emplace_back(tag + ".b", Tensor::row(RowVec::Zero(fan_out)));
    }
}

Tensor Mlp::forward_impl(const Tensor& x, bool watch_params) const {
    if (x.cols() != widths_.front()) {
        throw ShapeError("Mlp: input width " + shape_string(x) + " != expected " +
                         std::to_string(widths_.front()));
    }
    Tape* tape = Tape::active();
    Tensor h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Tensor w = (watch_params && tape) ? tape->watch(weights_[l]) : weights_[l].value;
        Tensor b = (watch_params && tape) ? tape->watch(biases_[l]) : biases_[l].value;
        h = broadcast_add_row(matmul(h, w), b);
        if (l + 1 < weights_.size()) {
            h = act_ == Activation::Tanh ? tanh(h) : relu(h);
        }
    }
    return h;
}

Tensor Mlp::forward(const Tensor& x) {
    return forward_impl(x, true);
}

Tensor Mlp::forward_frozen(const Tensor& x) const {
    return forward_impl(x, false);
}

Mat Mlp::forward_values(const Mat& x) const {
    return forward_impl(Tensor::matrix(x), false).value();
}

std::vector<Parameter*> Mlp::parameters() {
    std::vector<Parameter*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
    std::vector<const Parameter*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

namespace {

std::vector<Index> body_widths(const Encoder::Spec& s) {
    Index in = s.input_dim;
    Index out = s.latent_dim;
    if (s.kind == EncoderKind::GaussianHead) out = 2 * s.latent_dim;
    if (s.kind == EncoderKind::ConcatNoise) in = s.input_dim + s.noise_dim;
    std::vector<Index> w;
    w.push_back(in);
    w.insert(w.end(), s.hidden.begin(), s.hidden.end());
    w.push_back(out);
    return w;
}

Mat normal_matrix(Index rows, Index cols, double sigma, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = sigma * normal(rng);
    return m;
}

} // namespace

Encoder::Encoder(Spec spec, Rng& rng)
    : spec_(spec),
      body_(body_widths(spec), spec.act, rng, "encoder",
            spec.kind == EncoderKind::GaussianHead && spec.zero_init_head) {
    if (spec_.kind == EncoderKind::ConcatNoise && spec_.noise_dim < 1) {
        throw ShapeError("Encoder: concat-noise requires noise_dim >= 1");
    }
    if (spec_.kind == EncoderKind::AdditiveInputNoise && spec_.noise_sigma < 0.0) {
        throw DomainError("Encoder: negative noise_sigma");
    }
}

EncodeResult Encoder::encode(const Tensor& x, Rng& rng, const Mat* eps_override) {
    if (x.cols() != spec_.input_dim) {
        throw ShapeError("encode: input width " + shape_string(x) + " != expected " +
                         std::to_string(spec_.input_dim));
    }
    const Index batch = x.rows();
    switch (spec_.kind) {
    case EncoderKind::Deterministic: {
        return {body_.forward(x), std::nullopt};
    }
    case EncoderKind::GaussianHead: {
        Tensor head = body_.forward(x); // B x 2*n_z
        const Index nz = spec_.latent_dim;
        // split by constant selection matrices; mu first, log sigma second
        Mat sel_mu = Mat::Zero(2 * nz, nz), sel_ls = Mat::Zero(2 * nz, nz);
        for (Index i = 0; i < nz; ++i) {
            sel_mu(i, i) = 1.0;
            sel_ls(nz + i, i) = 1.0;
        }
        Tensor mu = matmul(head, Tensor::matrix(sel_mu));
        Tensor log_sigma = matmul(head, Tensor::matrix(sel_ls));
        Mat eps = eps_override ? *eps_override : normal_matrix(batch, nz, 1.0, rng);
        if (eps.rows() != batch || eps.cols() != nz) {
            throw ShapeError("encode: eps override has wrong dimensions");
        }
        PosteriorBatch post{mu, log_sigma};
        Tensor z = sample_reparam(post.dist(), Tensor::matrix(eps));
        return {z, post};
    }
    case EncoderKind::AdditiveInputNoise: {
        Mat noisy = x.value() + normal_matrix(batch, spec_.input_dim, spec_.noise_sigma, rng);
        // noise is injected before the body; x itself is data, not a
        // gradient root, so re-wrapping keeps the tape small
        return {body_.forward(Tensor::matrix(std::move(noisy))), std::nullopt};
    }
    case EncoderKind::ConcatNoise: {
        Mat joined(batch, spec_.input_dim + spec_.noise_dim);
        joined.leftCols(spec_.input_dim) = x.value();
        joined.rightCols(spec_.noise_dim) = normal_matrix(batch, spec_.noise_dim, 1.0, rng);
        return {body_.forward(Tensor::matrix(std::move(joined))), std::nullopt};
    }
    }
    throw std::logic_error("encode: unreachable");
}

Mat Encoder::encode_values(const Mat& x, Rng& rng) {
    return encode(Tensor::matrix(x), rng).z.value();
}

Tensor decode(Mlp& g, const Tensor& z) {
    return g.forward(z);
}

Mat decode_values(const Mlp& g, const Mat& z) {
    return g.forward_values(z);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const Index batch = logits.rows(), classes = logits.cols();
    if (static_cast<Index>(labels.size()) != batch) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch " + std::to_string(batch));
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= classes) {
            throw DomainError("softmax_cross_entropy: label " + std::to_string(lab) +
                              " outside [0, " + std::to_string(classes) + ")");
        }
    }
    const Mat lv = logits.value();
    Mat softmax(batch, classes);
    double loss = 0.0;
    for (Index r = 0; r < batch; ++r) {
        const double mx = lv.row(r).maxCoeff();
        RowVec e = (lv.row(r).array() - mx).exp();
        const double denom = e.sum();
        softmax.row(r) = e / denom;
        loss += std::log(denom) + mx - lv(r, labels[static_cast<std::size_t>(r)]);
    }
    loss /= static_cast<double>(batch);
    Mat out = Mat::Constant(1, 1, loss);
    Tape* tape = Tape::active();
    if (!tape || !logits.traced()) return make_tensor(std::move(out), 0, -1);
    const int il = logits.node();
    Mat adj = softmax;
    for (Index r = 0; r < batch; ++r) adj(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
    adj /= static_cast<double>(batch);
    int id = tape->record(out, 0, {il}, [il, adj](Tape& t, const Mat& g) {
        t.accumulate(il, g(0, 0) * adj);
    });
    return make_tensor(std::move(out), 0, id);
}

// ---------------------------------------------------------------------------
// Vector quantization
// ---------------------------------------------------------------------------

CodebookPrior Codebook::prior() const {
    long total = 0;
    for (long c : usage_counts) total += c;
    if (total <= 0) throw DomainError("Codebook::prior: no recorded usage");
    Vec probs(size());
    for (Index j = 0; j < size(); ++j) {
        probs[j] = static_cast<double>(usage_counts[static_cast<std::size_t>(j)]) /
                   static_cast<double>(total);
    }
    return CodebookPrior(centroids, probs);
}

QuantizeResult quantize(Codebook& cb, const Mat& z) {
    if (cb.size() < 1) throw ShapeError("quantize: empty codebook");
    if (z.cols() != cb.dim()) {
        throw ShapeError("quantize: latent width " + std::to_string(z.cols()) +
                         " != codebook dim " + std::to_string(cb.dim()));
    }
    QuantizeResult res;
    res.indices.resize(static_cast<std::size_t>(z.rows()));
    res.centroids_out.resize(z.rows(), cb.dim());
    cb.usage_counts.assign(static_cast<std::size_t>(cb.size()), 0);
    for (Index r = 0; r < z.rows(); ++r) {
        Index best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Index j = 0; j < cb.size(); ++j) {
            const double d = (z.row(r) - cb.centroids.row(j)).squaredNorm();
            if (d < best_d) { // strict: ties keep the lowest index
                best_d = d;
                best = j;
            }
        }
        res.indices[static_cast<std::size_t>(r)] = best;
        res.centroids_out.row(r) = cb.centroids.row(best);
        ++cb.usage_counts[static_cast<std::size_t>(best)];
    }
    return res;
}

double codebook_rate(const Codebook& cb) {
    long total = 0;
    for (long c : cb.usage_counts) total += c;
    if (total <= 0) throw DomainError("codebook_rate: no recorded usage");
    double rate = 0.0;
    for (long c : cb.usage_counts) {
        if (c > 0) {
            const double p = static_cast<double>(c) / static_cast<double>(total);
            rate -= p * std::log(p);
        }
    }
    return rate;
}

Codebook fit_codebook(const Mat& latents, Index count, int iters, Rng& rng) {
    const Index n = latents.rows();
    if (n < count) {
        throw ShapeError("fit_codebook: " + std::to_string(n) + " points for " +
                         std::to_string(count) + " centroids");
    }
    Codebook cb;
    cb.centroids.resize(count, latents.cols());
    cb.usage_counts.assign(static_cast<std::size_t>(count), 0);

    // k-means++ seeding
    std::uniform_int_distribution<Index> first(0, n - 1);
    cb.centroids.row(0) = latents.row(first(rng));
    Vec dist2 = (latents.rowwise() - RowVec(cb.centroids.row(0))).rowwise().squaredNorm();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Index j = 1; j < count; ++j) {
        const double total = dist2.sum();
        Index pick = 0;
        if (total > 0.0) {
            double u = unit(rng) * total;
            double acc = 0.0;
            for (Index i = 0; i < n; ++i) {
                acc += dist2[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = first(rng); // all points already coincide with a centroid
        }
        cb.centroids.row(j) = latents.row(pick);
        dist2 = dist2.cwiseMin(
            (latents.rowwise() - RowVec(cb.centroids.row(j))).rowwise().squaredNorm());
    }

    // Lloyd iterations
    for (int it = 0; it < iters; ++it) {
        QuantizeResult assign = quantize(cb, latents);
        Mat sums = Mat::Zero(count, latents.cols());
        std::vector<long> counts(static_cast<std::size_t>(count), 0);
        for (Index r = 0; r < n; ++r) {
            const Index j = assign.indices[static_cast<std::size_t>(r)];
            sums.row(j) += latents.row(r);
            ++counts[static_cast<std::size_t>(j)];
        }
        for (Index j = 0; j < count; ++j) {
            const long c = counts[static_cast<std::size_t>(j)];
            if (c > 0) {
                cb.centroids.row(j) = sums.row(j) / static_cast<double>(c);
            } else {
                // re-seed an empty cluster at the point farthest from its centroid
                Index far = 0;
                double far_d = -1.0;
                for (Index r = 0; r < n; ++r) {
                    const Index a = assign.indices[static_cast<std::size_t>(r)];
                    const double d = (latents.row(r) - cb.centroids.row(a)).squaredNorm();
                    if (d > far_d) {
                        far_d = d;
                        far = r;
                    }
                }
                cb.centroids.row(j) = latents.row(far);
            }
        }
    }
    quantize(cb, latents); // leave usage counts for the fitted assignment
    return cb;
}

double quantization_distortion(Codebook& cb, const Mat& z) {
    QuantizeResult res = quantize(cb, z);
    return (z - res.centroids_out).rowwise().squaredNorm().mean();
}

RowVec dither(const RowVec& centroid, double u_sigma, Rng& rng) {
    if (u_sigma < 0.0) throw DomainError("dither: negative u_sigma");
    if (u_sigma == 0.0) return centroid;
    std::normal_distribution<double> normal(0.0, u_sigma);
    RowVec out = centroid;
    for (Index i = 0; i < out.size(); ++i) out[i] += normal(rng);
    return out;
}

} // namespace biblab
