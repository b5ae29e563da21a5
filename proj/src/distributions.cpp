#include "biblab/distributions.hpp"

#include <cmath>
#include <numbers>

namespace biblab {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836; // log(2*pi)

void require_same_dims(const char* who, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(who) + ": length mismatch " + shape_string(a) +
                         " vs " + shape_string(b));
    }
}
} // namespace

DiagGaussian::DiagGaussian(Tensor mu_, Tensor log_sigma_)
    : mu(std::move(mu_)), log_sigma(std::move(log_sigma_)) {
    require_same_dims("DiagGaussian", mu, log_sigma);
}

StandardNormalPrior::StandardNormalPrior(Index dim_) : dim(dim_) {
    if (dim < 1) throw ShapeError("StandardNormalPrior: dim must be >= 1");
}

Mat StandardNormalPrior::sample(Index n, Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat out(n, dim);
    for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < dim; ++c) out(r, c) = normal(rng);
    return out;
}

LaplacianLikelihood::LaplacianLikelihood(double scale_lambda_)
    : scale_lambda(scale_lambda_) {
    if (!(scale_lambda > 0.0)) {
        throw DomainError("LaplacianLikelihood: scale must be positive");
    }
}

GaussianLikelihood::GaussianLikelihood(double sigma_) : sigma(sigma_) {
    if (!(sigma > 0.0)) throw DomainError("GaussianLikelihood: sigma must be positive");
}

CodebookPrior::CodebookPrior(Mat centroids_, Vec probs_)
    : centroids(std::move(centroids_)), probs(std::move(probs_)) {
    if (centroids.rows() < 1) throw ShapeError("CodebookPrior: needs at least one centroid");
    if (probs.size() != centroids.rows()) {
        throw ShapeError("CodebookPrior: probs length != centroid count");
    }
    if ((probs.array() < 0.0).any()) throw DomainError("CodebookPrior: negative probability");
    if (std::abs(probs.sum() - 1.0) > 1e-12) {
        throw DomainError("CodebookPrior: probabilities sum to " + std::to_string(probs.sum()));
    }
}

// ---------------------------------------------------------------------------

Tensor sample_reparam(const DiagGaussian& d, const Tensor& eps) {
    require_same_dims("sample_reparam", d.mu, eps);
    return add(d.mu, mul(exp(d.log_sigma), eps));
}

namespace {
/// 1/2 sum over all entries of (sigma^2 + mu^2 - 1 - 2 log sigma).
Tensor kl_to_std_normal_total(const DiagGaussian& d) {
    Tensor sigma_sq = exp(scale(d.log_sigma, 2.0));
    Tensor mu_sq = mul(d.mu, d.mu);
    Tensor body = sub(add(sigma_sq, mu_sq), scale(d.log_sigma, 2.0));
    const double numel = static_cast<double>(d.mu.numel());
    return scale(sub(sum(body), Tensor::scalar(numel)), 0.5);
}
} // namespace

Tensor kl_to_std_normal(const DiagGaussian& d) {
    if (d.mu.rank() > 1 && d.mu.rows() != 1) {
        throw ShapeError("kl_to_std_normal: expected a single distribution, got batch " +
                         shape_string(d.mu));
    }
    return kl_to_std_normal_total(d);
}

Tensor kl_to_std_normal_mean(const DiagGaussian& d) {
    return scale(kl_to_std_normal_total(d), 1.0 / static_cast<double>(d.mu.rows()));
}

namespace {
Tensor laplacian_log_prob_total(const LaplacianLikelihood& l, const Tensor& x,
                                const Tensor& g) {
    require_same_dims("log_prob_laplacian", x, g);
    const double n = static_cast<double>(x.numel());
    const double log_norm = n * std::log(l.scale_lambda / 2.0);
    Tensor l1 = sum(abs(sub(x, g)));
    return add(Tensor::scalar(log_norm), scale(l1, -l.scale_lambda));
}
} // namespace

Tensor log_prob_laplacian(const LaplacianLikelihood& l, const Tensor& x,
                          const Tensor& g) {
    return laplacian_log_prob_total(l, x, g);
}

Tensor log_prob_laplacian_mean(const LaplacianLikelihood& l, const Tensor& x,
                               const Tensor& g) {
    return scale(laplacian_log_prob_total(l, x, g), 1.0 / static_cast<double>(x.rows()));
}

Tensor log_prob_gaussian_mean(const GaussianLikelihood& l, const Tensor& x,
                              const Tensor& g) {
    require_same_dims("log_prob_gaussian_mean", x, g);
    const double n = static_cast<double>(x.cols());
    const double b = static_cast<double>(x.rows());
    const double log_norm = -0.5 * n * (kLog2Pi + 2.0 * std::log(l.sigma));
    Tensor diff = sub(x, g);
    Tensor sq = sum(mul(diff, diff));
    return add(Tensor::scalar(log_norm),
               scale(sq, -1.0 / (2.0 * l.sigma * l.sigma * b)));
}

Tensor log_prob_gaussian(const DiagGaussian& d, const Tensor& v) {
    require_same_dims("log_prob_gaussian", d.mu, v);
    const double n = static_cast<double>(v.numel());
    Tensor diff = sub(v, d.mu);
    Tensor inv_var = exp(scale(d.log_sigma, -2.0));
    Tensor quad = sum(mul(mul(diff, diff), inv_var));
    Tensor log_det = sum(d.log_sigma);
    return sub(Tensor::scalar(-0.5 * n * kLog2Pi),
               add(log_det, scale(quad, 0.5)));
}

Tensor log_prob_gaussian(const StandardNormalPrior& p, const Tensor& v) {
    if (v.numel() != p.dim) {
        throw ShapeError("log_prob_gaussian: vector length " + shape_string(v) +
                         " vs prior dim " + std::to_string(p.dim));
    }
    const double n = static_cast<double>(p.dim);
    return sub(Tensor::scalar(-0.5 * n * kLog2Pi), scale(sum(mul(v, v)), 0.5));
}

double log_prob_std_normal(const RowVec& v) {
    return -0.5 * static_cast<double>(v.size()) * kLog2Pi - 0.5 * v.squaredNorm();
}

double log_prob_diag_gaussian(const RowVec& mu, const RowVec& log_sigma,
                              const RowVec& v) {
    const auto n = static_cast<double>(v.size());
    double quad = ((v - mu).array() * (-log_sigma).array().exp()).square().sum();
    return -0.5 * n * kLog2Pi - log_sigma.sum() - 0.5 * quad;
}

std::pair<Index, RowVec> sample_codebook(const CodebookPrior& p, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    double acc = 0.0;
    Index pick = p.size() - 1;
    for (Index j = 0; j < p.size(); ++j) {
        acc += p.probs[j];
        if (u < acc) {
            pick = j;
            break;
        }
    }
    return {pick, p.centroids.row(pick)};
}

Mat sample_codebook_batch(const CodebookPrior& p, Index n, Rng& rng) {
    Mat out(n, p.dim());
    for (Index r = 0; r < n; ++r) out.row(r) = sample_codebook(p, rng).second;
    return out;
}

} // namespace biblab
