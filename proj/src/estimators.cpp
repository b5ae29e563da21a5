#include "biblab/estimators.hpp"

#include <algorithm>
#include <cmath>

namespace biblab {

const char* to_string(EstimatorKind k) {
    switch (k) {
    case EstimatorKind::ClosedForm: return "closed-form";
    case EstimatorKind::Mmd: return "mmd";
    case EstimatorKind::DensityRatio: return "density-ratio";
    case EstimatorKind::Enumeration: return "enumeration";
    case EstimatorKind::MonteCarlo: return "monte-carlo";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// RbfKernel
// ---------------------------------------------------------------------------

RbfKernel::RbfKernel(std::vector<double> bandwidths_)
    : bandwidths(std::move(bandwidths_)) {
    if (bandwidths.empty()) throw DomainError("RbfKernel: empty bandwidth list");
    for (double b : bandwidths) {
        if (!(b > 0.0)) throw DomainError("RbfKernel: non-positive bandwidth");
    }
}

RbfKernel RbfKernel::median_scaled(const Mat& x, const Mat& y) {
    Mat pooled(x.rows() + y.rows(), x.cols());
    pooled << x, y;
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
    for (Index i = 0; i < pooled.rows(); ++i) {
        for (Index j = i + 1; j < pooled.rows(); ++j) {
            dists.push_back((pooled.row(i) - pooled.row(j)).norm());
        }
    }
    double med = 1.0;
    if (!dists.empty()) {
        auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
        std::nth_element(dists.begin(), mid, dists.end());
        if (*mid > 0.0) med = *mid;
    }
    std::vector<double> bands;
    for (double base : {0.25, 0.5, 1.0, 2.0, 4.0}) bands.push_back(base * med);
    return RbfKernel(bands);
}

double RbfKernel::operator()(const RowVec& a, const RowVec& b) const {
    const double d2 = (a - b).squaredNorm();
    double k = 0.0;
    for (double s : bandwidths) k += std::exp(-d2 / (2.0 * s * s));
    return k;
}

// ---------------------------------------------------------------------------
// MMD^2 (unbiased)
// ---------------------------------------------------------------------------

namespace {

/// Kernel value and, when grad != nullptr, the gradient with respect to
/// the first argument added into *grad.
double kernel_with_grad(const RbfKernel& k, const RowVec& a, const RowVec& b,
                        RowVec* grad) {
    const RowVec diff = a - b;
    const double d2 = diff.squaredNorm();
    double val = 0.0;
    for (double s : k.bandwidths) {
        const double e = std::exp(-d2 / (2.0 * s * s));
        val += e;
        if (grad) *grad -= (e / (s * s)) * diff;
    }
    return val;
}

struct MmdParts {
    double value;
    Mat grad_p;
    Mat grad_q;
};

MmdParts mmd2_with_grads(const Mat& p, const Mat& q, const RbfKernel& k,
                         bool want_grads) {
    const Index m = p.rows(), n = q.rows();
    MmdParts out;
    if (want_grads) {
        out.grad_p = Mat::Zero(m, p.cols());
        out.grad_q = Mat::Zero(n, q.cols());
    }
    const double c_pp = 1.0 / static_cast<double>(m * (m - 1));
    const double c_qq = 1.0 / static_cast<double>(n * (n - 1));
    const double c_pq = 2.0 / static_cast<double>(m * n);

    double s_pp = 0.0;
    for (Index i = 0; i < m; ++i) {
        for (Index j = i + 1; j < m; ++j) {
            RowVec g = RowVec::Zero(p.cols());
            const double v = kernel_with_grad(k, p.row(i), p.row(j),
                                              want_grads ? &g : nullptr);
            s_pp += 2.0 * v;
            if (want_grads) {
                out.grad_p.row(i) += 2.0 * c_pp * g;
                out.grad_p.row(j) -= 2.0 * c_pp * g;
            }
        }
    }
    double s_qq = 0.0;
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            RowVec g = RowVec::Zero(q.cols());
            const double v = kernel_with_grad(k, q.row(i), q.row(j),
                                              want_grads ? &g : nullptr);
            s_qq += 2.0 * v;
            if (want_grads) {
                out.grad_q.row(i) += 2.0 * c_qq * g;
                out.grad_q.row(j) -= 2.0 * c_qq * g;
            }
        }
    }
    double s_pq = 0.0;
    for (Index i = 0; i < m; ++i) {
        for (Index j = 0; j < n; ++j) {
            RowVec g = RowVec::Zero(p.cols());
            const double v = kernel_with_grad(k, p.row(i), q.row(j),
                                              want_grads ? &g : nullptr);
            s_pq += v;
            if (want_grads) {
                out.grad_p.row(i) -= c_pq * g;
                out.grad_q.row(j) += c_pq * g;
            }
        }
    }
    out.value = c_pp * s_pp + c_qq * s_qq - c_pq * s_pq;
    return out;
}

void require_mmd_batches(const Mat& p, const Mat& q) {
    if (p.rows() < 2 || q.rows() < 2) {
        throw ShapeError("mmd2_unbiased: each batch needs at least 2 samples, got " +
                         std::to_string(p.rows()) + " and " + std::to_string(q.rows()));
    }
    if (p.cols() != q.cols()) {
        throw ShapeError("mmd2_unbiased: sample dimensions differ");
    }
}

} // namespace

double mmd2_unbiased(const Mat& samples_p, const Mat& samples_q, const RbfKernel& k) {
    require_mmd_batches(samples_p, samples_q);
    return mmd2_with_grads(samples_p, samples_q, k, false).value;
}

Tensor mmd2_unbiased(const Tensor& samples_p, const Tensor& samples_q,
                     const RbfKernel& k) {
    require_mmd_batches(samples_p.value(), samples_q.value());
    Tape* tape = Tape::active();
    const bool traced = tape && (samples_p.traced() || samples_q.traced());
    MmdParts parts = mmd2_with_grads(samples_p.value(), samples_q.value(), k, traced);
    Mat out = Mat::Constant(1, 1, parts.value);
    if (!traced) return make_tensor(std::move(out), 0, -1);
    const int ip = samples_p.node(), iq = samples_q.node();
    const Mat gp = std::move(parts.grad_p), gq = std::move(parts.grad_q);
    int id = tape->record(out, 0, {ip, iq},
                          [ip, iq, gp, gq](Tape& t, const Mat& g) {
                              t.accumulate(ip, g(0, 0) * gp);
                              t.accumulate(iq, g(0, 0) * gq);
                          });
    return make_tensor(std::move(out), 0, id);
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

Discriminator::Discriminator(Index input_dim, std::vector<Index> hidden,
                             Activation act, Rng& rng, const std::string& name,
                             bool zero_init_head)
    : net_([&] {
          std::vector<Index> w;
          w.push_back(input_dim);
          w.insert(w.end(), hidden.begin(), hidden.end());
          w.push_back(1);
          return w;
      }(),
           act, rng, name, zero_init_head) {}

Tensor Discriminator::logits(const Tensor& x) {
    return net_.forward(x);
}

Tensor Discriminator::logits_frozen(const Tensor& x) const {
    return net_.forward_frozen(x);
}

Vec Discriminator::logits_values(const Mat& x) const {
    return net_.forward_values(x).col(0);
}

double discriminator_step(Discriminator& d, const Mat& samples_p,
                          const Mat& samples_q, Optimizer& opt) {
    if (samples_p.rows() < 1 || samples_q.rows() < 1) {
        throw ShapeError("discriminator_step: empty batch");
    }
    Tape tape;
    Tensor lp = d.logits(Tensor::matrix(samples_p));
    Tensor lq = d.logits(Tensor::matrix(samples_q));
    // labels 1 for P, 0 for Q: bce = softplus(l) - y*l
    Tensor total = add(sub(sum(softplus(lp)), sum(lp)), sum(softplus(lq)));
    Tensor loss = scale(total, 1.0 / static_cast<double>(samples_p.rows() + samples_q.rows()));
    tape.backward(loss);
    opt.step(d.parameters());
    d.note_update();
    return loss.scalar_value();
}

double discriminator_accuracy(const Discriminator& d, const Mat& samples_p,
                              const Mat& samples_q) {
    const Vec lp = d.logits_values(samples_p);
    const Vec lq = d.logits_values(samples_q);
    double correct = 0.0;
    for (Index i = 0; i < lp.size(); ++i) correct += lp[i] > 0.0 ? 1.0 : 0.0;
    for (Index i = 0; i < lq.size(); ++i) correct += lq[i] <= 0.0 ? 1.0 : 0.0;
    return correct / static_cast<double>(lp.size() + lq.size());
}

double train_discriminator(Discriminator& d, const Mat& samples_p,
                           const Mat& samples_q, Optimizer& opt, int steps) {
    double loss = 0.0;
    for (int s = 0; s < steps; ++s) {
        loss = discriminator_step(d, samples_p, samples_q, opt);
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Density-ratio KL and Monte-Carlo cross-entropy
// ---------------------------------------------------------------------------

Tensor kl_from_ratio(const Discriminator& d, const Tensor& samples_p,
                     double clamp_bound) {
    Tensor logits = d.logits_frozen(samples_p);
    return mean(clamp(logits, -clamp_bound, clamp_bound));
}

double kl_from_ratio(const Discriminator& d, const Mat& samples_p,
                     double clamp_bound) {
    const Vec logits = d.logits_values(samples_p);
    return logits.array().max(-clamp_bound).min(clamp_bound).mean();
}

double mc_cross_entropy(const std::function<double(const RowVec&)>& log_q,
                        const Mat& samples_p) {
    double total = 0.0;
    for (Index i = 0; i < samples_p.rows(); ++i) {
        const double v = log_q(samples_p.row(i));
        if (!std::isfinite(v)) {
            throw DomainError("mc_cross_entropy: evaluator returned non-finite value");
        }
        total += v;
    }
    return -total / static_cast<double>(samples_p.rows());
}

double mmd2_permutation_threshold(const Mat& pooled, Index n_p, const RbfKernel& k,
                                  int permutations, double quantile, Rng& rng) {
    if (n_p < 2 || pooled.rows() - n_p < 2) {
        throw ShapeError("mmd2_permutation_threshold: bad split");
    }
    std::vector<Index> idx(static_cast<std::size_t>(pooled.rows()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Index>(i);
    std::vector<double> stats;
    stats.reserve(static_cast<std::size_t>(permutations));
    for (int t = 0; t < permutations; ++t) {
        std::shuffle(idx.begin(), idx.end(), rng);
        Mat a(n_p, pooled.cols());
        Mat b(pooled.rows() - n_p, pooled.cols());
        for (Index i = 0; i < n_p; ++i) a.row(i) = pooled.row(idx[static_cast<std::size_t>(i)]);
        for (Index i = n_p; i < pooled.rows(); ++i) {
            b.row(i - n_p) = pooled.row(idx[static_cast<std::size_t>(i)]);
        }
        stats.push_back(mmd2_unbiased(a, b, k));
    }
    std::sort(stats.begin(), stats.end());
    const auto pos = static_cast<std::size_t>(
        std::min<double>(static_cast<double>(stats.size() - 1),
                         std::floor(quantile * static_cast<double>(stats.size()))));
    return stats[pos];
}

} // namespace biblab
