#include "biblab/harness.hpp"

#include <cmath>
#include <numbers>

namespace biblab {

const char* to_string(DatasetKind k) {
    switch (k) {
    case DatasetKind::Gmm2d: return "gmm2d";
    case DatasetKind::Ring2d: return "ring2d";
    case DatasetKind::LinearGaussian: return "linear-gaussian";
    case DatasetKind::LabeledGmm: return "labeled-gmm";
    case DatasetKind::DiscreteWorldSamples: return "discrete-world-samples";
    }
    return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
    for (DatasetKind k : {DatasetKind::Gmm2d, DatasetKind::Ring2d,
                          DatasetKind::LinearGaussian, DatasetKind::LabeledGmm,
                          DatasetKind::DiscreteWorldSamples}) {
        if (s == to_string(k)) return k;
    }
    throw std::invalid_argument("unknown dataset kind '" + s + "'");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct GmmDraw {
    Mat samples;
    std::vector<int> labels;
};

GmmDraw draw_gmm(const DatasetSpec& spec, Index n, Rng& rng) {
    if (spec.means.empty()) throw std::invalid_argument("gmm: no component means");
    for (const RowVec& m : spec.means) {
        if (m.size() != spec.means.front().size()) {
            throw std::invalid_argument("gmm: component means of unequal dimension");
        }
    }
    if (!(spec.component_sigma > 0.0)) {
        throw std::invalid_argument("gmm: component sigma must be positive");
    }
    const Index dim = spec.means.front().size();
    std::uniform_int_distribution<std::size_t> comp(0, spec.means.size() - 1);
    std::normal_distribution<double> normal(0.0, spec.component_sigma);
    GmmDraw out;
    out.samples.resize(n, dim);
    out.labels.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const std::size_t c = comp(rng);
        out.labels[static_cast<std::size_t>(i)] = static_cast<int>(c);
        for (Index d = 0; d < dim; ++d) out.samples(i, d) = spec.means[c][d] + normal(rng);
    }
    return out;
}

Mat draw_ring(const DatasetSpec& spec, Index n, Rng& rng) {
    if (!(spec.ring_radius > 0.0) || spec.ring_noise < 0.0) {
        throw std::invalid_argument("ring2d: bad radius or noise");
    }
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> radial(0.0, spec.ring_noise);
    Mat out(n, 2);
    for (Index i = 0; i < n; ++i) {
        const double th = angle(rng);
        const double r = spec.ring_radius + radial(rng);
        out(i, 0) = r * std::cos(th);
        out(i, 1) = r * std::sin(th);
    }
    return out;
}

oracle::LinearGaussianModel make_lg_model(const DatasetSpec& spec) {
    if (spec.lg_dim_x < 1 || spec.lg_dim_z < 1 || !(spec.lg_noise_sigma > 0.0)) {
        throw std::invalid_argument("linear-gaussian: bad dimensions or noise");
    }
    oracle::LinearGaussianModel m;
    m.prior_cov = Mat::Identity(spec.lg_dim_x, spec.lg_dim_x);
    // fixed mixing matrix from the seed lineage, independent of sample draws
    Rng rng = derive_rng(spec.seed, 0xA11CE);
    std::normal_distribution<double> normal(0.0, 1.0);
    m.enc_matrix.resize(spec.lg_dim_z, spec.lg_dim_x);
    const double s = 1.0 / std::sqrt(static_cast<double>(spec.lg_dim_x));
    for (Index r = 0; r < spec.lg_dim_z; ++r)
        for (Index c = 0; c < spec.lg_dim_x; ++c) m.enc_matrix(r, c) = s * normal(rng);
    m.noise_cov = spec.lg_noise_sigma * spec.lg_noise_sigma *
                  Mat::Identity(spec.lg_dim_z, spec.lg_dim_z);
    return m;
}

Mat draw_lg(const DatasetSpec& spec, Index n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat out(n, spec.lg_dim_x);
    for (Index i = 0; i < n; ++i)
        for (Index d = 0; d < spec.lg_dim_x; ++d) out(i, d) = normal(rng);
    return out;
}

Mat draw_world(const DatasetSpec& spec, Index n, Rng& rng) {
    if (!spec.world) {
        throw std::invalid_argument("discrete-world-samples: no world supplied");
    }
    spec.world->validate();
    const Vec& px = spec.world->px;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Mat out = Mat::Zero(n, px.size());
    for (Index i = 0; i < n; ++i) {
        double u = unit(rng), acc = 0.0;
        Index pick = px.size() - 1;
        for (Index x = 0; x < px.size(); ++x) {
            acc += px[x];
            if (u < acc) {
                pick = x;
                break;
            }
        }
        out(i, pick) = 1.0;
    }
    return out;
}

Mat draw_kind(const DatasetSpec& spec, Index n, Rng& rng, std::vector<int>* labels) {
    switch (spec.kind) {
    case DatasetKind::Gmm2d: {
        return draw_gmm(spec, n, rng).samples;
    }
    case DatasetKind::LabeledGmm: {
        GmmDraw d = draw_gmm(spec, n, rng);
        if (labels) *labels = std::move(d.labels);
        return std::move(d.samples);
    }
    case DatasetKind::Ring2d: return draw_ring(spec, n, rng);
    case DatasetKind::LinearGaussian: return draw_lg(spec, n, rng);
    case DatasetKind::DiscreteWorldSamples: return draw_world(spec, n, rng);
    }
    throw std::logic_error("draw_kind: unreachable");
}

} // namespace

Rng derive_rng(std::uint64_t seed, std::uint64_t salt) {
    return Rng(splitmix64(seed ^ splitmix64(salt)));
}

Dataset generate(const DatasetSpec& spec) {
    if (spec.n_train < 1 || spec.n_test < 1) {
        throw std::invalid_argument("dataset: sample counts must be positive");
    }
    Dataset out;
    out.spec = spec;
    Rng train_rng = derive_rng(spec.seed, 1);
    Rng test_rng = derive_rng(spec.seed, 2);
    out.train = draw_kind(spec, spec.n_train, train_rng, &out.train_labels);
    out.test = draw_kind(spec, spec.n_test, test_rng, &out.test_labels);
    if (spec.kind == DatasetKind::LinearGaussian) out.lg = make_lg_model(spec);
    if (spec.kind == DatasetKind::DiscreteWorldSamples) out.world = spec.world;
    return out;
}

Mat extend_samples(const DatasetSpec& spec, Index n, std::uint64_t salt) {
    Rng rng = derive_rng(spec.seed, 0xE07E + salt);
    return draw_kind(spec, n, rng, nullptr);
}

} // namespace biblab
