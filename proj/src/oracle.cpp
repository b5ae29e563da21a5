#include "biblab/oracle.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <iomanip>
#include <sstream>

namespace biblab::oracle {

namespace {

constexpr double kRowSumTol = 1e-12;
constexpr Index kMaxX = 16, kMaxZ = 16, kMaxC = 8;

double xlogx(double p) {
    return p > 0.0 ? p * std::log(p) : 0.0;
}

void check_table(const char* name, const Mat& t) {
    if ((t.array() < 0.0).any()) {
        throw OracleError(std::string(name) + ": negative entry");
    }
}

void check_rows_sum_one(const char* name, const Mat& t) {
    for (Index r = 0; r < t.rows(); ++r) {
        if (std::abs(t.row(r).sum() - 1.0) > kRowSumTol) {
            throw OracleError(std::string(name) + ": row " + std::to_string(r) +
                              " sums to " + std::to_string(t.row(r).sum()));
        }
    }
}

} // namespace

void DiscreteWorld::validate() const {
    if (nx() < 1 || nx() > kMaxX) throw OracleError("px: alphabet size out of range");
    if (nz() < 1 || nz() > kMaxZ) throw OracleError("prior: alphabet size out of range");
    check_table("px", px);
    check_rows_sum_one("px", px.transpose());
    check_table("prior", prior);
    check_rows_sum_one("prior", prior.transpose());
    if (enc.rows() != nx() || enc.cols() != nz()) {
        throw OracleError("enc: expected " + std::to_string(nx()) + "x" +
                          std::to_string(nz()) + " table");
    }
    check_table("enc", enc);
    check_rows_sum_one("enc", enc);
    if (labels) {
        if (labels->rows() < 1 || labels->rows() > kMaxC || labels->cols() != nx()) {
            throw OracleError("labels: bad dimensions");
        }
        check_table("labels", *labels);
        if (std::abs(labels->sum() - 1.0) > kRowSumTol) {
            throw OracleError("labels: joint sums to " + std::to_string(labels->sum()));
        }
        // consistency: marginal over c must reproduce px
        RowVec marg = labels->colwise().sum();
        for (Index x = 0; x < nx(); ++x) {
            if (std::abs(marg[x] - px[x]) > 1e-9) {
                throw OracleError("labels: x-marginal disagrees with px");
            }
        }
    }
    if (classifier) {
        if (!labels) throw OracleError("classifier without labels table");
        if (classifier->rows() != nz() || classifier->cols() != labels->rows()) {
            throw OracleError("classifier: bad dimensions");
        }
        check_table("classifier", *classifier);
        check_rows_sum_one("classifier", *classifier);
    }
}

Vec DiscreteWorld::latent_marginal() const {
    return enc.transpose() * px;
}

double exact_mi(const DiscreteWorld& w, MiPair pair) {
    if (pair == MiPair::XZ) {
        const Vec qz = w.latent_marginal();
        double mi = 0.0;
        for (Index x = 0; x < w.nx(); ++x) {
            for (Index z = 0; z < w.nz(); ++z) {
                const double joint = w.px[x] * w.enc(x, z);
                if (joint > 0.0) mi += joint * std::log(w.enc(x, z) / qz[z]);
            }
        }
        return mi;
    }
    if (!w.labels) throw OracleError("exact_mi(ZC): labels table missing");
    // p(c,z) = sum_x p(c,x) q(z|x)
    const Mat joint_cz = *w.labels * w.enc; // |C| x |Z|
    const Vec pc = joint_cz.rowwise().sum();
    const Vec pz = joint_cz.colwise().sum();
    double mi = 0.0;
    for (Index c = 0; c < joint_cz.rows(); ++c) {
        for (Index z = 0; z < joint_cz.cols(); ++z) {
            const double j = joint_cz(c, z);
            if (j > 0.0) mi += j * std::log(j / (pc[c] * pz[z]));
        }
    }
    return mi;
}

FirstTermDecomposition decompose_first_term(const DiscreteWorld& w) {
    const Vec qz = w.latent_marginal();
    for (Index z = 0; z < w.nz(); ++z) {
        if (qz[z] > 0.0 && w.prior[z] <= 0.0) {
            throw OracleError("decompose_first_term: prior lacks support at z=" +
                              std::to_string(z));
        }
    }
    double term_a = 0.0;
    for (Index x = 0; x < w.nx(); ++x) {
        if (w.px[x] <= 0.0) continue;
        double kl = 0.0;
        for (Index z = 0; z < w.nz(); ++z) {
            const double q = w.enc(x, z);
            if (q > 0.0) kl += q * std::log(q / w.prior[z]);
        }
        term_a += w.px[x] * kl;
    }
    double term_b = 0.0;
    for (Index z = 0; z < w.nz(); ++z) {
        if (qz[z] > 0.0) term_b += qz[z] * std::log(qz[z] / w.prior[z]);
    }
    return {term_a, term_b, exact_mi(w, MiPair::XZ)};
}

SupervisedBound supervised_bound(const DiscreteWorld& w) {
    if (!w.labels) throw OracleError("supervised_bound: labels table missing");
    if (!w.classifier) throw OracleError("supervised_bound: classifier table missing");
    const Mat joint_cz = *w.labels * w.enc; // |C| x |Z|
    const Vec pc = joint_cz.rowwise().sum();
    double h_c = entropy(pc);
    double ce = 0.0; // H_{theta,phi}(C|Z)
    for (Index c = 0; c < joint_cz.rows(); ++c) {
        for (Index z = 0; z < joint_cz.cols(); ++z) {
            const double j = joint_cz(c, z);
            if (j > 0.0) {
                const double pred = (*w.classifier)(z, c);
                if (pred <= 0.0) {
                    throw OracleError("supervised_bound: classifier assigns zero to "
                                      "a (c,z) pair with mass");
                }
                ce -= j * std::log(pred);
            }
        }
    }
    return {exact_mi(w, MiPair::ZC), h_c - ce};
}

Mat true_classifier(const DiscreteWorld& w) {
    if (!w.labels) throw OracleError("true_classifier: labels table missing");
    const Mat joint_cz = *w.labels * w.enc; // |C| x |Z|
    const Vec pz = joint_cz.colwise().sum();
    Mat out(w.nz(), joint_cz.rows());
    for (Index z = 0; z < w.nz(); ++z) {
        if (pz[z] > 0.0) {
            out.row(z) = joint_cz.col(z).transpose() / pz[z];
        } else {
            out.row(z).setConstant(1.0 / static_cast<double>(joint_cz.rows()));
        }
    }
    return out;
}

double lg_exact_mi(const LinearGaussianModel& m) {
    auto logdet_spd = [](const Mat& s, const char* name) {
        Eigen::LLT<Mat> llt(s);
        if (llt.info() != Eigen::Success) {
            throw OracleError(std::string(name) + ": matrix is not s.p.d.");
        }
        return 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
    };
    const Mat cov_z = m.enc_matrix * m.prior_cov * m.enc_matrix.transpose() + m.noise_cov;
    return 0.5 * logdet_spd(cov_z, "marginal latent covariance") -
           0.5 * logdet_spd(m.noise_cov, "noise covariance");
}

double exact_kl(const Vec& p, const Vec& q) {
    if (p.size() != q.size()) throw OracleError("exact_kl: alphabet size mismatch");
    double kl = 0.0;
    for (Index i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            if (q[i] <= 0.0) {
                throw OracleError("exact_kl: q lacks support at symbol " +
                                  std::to_string(i));
            }
            kl += p[i] * std::log(p[i] / q[i]);
        }
    }
    return kl;
}

double entropy(const Vec& p) {
    double h = 0.0;
    for (Index i = 0; i < p.size(); ++i) h -= xlogx(p[i]);
    return h;
}

// ---------------------------------------------------------------------------
// Generation and round-trip
// ---------------------------------------------------------------------------

namespace {

Vec random_simplex(Index n, Rng& rng) {
    // strictly positive rows keep every KL finite
    std::exponential_distribution<double> ex(1.0);
    Vec v(n);
    for (Index i = 0; i < n; ++i) v[i] = ex(rng) + 1e-3;
    return v / v.sum();
}

} // namespace

DiscreteWorld random_world(const WorldGenOptions& opt, Rng& rng) {
    DiscreteWorld w;
    w.px = random_simplex(opt.nx, rng);
    w.enc.resize(opt.nx, opt.nz);
    if (opt.deterministic_enc) {
        std::uniform_int_distribution<Index> pick(0, opt.nz - 1);
        w.enc.setZero();
        for (Index x = 0; x < opt.nx; ++x) w.enc(x, pick(rng)) = 1.0;
    } else {
        for (Index x = 0; x < opt.nx; ++x) w.enc.row(x) = random_simplex(opt.nz, rng).transpose();
    }
    w.prior = opt.prior_is_marginal ? Vec(w.latent_marginal()) : random_simplex(opt.nz, rng);
    if (opt.nc > 0) {
        // joint p(c,x) = p(x) p(c|x) with random conditionals
        Mat labels(opt.nc, opt.nx);
        for (Index x = 0; x < opt.nx; ++x) {
            labels.col(x) = random_simplex(opt.nc, rng) * w.px[x];
        }
        w.labels = labels;
        if (opt.with_classifier) {
            Mat cls(opt.nz, opt.nc);
            for (Index z = 0; z < opt.nz; ++z) {
                cls.row(z) = random_simplex(opt.nc, rng).transpose();
            }
            w.classifier = cls;
        }
    }
    return w;
}

namespace {
void write_table(std::ostream& os, const std::string& name, const Mat& t) {
    os << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (Index r = 0; r < t.rows(); ++r) {
        for (Index c = 0; c < t.cols(); ++c) {
            if (c) os << ' ';
            os << std::setprecision(17) << t(r, c);
        }
        os << '\n';
    }
}
} // namespace

void save_world(std::ostream& os, const DiscreteWorld& w) {
    write_table(os, "px", w.px.transpose());
    write_table(os, "enc", w.enc);
    write_table(os, "prior", w.prior.transpose());
    if (w.labels) write_table(os, "labels", *w.labels);
    if (w.classifier) write_table(os, "classifier", *w.classifier);
}

DiscreteWorld load_world(std::istream& is) {
    DiscreteWorld w;
    std::string name;
    bool saw_px = false, saw_enc = false, saw_prior = false;
    while (is >> name) {
        Index rows, cols;
        if (!(is >> rows >> cols) || rows < 1 || cols < 1) {
            throw OracleError("world file: bad header for table '" + name + "'");
        }
        Mat t(rows, cols);
        for (Index r = 0; r < rows; ++r)
            for (Index c = 0; c < cols; ++c)
                if (!(is >> t(r, c))) {
                    throw OracleError("world file: truncated table '" + name + "'");
                }
        if (name == "px") {
            w.px = t.row(0).transpose();
            saw_px = true;
        } else if (name == "enc") {
            w.enc = t;
            saw_enc = true;
        } else if (name == "prior") {
            w.prior = t.row(0).transpose();
            saw_prior = true;
        } else if (name == "labels") {
            w.labels = t;
        } else if (name == "classifier") {
            w.classifier = t;
        } else {
            throw OracleError("world file: unknown table '" + name + "'");
        }
    }
    if (!saw_px || !saw_enc || !saw_prior) {
        throw OracleError("world file: px, enc and prior tables are required");
    }
    w.validate();
    return w;
}

std::string world_to_string(const DiscreteWorld& w) {
    std::ostringstream os;
    save_world(os, w);
    return os.str();
}

} // namespace biblab::oracle
