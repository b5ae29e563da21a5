#include "biblab/tensor.hpp"

#include <cmath>
#include <sstream>

namespace biblab {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string dims_string(Index rows, Index cols, int rank) {
    std::ostringstream os;
    os << "(";
    if (rank == 0) {
        os << "scalar";
    } else if (rank == 1) {
        os << cols;
    } else {
        os << rows << "x" << cols;
    }
    os << ")";
    return os.str();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_string(a) + " vs " + shape_string(b));
    }
}

} // namespace

std::string shape_string(const Tensor& t) {
    return dims_string(t.rows(), t.cols(), t.rank());
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor make_tensor(Mat value, int rank, int node) {
    Tensor t;
    t.value_ = std::move(value);
    t.rank_ = rank;
    t.node_ = node;
    return t;
}

Tensor Tensor::scalar(double v) {
    return make_tensor(Mat::Constant(1, 1, v), 0, -1);
}

Tensor Tensor::row(RowVec v) {
    return make_tensor(Mat(std::move(v)), 1, -1);
}

Tensor Tensor::matrix(Mat m) {
    return make_tensor(std::move(m), 2, -1);
}

Tensor Tensor::zeros(Index rows, Index cols) {
    return make_tensor(Mat::Zero(rows, cols), 2, -1);
}

Tensor Tensor::from_flat(const std::vector<Index>& shape,
                         const std::vector<double>& row_major) {
    if (shape.size() > 2) {
        throw ShapeError("from_flat: rank " + std::to_string(shape.size()) +
                         " unsupported, max rank is 2");
    }
    Index rows = 1, cols = 1;
    if (shape.size() == 1) {
        cols = shape[0];
    } else if (shape.size() == 2) {
        rows = shape[0];
        cols = shape[1];
    }
    for (Index d : shape) {
        if (d <= 0) throw ShapeError("from_flat: non-positive dimension");
    }
    if (static_cast<Index>(row_major.size()) != rows * cols) {
        throw ShapeError("from_flat: " + std::to_string(row_major.size()) +
                         " values for shape " + dims_string(rows, cols, 2));
    }
    Mat m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c)
            m(r, c) = row_major[static_cast<std::size_t>(r * cols + c)];
    return make_tensor(std::move(m), static_cast<int>(shape.size()), -1);
}

double Tensor::scalar_value() const {
    if (value_.size() != 1) {
        throw ShapeError("scalar_value: tensor has shape " + shape_string(*this));
    }
    return value_(0, 0);
}

std::vector<Index> Tensor::shape() const {
    switch (rank_) {
    case 0: return {};
    case 1: return {value_.cols()};
    default: return {value_.rows(), value_.cols()};
    }
}

std::vector<double> Tensor::flat() const {
    std::vector<double> out(static_cast<std::size_t>(value_.size()));
    Index k = 0;
    for (Index r = 0; r < value_.rows(); ++r)
        for (Index c = 0; c < value_.cols(); ++c)
            out[static_cast<std::size_t>(k++)] = value_(r, c);
    return out;
}

// ---------------------------------------------------------------------------
// Parameter
// ---------------------------------------------------------------------------

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)) {
    value.set_requires_grad(true);
    grad = Mat::Zero(value.rows(), value.cols());
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() {
    g_active_tape = prev_;
}

Tape* Tape::active() {
    return g_active_tape;
}

Tensor Tape::watch(Parameter& p) {
    auto it = watch_index_.find(&p);
    if (it != watch_index_.end()) {
        return make_tensor(nodes_[static_cast<std::size_t>(it->second)].value, p.value.rank(),
                           it->second);
    }
    int id = record(p.value.value(), p.value.rank(), {}, nullptr);
    watch_index_.emplace(&p, id);
    watched_.emplace_back(&p, id);
    return make_tensor(p.value.value(), p.value.rank(), id);
}

int Tape::record(Mat value, int rank, std::vector<int> parents, BackwardFn bw) {
    (void)rank;
    Node n;
    n.grad = Mat::Zero(value.rows(), value.cols());
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int node, const Mat& contribution) {
    if (node < 0) return;
    nodes_[static_cast<std::size_t>(node)].grad += contribution;
}

const Mat& Tape::value(int node) const {
    return nodes_.at(static_cast<std::size_t>(node)).value;
}

const Mat& Tape::grad(int node) const {
    return nodes_.at(static_cast<std::size_t>(node)).grad;
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_string(loss));
    }
    if (!loss.traced()) {
        throw ShapeError("backward: loss is not recorded on this tape");
    }
    for (Node& n : nodes_) n.grad.setZero();
    nodes_[static_cast<std::size_t>(loss.node())].grad(0, 0) = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward) n.backward(*this, n.grad);
    }
    for (auto& [param, node] : watched_) {
        param->grad += nodes_[static_cast<std::size_t>(node)].grad;
    }
}

void backward(Tape& tape, const Tensor& loss) {
    tape.backward(loss);
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace {

/// Finishes an op: records on the active tape when an input is traced.
Tensor finish(Mat out, int rank, std::initializer_list<int> parents,
              Tape::BackwardFn bw) {
    Tape* t = Tape::active();
    bool any_traced = false;
    for (int p : parents) any_traced = any_traced || p >= 0;
    if (!t || !any_traced) return make_tensor(std::move(out), rank, -1);
    int id = t->record(std::move(out), rank, parents, std::move(bw));
    return make_tensor(t->value(id), rank, id);
}

int elementwise_rank(const Tensor& a, const Tensor& b) {
    return std::max(a.rank(), b.rank());
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    const int ia = a.node(), ib = b.node();
    return finish(a.value() + b.value(), elementwise_rank(a, b), {ia, ib},
                  [ia, ib](Tape& t, const Mat& g) {
                      t.accumulate(ia, g);
                      t.accumulate(ib, g);
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    const int ia = a.node(), ib = b.node();
    return finish(a.value() - b.value(), elementwise_rank(a, b), {ia, ib},
                  [ia, ib](Tape& t, const Mat& g) {
                      t.accumulate(ia, g);
                      t.accumulate(ib, -g);
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    const int ia = a.node(), ib = b.node();
    const Mat av = a.value(), bv = b.value();
    return finish(av.cwiseProduct(bv), elementwise_rank(a, b), {ia, ib},
                  [ia, ib, av, bv](Tape& t, const Mat& g) {
                      t.accumulate(ia, g.cwiseProduct(bv));
                      t.accumulate(ib, g.cwiseProduct(av));
                  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_string(a) +
                         " vs " + shape_string(b));
    }
    const int ia = a.node(), ib = b.node();
    const Mat av = a.value(), bv = b.value();
    int rank = (a.rank() <= 1 && b.cols() >= 1 && a.rows() == 1) ? 1 : 2;
    return finish(av * bv, rank, {ia, ib}, [ia, ib, av, bv](Tape& t, const Mat& g) {
        t.accumulate(ia, g * bv.transpose());
        t.accumulate(ib, av.transpose() * g);
    });
}

Tensor sum(const Tensor& a) {
    const int ia = a.node();
    const Index r = a.rows(), c = a.cols();
    return finish(Mat::Constant(1, 1, a.value().sum()), 0, {ia},
                  [ia, r, c](Tape& t, const Mat& g) {
                      t.accumulate(ia, Mat::Constant(r, c, g(0, 0)));
                  });
}

Tensor mean(const Tensor& a) {
    const int ia = a.node();
    const Index r = a.rows(), c = a.cols();
    const double n = static_cast<double>(r * c);
    return finish(Mat::Constant(1, 1, a.value().mean()), 0, {ia},
                  [ia, r, c, n](Tape& t, const Mat& g) {
                      t.accumulate(ia, Mat::Constant(r, c, g(0, 0) / n));
                  });
}

Tensor exp(const Tensor& a) {
    const int ia = a.node();
    Mat out = a.value().array().exp();
    const Mat ov = out;
    return finish(std::move(out), a.rank(), {ia}, [ia, ov](Tape& t, const Mat& g) {
        t.accumulate(ia, g.cwiseProduct(ov));
    });
}

Tensor log(const Tensor& a) {
    if ((a.value().array() <= 0.0).any()) {
        throw DomainError("log: non-positive input entry");
    }
    const int ia = a.node();
    const Mat av = a.value();
    return finish(av.array().log(), a.rank(), {ia}, [ia, av](Tape& t, const Mat& g) {
        t.accumulate(ia, g.cwiseQuotient(av));
    });
}

Tensor tanh(const Tensor& a) {
    const int ia = a.node();
    Mat out = a.value().array().tanh();
    const Mat ov = out;
    return finish(std::move(out), a.rank(), {ia}, [ia, ov](Tape& t, const Mat& g) {
        t.accumulate(ia, g.cwiseProduct((1.0 - ov.array().square()).matrix()));
    });
}

Tensor relu(const Tensor& a) {
    const int ia = a.node();
    const Mat av = a.value();
    return finish(av.cwiseMax(0.0), a.rank(), {ia}, [ia, av](Tape& t, const Mat& g) {
        // subgradient 0 at exactly 0
        Mat mask = (av.array() > 0.0).cast<double>();
        t.accumulate(ia, g.cwiseProduct(mask));
    });
}

Tensor softplus(const Tensor& a) {
    const int ia = a.node();
    const Mat av = a.value();
    Mat out = av.array().max(0.0) + (-av.array().abs()).exp().log1p();
    return finish(std::move(out), a.rank(), {ia}, [ia, av](Tape& t, const Mat& g) {
        Mat s = (1.0 / (1.0 + (-av.array()).exp())).matrix();
        t.accumulate(ia, g.cwiseProduct(s));
    });
}

namespace {
Mat stable_sigmoid(const Mat& x) {
    // exp only ever sees non-positive arguments
    Mat out(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        for (Index c = 0; c < x.cols(); ++c) {
            double v = x(r, c);
            if (v >= 0.0) {
                out(r, c) = 1.0 / (1.0 + std::exp(-v));
            } else {
                double e = std::exp(v);
                out(r, c) = e / (1.0 + e);
            }
        }
    }
    return out;
}
} // namespace

Tensor sigmoid(const Tensor& a) {
    const int ia = a.node();
    Mat out = stable_sigmoid(a.value());
    const Mat ov = out;
    return finish(std::move(out), a.rank(), {ia}, [ia, ov](Tape& t, const Mat& g) {
        t.accumulate(ia, g.cwiseProduct(ov.cwiseProduct((1.0 - ov.array()).matrix())));
    });
}

Tensor negate(const Tensor& a) {
    const int ia = a.node();
    return finish(-a.value(), a.rank(), {ia}, [ia](Tape& t, const Mat& g) {
        t.accumulate(ia, -g);
    });
}

Tensor scale(const Tensor& a, double c) {
    const int ia = a.node();
    return finish(c * a.value(), a.rank(), {ia}, [ia, c](Tape& t, const Mat& g) {
        t.accumulate(ia, c * g);
    });
}

Tensor abs(const Tensor& a) {
    const int ia = a.node();
    const Mat av = a.value();
    return finish(av.cwiseAbs(), a.rank(), {ia}, [ia, av](Tape& t, const Mat& g) {
        // sign() gives 0 at exactly 0
        Mat sgn = av.array().sign();
        t.accumulate(ia, g.cwiseProduct(sgn));
    });
}

Tensor broadcast_add_row(const Tensor& x, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != x.cols()) {
        throw ShapeError("broadcast_add_row: expected (1x" +
                         std::to_string(x.cols()) + ") row for batch " +
                         shape_string(x) + ", got " + shape_string(row));
    }
    const int ix = x.node(), ir = row.node();
    Mat out = x.value().rowwise() + RowVec(row.value().row(0));
    return finish(std::move(out), 2, {ix, ir}, [ix, ir](Tape& t, const Mat& g) {
        t.accumulate(ix, g);
        t.accumulate(ir, g.colwise().sum());
    });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw DomainError("clamp: lo > hi");
    const int ia = a.node();
    const Mat av = a.value();
    return finish(av.cwiseMax(lo).cwiseMin(hi), a.rank(), {ia},
                  [ia, av, lo, hi](Tape& t, const Mat& g) {
                      Mat mask = ((av.array() > lo) && (av.array() < hi)).cast<double>();
                      t.accumulate(ia, g.cwiseProduct(mask));
                  });
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

Mat finite_diff_grad(const std::function<double()>& f, Parameter& p, double h) {
    if (!(h > 0.0)) throw DomainError("finite_diff_grad: h must be positive");
    Mat& v = p.value.value_mut();
    Mat out(v.rows(), v.cols());
    for (Index r = 0; r < v.rows(); ++r) {
        for (Index c = 0; c < v.cols(); ++c) {
            const double saved = v(r, c);
            v(r, c) = saved + h;
            const double fp = f();
            v(r, c) = saved - h;
            const double fm = f();
            v(r, c) = saved;
            out(r, c) = (fp - fm) / (2.0 * h);
        }
    }
    return out;
}

double max_rel_error(const Mat& g, const Mat& r) {
    if (g.rows() != r.rows() || g.cols() != r.cols()) {
        throw ShapeError("max_rel_error: shape mismatch");
    }
    double worst = 0.0;
    for (Index i = 0; i < g.rows(); ++i) {
        for (Index j = 0; j < g.cols(); ++j) {
            double denom = std::max(1.0, std::abs(r(i, j)));
            worst = std::max(worst, std::abs(g(i, j) - r(i, j)) / denom);
        }
    }
    return worst;
}

} // namespace biblab
