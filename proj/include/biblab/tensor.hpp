#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace biblab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

class Tape;

/**
 * Dense value of rank 0, 1 or 2 backed by an Eigen matrix of doubles.
 *
 * Rank 0 is stored as a 1x1 matrix, rank 1 as a 1xn row; the flat layout is
 * row-major. A tensor may carry a node id into the currently active Tape, in
 * which case operations consuming it are recorded for reverse-mode
 * differentiation.
 */
class Tensor {
  public:
    Tensor() : value_(Mat::Zero(1, 1)), rank_(0) {}

    static Tensor scalar(double v);
    static Tensor row(RowVec v);
    static Tensor matrix(Mat m);
    static Tensor zeros(Index rows, Index cols);
    static Tensor from_flat(const std::vector<Index>& shape,
                            const std::vector<double>& row_major);

    const Mat& value() const { return value_; }
    /// Mutable storage access; intended for leaf edits between tapes
    /// (optimizer updates, finite-difference probing).
    Mat& value_mut() { return value_; }

    double scalar_value() const;

    int rank() const { return rank_; }
    Index rows() const { return value_.rows(); }
    Index cols() const { return value_.cols(); }
    Index numel() const { return value_.size(); }
    std::vector<Index> shape() const;
    std::vector<double> flat() const;

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool b) {
        requires_grad_ = b;
        return *this;
    }

    int node() const { return node_; }
    bool traced() const { return node_ >= 0; }

  private:
    friend class Tape;
    friend Tensor make_tensor(Mat value, int rank, int node);

    Mat value_;
    int rank_;
    bool requires_grad_ = false;
    int node_ = -1;
};

std::string shape_string(const Tensor& t);

/// Builds a tensor handle around a value, optionally bound to tape node id.
/// Pairs with Tape::record when defining composite operations.
Tensor make_tensor(Mat value, int rank, int node);

/// Named trainable tensor paired with its gradient accumulator.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name_, Tensor value_);

    std::string name;
    Tensor value;
    Mat grad;

    void zero_grad() { grad.setZero(); }
};

/**
 * Reverse-mode computation tape, rebuilt each forward pass.
 *
 * Constructing a Tape makes it the active tape for the current thread;
 * destruction restores the previous one. Operations record themselves when
 * any input is traced; leaf parameters enter via watch(). backward() resets
 * node adjoints, seeds the loss with 1 and replays local backward rules in
 * reverse recording order (which is topological by construction), then adds
 * each watched parameter's node adjoint into Parameter::grad.
 */
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, const Mat& out_grad)>;

    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    /// Places p on the tape as a gradient-rooted leaf. Watching the same
    /// parameter twice on one tape yields the same node, so fan-out
    /// accumulates additively.
    Tensor watch(Parameter& p);

    void backward(const Tensor& loss);

    /// Extension point for composite operations with hand-derived adjoints:
    /// record the output value, then hand the id to make_tensor.
    int record(Mat value, int rank, std::vector<int> parents, BackwardFn bw);
    void accumulate(int node, const Mat& contribution);

    const Mat& value(int node) const;
    const Mat& grad(int node) const;
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Mat value;
        Mat grad;
        std::vector<int> parents;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::vector<std::pair<Parameter*, int>> watched_;
    std::unordered_map<const Parameter*, int> watch_index_;
    Tape* prev_ = nullptr;
};

/// Runs backward from a scalar loss; grads land in the watched Parameters.
void backward(Tape& tape, const Tensor& loss);

// ---------------------------------------------------------------------------
// Forward operations. Each op validates shapes, computes its value with
// Eigen and, when an input is traced on the active tape, records itself with
// the local backward rule.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b); // elementwise
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);  // -> rank-0
Tensor mean(const Tensor& a); // -> rank-0
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a); // domain error on non-positive entries
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor negate(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor abs(const Tensor& a);
/// (B x n) + (1 x n), the single supported broadcast.
Tensor broadcast_add_row(const Tensor& x, const Tensor& row);
/// Saturates entries to [lo, hi]; zero subgradient outside the open interval.
Tensor clamp(const Tensor& a, double lo, double hi);

/**
 * Central-difference gradient of f with respect to every coordinate of p,
 * (f(p + h e_i) - f(p - h e_i)) / 2h. The independent oracle against which
 * tape gradients are checked.
 */
Mat finite_diff_grad(const std::function<double()>& f, Parameter& p, double h);

/// Largest relative error between g and reference r, entrywise, with the
/// denominator floored at 1.
double max_rel_error(const Mat& g, const Mat& r);

// ---------------------------------------------------------------------------
// Optimizer interface; concrete optimizers live with the training harness.
// ---------------------------------------------------------------------------

class Optimizer {
  public:
    virtual ~Optimizer() = default;
    /// Applies one update from the accumulated grads, then zeroes them.
    virtual void step(const std::vector<Parameter*>& params) = 0;
};

} // namespace biblab
