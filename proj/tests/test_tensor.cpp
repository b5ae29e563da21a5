#include "biblab/tensor.hpp"

#include <doctest.h>

#include <cmath>

using namespace biblab;

TEST_CASE("forward ops match their definitions") {
    SUBCASE("matmul identity") {
        Tensor i2 = Tensor::matrix(Mat::Identity(2, 2));
        Tensor m = Tensor::from_flat({2, 2}, {3, 4, 5, 6});
        Tensor out = matmul(i2, m);
        CHECK(out.value()(0, 0) == 3.0);
        CHECK(out.value()(0, 1) == 4.0);
        CHECK(out.value()(1, 0) == 5.0);
        CHECK(out.value()(1, 1) == 6.0);
    }
    SUBCASE("sum of a vector") {
        CHECK(sum(Tensor::from_flat({3}, {1, 2, 3})).scalar_value() == 6.0);
    }
    SUBCASE("softplus at zero is ln 2") {
        CHECK(softplus(Tensor::scalar(0.0)).scalar_value() ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("log rejects non-positive inputs") {
        CHECK_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);
        CHECK_THROWS_AS(log(Tensor::from_flat({2}, {1.0, -0.5})), DomainError);
    }
    SUBCASE("shape mismatch names both shapes") {
        Tensor a = Tensor::zeros(2, 3), b = Tensor::zeros(3, 2);
        CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("2x3"), ShapeError);
        CHECK_THROWS_AS(matmul(a, a), ShapeError);
        CHECK_THROWS_AS(broadcast_add_row(a, Tensor::zeros(1, 2)), ShapeError);
    }
    SUBCASE("ops are deterministic bit-exactly") {
        Rng rng(7);
        std::normal_distribution<double> n(0.0, 1.0);
        Mat m(4, 3);
        for (Index r = 0; r < 4; ++r)
            for (Index c = 0; c < 3; ++c) m(r, c) = n(rng);
        Tensor t = Tensor::matrix(m);
        Mat a = tanh(exp(scale(t, 0.3))).value();
        Mat b = tanh(exp(scale(t, 0.3))).value();
        CHECK(a == b);
    }
}

TEST_CASE("backward follows the chain rule") {
    SUBCASE("d(x*x)/dx at 3 is 6") {
        Parameter x("x", Tensor::scalar(3.0));
        Tape tape;
        Tensor tx = tape.watch(x);
        Tensor loss = mul(tx, tx);
        tape.backward(loss);
        CHECK(x.grad(0, 0) == doctest::Approx(6.0).epsilon(1e-14));
    }
    SUBCASE("sum(A*B) wrt A equals B transposed") {
        Parameter a("a", Tensor::matrix(Mat::Identity(2, 2)));
        Mat b(2, 2);
        b << 1, 2, 3, 4;
        Tape tape;
        Tensor loss = sum(matmul(tape.watch(a), Tensor::matrix(b)));
        tape.backward(loss);
        // d sum(AB) / dA = ones * B^T; with ones(2x2) this is rowwise sums of B
        Mat expected = Mat::Ones(2, 2) * b.transpose();
        CHECK((a.grad - expected).cwiseAbs().maxCoeff() < 1e-14);
    }
    SUBCASE("backward requires a scalar traced loss") {
        Parameter a("a", Tensor::zeros(2, 2));
        Tape tape;
        Tensor t = tape.watch(a);
        CHECK_THROWS_AS(tape.backward(t), ShapeError);
        CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), ShapeError);
    }
    SUBCASE("running backward twice without zeroing doubles every grad") {
        Parameter x("x", Tensor::scalar(1.5));
        Tape tape;
        Tensor tx = tape.watch(x);
        Tensor loss = mul(tx, tx);
        tape.backward(loss);
        const double once = x.grad(0, 0);
        tape.backward(loss);
        CHECK(x.grad(0, 0) == 2.0 * once);
    }
    SUBCASE("fan-out accumulates additively") {
        Parameter x("x", Tensor::scalar(2.0));
        Tape tape;
        Tensor tx = tape.watch(x);
        // f = x^2 + 3x uses x twice
        Tensor loss = add(mul(tx, tx), scale(tx, 3.0));
        tape.backward(loss);
        CHECK(x.grad(0, 0) == doctest::Approx(7.0).epsilon(1e-14));
    }
    SUBCASE("watching the same parameter twice reuses the node") {
        Parameter x("x", Tensor::scalar(2.0));
        Tape tape;
        Tensor t1 = tape.watch(x);
        Tensor t2 = tape.watch(x);
        CHECK(t1.node() == t2.node());
    }
}

TEST_CASE("finite differences agree with the tape") {
    SUBCASE("quadratic") {
        Parameter x("x", Tensor::scalar(3.0));
        auto f = [&]() { return mul(x.value, x.value).scalar_value(); };
        Mat fd = finite_diff_grad(f, x, 1e-4);
        CHECK(fd(0, 0) == doctest::Approx(6.0).epsilon(1e-7));
    }
    SUBCASE("constant function has zero gradient") {
        Parameter x("x", Tensor::from_flat({3}, {1, 2, 3}));
        auto f = [&]() { return 42.0; };
        Mat fd = finite_diff_grad(f, x, 1e-4);
        CHECK(fd.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("relu slope away from the kink") {
        Parameter x("x", Tensor::from_flat({2}, {-1.0, 2.0}));
        auto f = [&]() { return sum(relu(x.value)).scalar_value(); };
        Mat fd = finite_diff_grad(f, x, 1e-5);
        CHECK(fd(0, 0) == doctest::Approx(0.0));
        CHECK(fd(0, 1) == doctest::Approx(1.0));
    }
    SUBCASE("two-layer tanh network") {
        Rng rng(11);
        std::normal_distribution<double> n(0.0, 0.5);
        auto rand_mat = [&](Index r, Index c) {
            Mat m(r, c);
            for (Index i = 0; i < r; ++i)
                for (Index j = 0; j < c; ++j) m(i, j) = n(rng);
            return m;
        };
        Parameter w1("w1", Tensor::matrix(rand_mat(3, 4)));
        Parameter b1("b1", Tensor::row(rand_mat(1, 4).row(0)));
        Parameter w2("w2", Tensor::matrix(rand_mat(4, 2)));
        const Mat x = rand_mat(5, 3);

        auto forward = [&](const Tensor& tw1, const Tensor& tb1, const Tensor& tw2) {
            Tensor h = tanh(broadcast_add_row(matmul(Tensor::matrix(x), tw1), tb1));
            return mean(tanh(matmul(h, tw2)));
        };
        auto value = [&]() {
            return forward(w1.value, b1.value, w2.value).scalar_value();
        };
        {
            Tape tape;
            Tensor loss = forward(tape.watch(w1), tape.watch(b1), tape.watch(w2));
            tape.backward(loss);
        }
        for (Parameter* p : {&w1, &b1, &w2}) {
            Mat fd = finite_diff_grad(value, *p, 1e-5);
            CHECK(max_rel_error(p->grad, fd) < 1e-5);
        }
    }
}

TEST_CASE("tensor shape bookkeeping") {
    Tensor s = Tensor::scalar(4.0);
    CHECK(s.rank() == 0);
    CHECK(s.shape().empty());
    Tensor v = Tensor::from_flat({3}, {1, 2, 3});
    CHECK(v.rank() == 1);
    CHECK(v.rows() == 1);
    CHECK(v.cols() == 3);
    Tensor m = Tensor::from_flat({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(m.rank() == 2);
    CHECK(m.value()(1, 0) == 4.0); // row-major flat order
    CHECK(m.flat() == std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(Tensor::from_flat({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(s.scalar_value() + Tensor::zeros(2, 2).scalar_value(), ShapeError);
}
