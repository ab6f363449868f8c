#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "gridcast/graph.hpp"

using namespace gridcast;
using namespace gridcast::nn;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.next_range(lo, hi);
    return t;
}

struct FdCheck {
    std::vector<Tensor> inputs;
    std::function<Value(Graph&, const std::vector<Value>&)> build;
    bool training = true;
    std::uint64_t seed = 99;
};

double eval_loss(const FdCheck& c, const std::vector<Tensor>& inputs) {
    Graph g(c.training, c.seed);
    std::vector<Value> vs;
    vs.reserve(inputs.size());
    for (const auto& t : inputs) vs.push_back(g.leaf(t, true));
    return g.val(c.build(g, vs))[0];
}

// Central differences against the tape, every element of every input.
void check_gradients(const FdCheck& c) {
    Graph g(c.training, c.seed);
    std::vector<Value> vs;
    vs.reserve(c.inputs.size());
    for (const auto& t : c.inputs) vs.push_back(g.leaf(t, true));
    Value loss = c.build(g, vs);
    g.backward(loss);

    const double h = 1e-5;
    for (std::size_t t = 0; t < c.inputs.size(); ++t) {
        const Tensor& analytic = g.grad_of(vs[t]);
        for (std::int64_t i = 0; i < c.inputs[t].numel(); ++i) {
            auto plus = c.inputs;
            auto minus = c.inputs;
            plus[t][i] += h;
            minus[t][i] -= h;
            const double numeric = (eval_loss(c, plus) - eval_loss(c, minus)) / (2.0 * h);
            const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
            INFO("input ", t, " element ", i, " numeric ", numeric, " analytic ", analytic[i]);
            CHECK(std::abs(numeric - analytic[i]) <= 1e-6 * scale);
        }
    }
}

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("elementwise arithmetic gradients") {
    FdCheck c;
    c.inputs = {random_tensor({2, 3}, 1), random_tensor({2, 3}, 2)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        Value s = add(g, mul(g, v[0], v[1]), sub(g, v[0], v[1]));
        return mean_all(g, square(g, affine(g, s, 1.75, -0.3)));
    };
    check_gradients(c);
}

TEST_CASE("activation gradients") {
    FdCheck c;
    c.inputs = {random_tensor({11}, 3, -2.0, 2.0)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        Value a = add(g, relu(g, v[0]), sigmoid(g, v[0]));
        return mean_all(g, square(g, add(g, a, tanh_op(g, v[0]))));
    };
    check_gradients(c);
}

TEST_CASE("bias broadcast gradients") {
    FdCheck c;
    c.inputs = {random_tensor({4, 3}, 4), random_tensor({3}, 5)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        return mean_all(g, square(g, add_bias(g, v[0], v[1])));
    };
    check_gradients(c);
}

TEST_CASE("reshape, concat, slice gradients") {
    FdCheck c;
    c.inputs = {random_tensor({2, 4}, 6), random_tensor({2, 3}, 7)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        Value cat = concat_last(g, v[0], v[1]);          // (2,7)
        Value mid = slice_last(g, cat, 2, 4);            // (2,4)
        Value flat = reshape(g, mid, {8});
        return mean_all(g, square(g, flat));
    };
    check_gradients(c);
}

TEST_CASE("gather_rows gradients with duplicate indices") {
    FdCheck c;
    c.inputs = {random_tensor({4, 3}, 8)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        Value picked = gather_rows(g, v[0], {1, 3, 1, 0, 1});
        return mean_all(g, square(g, picked));
    };
    check_gradients(c);
}

TEST_CASE("crop gradients") {
    FdCheck c;
    c.inputs = {random_tensor({1, 5, 6, 2}, 9)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        return mean_all(g, square(g, crop_hw(g, v[0], 1, 2, 3, 3)));
    };
    check_gradients(c);
}

TEST_CASE("detach blocks the gradient path") {
    Graph g(false, 0);
    Tensor x = random_tensor({5}, 10);
    Value vx = g.leaf(x, true);
    Value loss = mean_all(g, mul(g, vx, detach(g, vx)));
    g.backward(loss);
    // d/dx mean(x * const) = const / n with const = x's values, not the 2x/n of x^2.
    const Tensor& grad = g.grad_of(vx);
    for (std::int64_t i = 0; i < 5; ++i)
        CHECK(grad[i] == doctest::Approx(x[i] / 5.0).epsilon(1e-12));
}

TEST_CASE("matmul gradients") {
    FdCheck c;
    c.inputs = {random_tensor({3, 4}, 11), random_tensor({4, 2}, 12)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        return mean_all(g, square(g, matmul(g, v[0], v[1])));
    };
    check_gradients(c);
}

TEST_CASE("conv2d gradients") {
    FdCheck c;
    c.inputs = {random_tensor({1, 3, 4, 2}, 13), random_tensor({3 * 3 * 2 * 2}, 14),
                random_tensor({2}, 15)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        return mean_all(g, square(g, conv2d(g, v[0], v[1], v[2], 3)));
    };
    check_gradients(c);
}

TEST_CASE("transposed conv gradients") {
    FdCheck c;
    c.inputs = {random_tensor({1, 2, 2, 2}, 16), random_tensor({4 * 2 * 3}, 17),
                random_tensor({3}, 18)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        return mean_all(g, square(g, convtr2(g, v[0], v[1], v[2])));
    };
    check_gradients(c);
}

TEST_CASE("maxpool gradients") {
    FdCheck c;
    c.inputs = {random_tensor({1, 4, 4, 2}, 19)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        return mean_all(g, square(g, maxpool2(g, v[0])));
    };
    check_gradients(c);
}

TEST_CASE("batchnorm training gradients flow through batch statistics") {
    FdCheck c;
    c.inputs = {random_tensor({12, 3}, 20), random_tensor({3}, 21, 0.5, 1.5),
                random_tensor({3}, 22)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        Tensor rm({3}), rv = Tensor::full({3}, 1.0);
        Value y = batchnorm(g, v[0], v[1], v[2], rm, rv, 0.9, 1e-5);
        return mean_all(g, square(g, y));
    };
    check_gradients(c);
}

TEST_CASE("batchnorm eval uses running statistics") {
    FdCheck c;
    c.training = false;
    c.inputs = {random_tensor({6, 2}, 23), random_tensor({2}, 24, 0.5, 1.5),
                random_tensor({2}, 25)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        Tensor rm({2}, {0.2, -0.4});
        Tensor rv({2}, {1.3, 0.7});
        Value y = batchnorm(g, v[0], v[1], v[2], rm, rv, 0.9, 1e-5);
        return mean_all(g, square(g, y));
    };
    check_gradients(c);

    // eval forward must not touch the running stats
    Graph g(false, 0);
    Tensor rm({2}, {0.2, -0.4}), rv({2}, {1.3, 0.7});
    Value x = g.leaf(random_tensor({6, 2}, 23), false);
    Value gamma = g.leaf(Tensor::full({2}, 1.0), false);
    Value beta = g.leaf(Tensor({2}), false);
    batchnorm(g, x, gamma, beta, rm, rv, 0.9, 1e-5);
    CHECK(rm[0] == 0.2);
    CHECK(rv[1] == 0.7);
}

TEST_CASE("batchnorm training updates running statistics once per forward") {
    Graph g(true, 0);
    Tensor x({4, 1}, {1.0, 2.0, 3.0, 4.0});
    Tensor rm({1}), rv = Tensor::full({1}, 1.0);
    Value vx = g.leaf(x, false);
    Value gamma = g.leaf(Tensor::full({1}, 1.0), false);
    Value beta = g.leaf(Tensor({1}), false);
    batchnorm(g, vx, gamma, beta, rm, rv, 0.9, 1e-5);
    // batch mean 2.5, biased variance 1.25
    CHECK(rm[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.5).epsilon(1e-12));
    CHECK(rv[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.25).epsilon(1e-12));
}

TEST_CASE("dropout gradients with a fixed mask seed") {
    FdCheck c;
    c.seed = 12345;
    c.inputs = {random_tensor({40}, 26)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        return mean_all(g, square(g, dropout(g, v[0], 0.5)));
    };
    check_gradients(c);
}

TEST_CASE("dropout is identity at inference and preserves scale in expectation") {
    Tensor x = Tensor::full({1000}, 1.0);
    {
        Graph g(false, 7);
        Value y = dropout(g, g.leaf(x, false), 0.5);
        for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(g.val(y)[i] == 1.0);
    }
    {
        Graph g(true, 7);
        Value y = dropout(g, g.leaf(x, false), 0.5);
        double mean = 0.0;
        std::int64_t kept = 0;
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            const double v = g.val(y)[i];
            CHECK((v == 0.0 || v == 2.0));
            mean += v;
            kept += v != 0.0;
        }
        mean /= static_cast<double>(x.numel());
        CHECK(mean == doctest::Approx(1.0).epsilon(0.1));  // inverted scaling
        CHECK(kept > 400);
        CHECK(kept < 600);
    }
    {
        // same seed, same mask; different seed, different mask
        Graph g1(true, 7), g2(true, 7), g3(true, 8);
        Tensor in = random_tensor({64}, 27);
        Value y1 = dropout(g1, g1.leaf(in, false), 0.5);
        Value y2 = dropout(g2, g2.leaf(in, false), 0.5);
        Value y3 = dropout(g3, g3.leaf(in, false), 0.5);
        CHECK(tensors_equal(g1.val(y1), g2.val(y2)));
        CHECK_FALSE(tensors_equal(g1.val(y1), g3.val(y3)));
    }
}

TEST_CASE("softmax rows sum to one and gradients check out") {
    Graph g;
    Value x = g.leaf(random_tensor({4, 5}, 17, -3.0, 3.0));
    Value p = softmax_last(g, x);
    for (std::int64_t r = 0; r < 4; ++r) {
        double row = 0.0;
        for (std::int64_t j = 0; j < 5; ++j) {
            CHECK(g.val(p)[r * 5 + j] > 0.0);
            row += g.val(p)[r * 5 + j];
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }

    FdCheck c;
    c.inputs = {random_tensor({3, 4}, 18, -2.0, 2.0), random_tensor({3, 4}, 19)};
    c.build = [](Graph& gg, const std::vector<Value>& v) {
        return mean_all(gg, square(gg, mul(gg, softmax_last(gg, v[0]), v[1])));
    };
    check_gradients(c);
}

TEST_CASE("softmax cross entropy value and gradients") {
    {
        // uniform logits over 5 classes cost ln 5 whatever the labels
        Graph g(false, 0);
        Value logits = g.leaf(Tensor({2, 5}), false);
        Value loss = softmax_cross_entropy(g, logits, {0, 3});
        CHECK(g.val(loss)[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    }
    FdCheck c;
    c.inputs = {random_tensor({4, 5}, 28, -2.0, 2.0)};
    c.build = [](Graph& g, const std::vector<Value>& v) {
        return softmax_cross_entropy(g, v[0], {1, 0, 4, 2});
    };
    check_gradients(c);
}

TEST_CASE("l2 matches mean squared difference") {
    Graph g(false, 0);
    Tensor a({3}, {1.0, 2.0, 3.0}), b({3}, {2.0, 0.0, 3.0});
    Value loss = l2(g, g.leaf(a, false), g.leaf(b, false));
    CHECK(g.val(loss)[0] == doctest::Approx((1.0 + 4.0 + 0.0) / 3.0).epsilon(1e-12));
}

TEST_CASE("composite network end to end gradient check") {
    FdCheck c;
    c.seed = 777;
    c.inputs = {
        random_tensor({2, 4, 4, 2}, 29),        // frames
        random_tensor({3 * 3 * 2 * 3}, 30),     // conv weights
        random_tensor({3}, 31),                 // conv bias
        random_tensor({3}, 32, 0.5, 1.5),       // bn gamma
        random_tensor({3}, 33),                 // bn beta
        random_tensor({12, 4}, 34),             // fc weights
        random_tensor({4}, 35),                 // fc bias
    };
    c.build = [](Graph& g, const std::vector<Value>& v) {
        Tensor rm({3}), rv = Tensor::full({3}, 1.0);
        Value h = conv2d(g, v[0], v[1], v[2], 3);
        h = batchnorm(g, h, v[3], v[4], rm, rv, 0.9, 1e-5);
        h = relu(g, h);
        h = maxpool2(g, h);                       // (2,2,2,3)
        h = dropout(g, h, 0.25);
        h = reshape(g, h, {2, 12});
        h = add_bias(g, matmul(g, h, v[5]), v[6]);  // (2,4)
        Value ce = softmax_cross_entropy(g, h, {1, 2});
        Value reg = mean_all(g, square(g, h));
        return add(g, affine(g, ce, 0.7, 0.0), affine(g, reg, 0.3, 0.0));
    };
    check_gradients(c);
}

TEST_CASE("backward demands a scalar loss") {
    Graph g(false, 0);
    Value v = g.leaf(random_tensor({3}, 36), true);
    CHECK_THROWS_AS(g.backward(v), DomainError);
}

TEST_CASE("gradients accumulate when a value fans out") {
    Graph g(false, 0);
    Tensor x({2}, {3.0, -1.5});
    Value vx = g.leaf(x, true);
    // loss = mean(x*x) + 2*mean(x) -> d/dx = 2x/2 + 2/2 = x + 1
    Value loss = add(g, mean_all(g, square(g, vx)), affine(g, mean_all(g, vx), 2.0, 0.0));
    g.backward(loss);
    CHECK(g.grad_of(vx)[0] == doctest::Approx(3.0 + 1.0).epsilon(1e-12));
    CHECK(g.grad_of(vx)[1] == doctest::Approx(-1.5 + 1.0).epsilon(1e-12));
}

}  // TEST_SUITE
