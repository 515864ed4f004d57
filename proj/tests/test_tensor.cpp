#include <cmath>
#include <vector>

#include "doctest.h"
#include "mga/error.hpp"
#include "mga/rng.hpp"
#include "mga/tensor.hpp"
#include "oracles.hpp"

using namespace mga;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.mutable_values()) v = rng.uniform(lo, hi);
    return t;
}

} // namespace

TEST_CASE("softmax of equal logits is uniform") {
    Tensor x({2}, {0.0, 0.0});
    Tensor y = softmax(x, 0);
    CHECK(y.at(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.at(1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("l2 normalize on a 3-4-5 triple") {
    Tensor x({2}, {3.0, 4.0});
    Tensor y = l2_normalize(x, 0);
    CHECK(y.at(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(y.at(1) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("l2 normalize of a zero vector stays finite") {
    Tensor x({3}, {0.0, 0.0, 0.0});
    Tensor y = l2_normalize(x, 0);
    for (double v : y.values()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("matmul matches the triple-loop oracle") {
    Rng rng(7);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({3, 1}, rng);
    Tensor c = matmul(a, b);
    auto expect = oracle::matmul(a.values(), b.values(), 2, 3, 1);
    REQUIRE(c.shape() == Shape{2, 1});
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(c.at(i) == doctest::Approx(expect[i]).epsilon(1e-14));
    }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Tensor a({2, 3});
    Tensor b({4, 1});
    CHECK_THROWS_WITH_AS(matmul(a, b),
                         "matmul: incompatible shapes [2, 3] x [4, 1]", ShapeError);
}

TEST_CASE("log rejects non-positive values") {
    Tensor x({2}, {1.0, 0.0});
    CHECK_THROWS_AS(log(x), DomainError);
}

TEST_CASE("backward of sum of squares") {
    Tape tape;
    Tensor x = tape.watch(Tensor({2}, {1.0, 2.0}));
    Tensor loss = sum(multiply(x, x));
    auto grads = tape.backward(loss);
    const Tensor& g = grads.at(x.node());
    CHECK(g.at(0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(g.at(1) == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("backward of first log-softmax component at the symmetric point") {
    Tape tape;
    Tensor x = tape.watch(Tensor({2}, {0.0, 0.0}));
    Tensor picked = multiply(log(softmax(x, 0)), Tensor({2}, {1.0, 0.0}));
    Tensor loss = sum(picked);
    auto grads = tape.backward(loss);
    const Tensor& g = grads.at(x.node());
    CHECK(g.at(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(g.at(1) == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("backward demands a scalar loss") {
    Tape tape;
    Tensor x = tape.watch(Tensor({2}, {1.0, 2.0}));
    Tensor y = multiply(x, x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("backward is deterministic") {
    auto run = [] {
        Tape tape;
        Tensor x = tape.watch(Tensor({2, 2}, {0.3, -0.7, 1.1, 0.25}));
        Tensor loss = mean(multiply(softmax(matmul(x, transpose(x)), 1), x));
        auto grads = tape.backward(loss);
        return grads.at(x.node()).values();
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == b[i]);
    }
}

TEST_CASE("mask-fill with an all-ones mask is the identity in both passes") {
    Tape tape;
    Tensor x0({2, 2}, {0.5, -1.5, 2.0, 0.0});
    Tensor x = tape.watch(x0);
    Tensor ones = Tensor::full({2, 2}, 1.0);
    Tensor y = mask_fill(x, ones, 123.0);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(y.at(i) == x0.at(i));
    }
    Tensor loss = sum(multiply(y, y));
    auto grads_masked = tape.backward(loss);
    auto gm = grads_masked.at(x.node()).values();

    Tape plain;
    Tensor xp = plain.watch(x0);
    auto grads_plain = plain.backward(sum(multiply(xp, xp)));
    auto gp = grads_plain.at(xp.node()).values();
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(gm[i] == gp[i]);
    }
}

TEST_CASE("mask-fill keeps masked-out gradients at zero") {
    Tape tape;
    Tensor x = tape.watch(Tensor({3}, {1.0, 2.0, 3.0}));
    Tensor mask({3}, {1.0, 0.0, 1.0});
    Tensor y = mask_fill(x, mask, 0.0);
    auto grads = tape.backward(sum(multiply(y, y)));
    const Tensor& g = grads.at(x.node());
    CHECK(g.at(0) == doctest::Approx(2.0));
    CHECK(g.at(1) == 0.0);
    CHECK(g.at(2) == doctest::Approx(6.0));
}

TEST_CASE("grad_check on a linear function is near machine precision") {
    Rng rng(11);
    Tensor x = random_tensor({3, 2}, rng);
    double err = grad_check(
        [](Tape&, std::vector<Tensor>& xs) { return sum(xs[0]); }, {x}, 1e-6);
    CHECK(err <= 1e-10);
}

TEST_CASE("grad_check covers every operation kind") {
    Rng rng(13);
    for (Op kind : all_op_kinds()) {
        CAPTURE(op_name(kind));
        GraphFn fn;
        std::vector<Tensor> inputs;
        OpAttrs attrs;
        switch (kind) {
            case Op::Matmul:
                inputs = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
                fn = [](Tape&, std::vector<Tensor>& xs) {
                    return sum(multiply(matmul(xs[0], xs[1]), matmul(xs[0], xs[1])));
                };
                break;
            case Op::Add:
            case Op::Subtract:
            case Op::Multiply:
                inputs = {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
                fn = [kind](Tape&, std::vector<Tensor>& xs) {
                    Tensor y = forward(kind, {xs[0], xs[1]});
                    return sum(multiply(y, y));
                };
                break;
            case Op::ScalarMultiply:
                inputs = {random_tensor({2, 3}, rng)};
                attrs.scalar = -1.7;
                fn = [attrs](Tape&, std::vector<Tensor>& xs) {
                    Tensor y = forward(Op::ScalarMultiply, {xs[0]}, attrs);
                    return sum(multiply(y, y));
                };
                break;
            case Op::Exp:
            case Op::Tanh:
                inputs = {random_tensor({2, 3}, rng)};
                fn = [kind](Tape&, std::vector<Tensor>& xs) {
                    Tensor y = forward(kind, {xs[0]});
                    return sum(multiply(y, y));
                };
                break;
            case Op::Log:
                inputs = {random_tensor({2, 3}, rng, 0.5, 2.0)};
                fn = [](Tape&, std::vector<Tensor>& xs) {
                    Tensor y = log(xs[0]);
                    return sum(multiply(y, y));
                };
                break;
            case Op::Sum:
            case Op::Mean:
                inputs = {random_tensor({3, 2}, rng)};
                fn = [kind](Tape&, std::vector<Tensor>& xs) {
                    OpAttrs a;
                    a.axis = 0;
                    Tensor y = forward(kind, {xs[0]}, a);
                    return sum(multiply(y, y));
                };
                break;
            case Op::Softmax:
            case Op::L2Normalize:
                inputs = {random_tensor({3, 4}, rng)};
                fn = [kind](Tape&, std::vector<Tensor>& xs) {
                    OpAttrs a;
                    a.axis = 1;
                    Tensor y = forward(kind, {xs[0]}, a);
                    Tensor w({3, 4});
                    auto& wv = w.mutable_values();
                    for (std::size_t i = 0; i < wv.size(); ++i) wv[i] = 0.1 * double(i + 1);
                    return sum(multiply(y, w));
                };
                break;
            case Op::Transpose:
                inputs = {random_tensor({2, 3}, rng)};
                fn = [](Tape&, std::vector<Tensor>& xs) {
                    Tensor y = transpose(xs[0]);
                    return sum(multiply(y, y));
                };
                break;
            case Op::Concat:
                inputs = {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)};
                fn = [](Tape&, std::vector<Tensor>& xs) {
                    Tensor y = concat({xs[0], xs[1]}, 0);
                    return sum(multiply(y, y));
                };
                break;
            case Op::MaskFill:
                inputs = {random_tensor({2, 3}, rng)};
                fn = [](Tape&, std::vector<Tensor>& xs) {
                    Tensor mask({2, 3}, {1, 0, 1, 1, 1, 0});
                    Tensor y = mask_fill(xs[0], mask, 0.25);
                    return sum(multiply(y, y));
                };
                break;
            case Op::SliceRows:
                inputs = {random_tensor({5, 2}, rng)};
                fn = [](Tape&, std::vector<Tensor>& xs) {
                    Tensor y = slice_rows(xs[0], 1, 3);
                    return sum(multiply(y, y));
                };
                break;
            case Op::Reshape:
                inputs = {random_tensor({2, 6}, rng)};
                fn = [](Tape&, std::vector<Tensor>& xs) {
                    Tensor y = reshape(xs[0], {3, 4});
                    return sum(multiply(y, y));
                };
                break;
        }
        double err = grad_check(fn, inputs, 1e-6);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("concat along columns round-trips values and gradients") {
    Tape tape;
    Tensor a = tape.watch(Tensor({2, 1}, {1.0, 2.0}));
    Tensor b = tape.watch(Tensor({2, 2}, {3.0, 4.0, 5.0, 6.0}));
    Tensor y = concat({a, b}, 1);
    REQUIRE(y.shape() == Shape{2, 3});
    CHECK(y.at2(0, 0) == 1.0);
    CHECK(y.at2(0, 1) == 3.0);
    CHECK(y.at2(1, 2) == 6.0);
    Tensor w({2, 3}, {1, 10, 100, 1000, 10000, 100000});
    auto grads = tape.backward(sum(multiply(y, w)));
    CHECK(grads.at(a.node()).values() == std::vector<double>{1.0, 1000.0});
    CHECK(grads.at(b.node()).values() == std::vector<double>{10.0, 100.0, 10000.0, 100000.0});
}

TEST_CASE("forward dispatcher rejects bad arity") {
    CHECK_THROWS_AS(forward(Op::Add, {Tensor({1}, {1.0})}), ContractError);
}

TEST_CASE("operations refuse inputs from different tapes") {
    Tape t1, t2;
    Tensor a = t1.watch(Tensor({2}, {1.0, 2.0}));
    Tensor b = t2.watch(Tensor({2}, {3.0, 4.0}));
    CHECK_THROWS_AS(add(a, b), ContractError);
}
