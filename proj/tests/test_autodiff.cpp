#include <doctest.h>

#include <cmath>

#include "lord/checkpoint.hpp"
#include "lord/optim.hpp"
#include "lord/rng.hpp"
#include "lord/tape.hpp"
#include "test_util.hpp"

using namespace lord;
using namespace lord::testutil;

TEST_CASE("square gradient: d(x*x)/dx = 2x") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0), "x");
    Var y = tape.mul(x, x);
    auto grads = tape.backward(y);
    CHECK(grads.at("x")[0] == doctest::Approx(6.0));
}

TEST_CASE("constant root: all gradients zero") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0), "x");
    (void)tape.mul(x, x);
    Var c = tape.leaf(Tensor::scalar(5.0), "c");
    auto grads = tape.backward(c);  // c itself is the root; x unreachable
    CHECK(grads.at("x")[0] == 0.0);
}

TEST_CASE("three-layer net matches finite differences") {
    Rng rng(42);
    const int in = 5, h1 = 6, h2 = 4;
    Tensor w1 = random_tensor({h1, in}, rng), b1 = random_tensor({h1}, rng);
    Tensor w2 = random_tensor({h2, h1}, rng), b2 = random_tensor({h2}, rng);
    Tensor w3 = random_tensor({1, h2}, rng), b3 = random_tensor({1}, rng);
    Tensor x = random_tensor({in}, rng);

    auto forward = [&](const Tensor& w1v, const Tensor& w2v, const Tensor& w3v, const Tensor& xv, Tape& tape,
                       std::map<std::string, Var>* leaves) {
        Var vw1 = tape.leaf(w1v, "w1"), vb1 = tape.leaf(b1, "b1");
        Var vw2 = tape.leaf(w2v, "w2"), vb2 = tape.leaf(b2, "b2");
        Var vw3 = tape.leaf(w3v, "w3"), vb3 = tape.leaf(b3, "b3");
        Var vx = tape.leaf(xv, "x");
        if (leaves) {
            (*leaves)["w1"] = vw1;
            (*leaves)["x"] = vx;
        }
        Var a1 = tape.tanh_(tape.add(tape.matvec(vw1, vx), vb1));
        Var a2 = tape.softplus(tape.add(tape.matvec(vw2, a1), vb2));
        return tape.sum(tape.add(tape.matvec(vw3, a2), vb3));
    };

    Tape tape;
    Var loss = forward(w1, w2, w3, x, tape, nullptr);
    auto grads = tape.backward(loss);

    Rng pick(7);
    for (int trial = 0; trial < 10; ++trial) {
        const int i = pick.uniform_int(w1.size());
        const double fd = central_diff(
            [&](const Tensor& w1v) {
                Tape t2;
                return t2.value(forward(w1v, w2, w3, x, t2, nullptr)).item();
            },
            w1, i);
        CHECK(grad_close(grads.at("w1")[i], fd));
    }
    for (int trial = 0; trial < 5; ++trial) {
        const int i = pick.uniform_int(x.size());
        const double fd = central_diff(
            [&](const Tensor& xv) {
                Tape t2;
                return t2.value(forward(w1, w2, w3, xv, t2, nullptr)).item();
            },
            x, i);
        CHECK(grad_close(grads.at("x")[i], fd));
    }
}

TEST_CASE("gradient-check property over random small graphs") {
    // 100 random graphs composed of the tape's op vocabulary.
    for (int g = 0; g < 100; ++g) {
        Rng rng(1000 + g);
        const int n = 3 + rng.uniform_int(4);
        Tensor a = random_tensor({n}, rng, 0.2, 1.5);
        Tensor b = random_tensor({n}, rng, 0.3, 1.2);
        Tensor m = random_tensor({n, n}, rng);

        auto forward = [&](const Tensor& av, const Tensor& bv, const Tensor& mv, Tape& tape) {
            Var va = tape.leaf(av, "a");
            Var vb = tape.leaf(bv, "b");
            Var vm = tape.leaf(mv, "m");
            Var h = tape.tanh_(tape.matvec(vm, va));
            Var u = tape.softplus(tape.mul(h, vb));
            Var w = tape.div(tape.exp_(tape.scale_const(va, 0.3)), tape.add_const(tape.square(vb), 1.0));
            Var s = tape.dot(u, w);
            Var sm = tape.sum(tape.mul(tape.softmax(vb), tape.log_(tape.add_const(tape.sqrt_(va), 1.0))));
            return tape.add(s, sm);
        };

        Tape tape;
        Var root = forward(a, b, m, tape);
        auto grads = tape.backward(root);

        Rng pick(g);
        auto check_entries = [&](const char* name, Tensor& ref, int count) {
            for (int k = 0; k < count; ++k) {
                const int i = pick.uniform_int(ref.size());
                const double fd = central_diff(
                    [&](const Tensor& v) {
                        Tape t2;
                        if (name == std::string("a")) return t2.value(forward(v, b, m, t2)).item();
                        if (name == std::string("b")) return t2.value(forward(a, v, m, t2)).item();
                        return t2.value(forward(a, b, v, t2)).item();
                    },
                    ref, i);
                CHECK_MESSAGE(grad_close(grads.at(name)[i], fd),
                              "graph " << g << " leaf " << name << " entry " << i);
            }
        };
        check_entries("a", a, 3);
        check_entries("b", b, 3);
        check_entries("m", m, 3);
    }
}

TEST_CASE("determinism: identical seeds give bit-identical values and gradients") {
    auto run = [&]() {
        Rng rng(99);
        Tensor x = random_tensor({8}, rng);
        Tape tape;
        Var vx = tape.leaf(x, "x");
        Var y = tape.sum(tape.mul(tape.dropout(vx, 0.4, 1234, true), tape.tanh_(vx)));
        auto grads = tape.backward(y);
        return std::make_pair(tape.value(y)[0], grads.at("x"));
    };
    auto [v1, g1] = run();
    auto [v2, g2] = run();
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}

TEST_CASE("dropout") {
    Rng rng(5);
    Tensor x = random_tensor({64}, rng);

    SUBCASE("p = 0 in training mode is the identity") {
        Tape tape;
        Var vx = tape.constant(x);
        Var y = tape.dropout(vx, 0.0, 7, true);
        CHECK(tape.value(y) == x);
    }
    SUBCASE("evaluation mode is the identity for any p") {
        Tape tape;
        Var vx = tape.constant(x);
        Var y = tape.dropout(vx, 0.7, 7, false);
        CHECK(tape.value(y) == x);
    }
    SUBCASE("p >= 1 is rejected") {
        Tape tape;
        Var vx = tape.constant(x);
        CHECK_THROWS_AS(tape.dropout(vx, 1.0, 7, true), ContractError);
    }
    SUBCASE("seeded mean over many draws approximates the identity") {
        // Inverted dropout: E[mask * x] = x. 1e5 draws, 2% tolerance.
        Tensor small({4}, {1.0, -2.0, 0.5, 3.0});
        Tensor acc({4});
        const int draws = 100000;
        for (int d = 0; d < draws; ++d) {
            Tape tape;
            Var y = tape.dropout(tape.constant(small), 0.5, static_cast<std::uint64_t>(d), true);
            for (int i = 0; i < 4; ++i) acc[i] += tape.value(y)[i];
        }
        for (int i = 0; i < 4; ++i) {
            CHECK(acc[i] / draws == doctest::Approx(small[i]).epsilon(0.02));
        }
    }
    SUBCASE("mask is a pure function of the seed") {
        Tape t1, t2;
        Var y1 = t1.dropout(t1.constant(x), 0.3, 42, true);
        Var y2 = t2.dropout(t2.constant(x), 0.3, 42, true);
        CHECK(t1.value(y1) == t2.value(y2));
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradients leave parameters unchanged") {
        ParameterStore params;
        params.add("p", Tensor({3}, {1.0, 2.0, 3.0}));
        const Tensor before = params.get("p");
        Adam adam(AdamConfig{});
        adam.step(params, {{"p", Tensor({3})}});
        CHECK(params.get("p") == before);
    }
    SUBCASE("first bias-corrected step is approximately -lr") {
        ParameterStore params;
        params.add("p", Tensor::scalar(0.0));
        AdamConfig cfg;
        cfg.lr = 0.1;
        cfg.clip_norm = 0.0;
        Adam adam(cfg);
        adam.step(params, {{"p", Tensor::scalar(1.0)}});
        // m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
        CHECK(params.get("p")[0] == doctest::Approx(-0.1).epsilon(1e-6));
    }
    SUBCASE("global-norm clipping caps the applied gradient") {
        ParameterStore params;
        params.add("p", Tensor({2}, {0.0, 0.0}));
        AdamConfig cfg;
        cfg.clip_norm = 1.0;
        Adam adam(cfg);
        // Gradient (6, 8) has norm 10 -> scaled to (0.6, 0.8), norm 1.
        adam.step(params, {{"p", Tensor({2}, {6.0, 8.0})}});
        // Both entries see the same |m_hat / (sqrt(v_hat)+eps)| of 1, so the
        // clip shows up only through the m/v ratio; check directionality and
        // equality of magnitudes instead of absolute step size.
        CHECK(params.get("p")[0] < 0.0);
        CHECK(params.get("p")[1] < 0.0);
        CHECK(std::fabs(params.get("p")[0]) == doctest::Approx(std::fabs(params.get("p")[1])));
    }
    SUBCASE("NaN gradient aborts naming the parameter") {
        ParameterStore params;
        params.add("weights", Tensor::scalar(0.0));
        Adam adam(AdamConfig{});
        try {
            adam.step(params, {{"weights", Tensor::scalar(std::nan(""))}});
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("weights") != std::string::npos);
        }
    }
}

TEST_CASE("backward requires a scalar root") {
    Tape tape;
    Var x = tape.leaf(Tensor({2}, {1.0, 2.0}), "x");
    CHECK_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("checkpoint round trip preserves values bit-exactly") {
    Rng rng(11);
    ParameterStore params;
    params.add("enc/w", random_tensor({4, 3}, rng));
    params.add("dec/b", random_tensor({5}, rng));
    params.add("adapter/cost_weights/A", random_tensor({2, 4}, rng));
    const std::string path = "test_ckpt_roundtrip.ckpt";
    save_checkpoint(params, path, "config_hash=1 master_seed=2");

    CheckpointData ck = load_checkpoint(path);
    CHECK(ck.meta == "config_hash=1 master_seed=2");
    CHECK(ck.params.same_values(params));

    SUBCASE("prefix filter separates adapters from the base") {
        save_checkpoint(params, path, "m", "adapter/");
        CheckpointData ad = load_checkpoint(path);
        CHECK(ad.params.count() == 1);
        CHECK(ad.params.has("adapter/cost_weights/A"));
    }
    SUBCASE("shape mismatch on load is rejected") {
        ParameterStore other;
        other.add("enc/w", Tensor({3, 3}));
        other.add("dec/b", Tensor({5}));
        other.add("adapter/cost_weights/A", Tensor({2, 4}));
        save_checkpoint(params, path, "m");
        CHECK_THROWS_AS(load_checkpoint_into(other, path), DataError);
    }
    std::remove(path.c_str());
}
