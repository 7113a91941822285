#include "doctest.h"

#include "egoface/common/error.hpp"
#include "egoface/common/rng.hpp"
#include "egoface/nn/adam.hpp"
#include "egoface/nn/gradient_check.hpp"
#include "egoface/nn/io.hpp"
#include "egoface/nn/loss.hpp"
#include "egoface/nn/network.hpp"

#include <cmath>
#include <filesystem>

using namespace egoface;
using namespace egoface::nn;

namespace {

TensorD random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0)
{
    Rng rng(seed);
    TensorD t(shape);
    for (auto& v : t.values()) {
        v = rng.uniform(-scale, scale);
    }
    return t;
}

// Random weights with nonzero biases and perturbed norm scales, so no gradient is trivially zero.
NetworkStateD randomized_state(const NetworkSpec& spec, std::uint64_t seed)
{
    NetworkStateD s = build_network<double>(spec, seed);
    Rng rng(seed + 99);
    for (auto& layer : s.weights) {
        for (auto& t : layer) {
            for (auto& v : t.values()) {
                v += rng.uniform(-0.3, 0.3);
            }
        }
    }
    return s;
}

LossFn mse_against(const TensorD& target)
{
    return [target](const TensorD& out) { return mse_loss(out, target); };
}

double check(const NetworkSpec& spec, std::uint64_t seed, int batch = 2)
{
    const auto shapes = infer_shapes(spec);
    const NetworkStateD state = randomized_state(spec, seed);
    const TensorD input = random_tensor(batched(batch, spec.input_shape), seed + 1);
    const TensorD target = random_tensor(batched(batch, shapes.back()), seed + 2);
    GradientCheckOptions opt;
    opt.seed = seed;
    const auto report = gradient_check(spec, state, input, mse_against(target), opt);
    INFO("worst: " << report.worst);
    return report.max_relative_error;
}

} // namespace

TEST_CASE("build_network is deterministic and shapes weights")
{
    NetworkSpec spec{{4}, {2}, {LayerSpec::dense(2)}};
    const NetworkState a = build_network<float>(spec, 7);
    const NetworkState b = build_network<float>(spec, 7);
    CHECK(a == b);
    CHECK(a.weights[0][0].shape() == Shape{2, 4});
    const NetworkState c = build_network<float>(spec, 8);
    CHECK_FALSE(a == c);

    NetworkSpec conv{{3, 8, 8}, {}, {LayerSpec::conv(8, 3, 1, 1)}};
    CHECK(build_network<float>(conv, 1).weights[0][0].shape() == Shape{8, 3, 3, 3});
}

TEST_CASE("glorot bound and zero bias")
{
    NetworkSpec spec{{3, 8, 8}, {}, {LayerSpec::conv(5, 3, 1, 1)}};
    const NetworkStateD s = build_network<double>(spec, 3);
    const double bound = std::sqrt(6.0 / (3 * 9 + 5 * 9));
    double maxabs = 0;
    for (double v : s.weights[0][0].values()) {
        maxabs = std::max(maxabs, std::abs(v));
    }
    CHECK(maxabs <= bound);
    CHECK(maxabs > 0.8 * bound);
    for (double v : s.weights[0][1].values()) {
        CHECK(v == 0.0);
    }
    CHECK(build_network<float>(spec, 3) == s.cast<float>());
}

TEST_CASE("shape errors name the layer")
{
    NetworkSpec bad{{3, 8, 8}, {}, {LayerSpec::conv(4, 3, 2, 1, "down"), LayerSpec::concat(-1, "skip")}};
    try {
        infer_shapes(bad);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("skip") != std::string::npos);
    }
    NetworkSpec wrong_out{{4}, {3}, {LayerSpec::dense(2)}};
    CHECK_THROWS_AS(build_network<float>(wrong_out, 1), ShapeError);
    NetworkSpec ok{{4}, {2}, {LayerSpec::dense(2)}};
    const auto s = build_network<float>(ok, 1);
    CHECK_THROWS_AS(forward(s, ok, Tensor({1, 5}), false), ShapeError);
}

TEST_CASE("forward trivial cases")
{
    SUBCASE("identity dense")
    {
        NetworkSpec spec{{3}, {3}, {LayerSpec::dense(3)}};
        NetworkState s = build_network<float>(spec, 1);
        s.weights[0][0].fill(0);
        for (int i = 0; i < 3; ++i) {
            s.weights[0][0][static_cast<std::size_t>(i * 3 + i)] = 1;
        }
        const Tensor x({1, 3}, {0.5f, -2.0f, 3.25f});
        CHECK(forward(s, spec, x, false) == x);
    }
    SUBCASE("tanh of zero")
    {
        NetworkSpec spec{{2, 3, 3}, {2, 3, 3}, {LayerSpec::tanh()}};
        const auto s = build_network<float>(spec, 1);
        const Tensor x({1, 2, 3, 3});
        CHECK(forward(s, spec, x, false) == x);
    }
    SUBCASE("inference dropout is identity")
    {
        NetworkSpec spec{{10}, {10}, {LayerSpec::dropout(0.5)}};
        const auto s = build_network<float>(spec, 1);
        const Tensor x = random_tensor({1, 10}, 4).cast<float>();
        CHECK(forward(s, spec, x, false) == x);
        const Tensor t = forward(s, spec, x, true, nullptr, 11);
        int dropped = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (t[i] == 0.0f) {
                ++dropped;
            } else {
                CHECK(t[i] == doctest::Approx(2.0f * x[i]));
            }
        }
        CHECK(dropped > 0);
        CHECK(forward(s, spec, x, true, nullptr, 11) == t);
    }
}

TEST_CASE("backward analytic cases")
{
    SUBCASE("square of a scalar weight")
    {
        NetworkSpec spec{{1}, {1}, {LayerSpec::dense(1)}};
        NetworkStateD s = build_network<double>(spec, 1);
        s.weights[0][0][0] = 3.0;
        ForwardCache<double> cache;
        const TensorD y = forward(s, spec, TensorD({1, 1}, {3.0}), false, &cache);
        CHECK(y[0] == 9.0);
        // y = w * x on the diagonal x = w is w^2, whose derivative is dy/dw + dy/dx = 6
        const auto g = backward(s, spec, cache, TensorD({1, 1}, {1.0}));
        CHECK(g.weights[0][0][0] + g.input[0] == 6.0);
    }
    SUBCASE("sum of Wx w.r.t. W is outer(1, x)")
    {
        NetworkSpec spec{{3}, {2}, {LayerSpec::dense(2)}};
        const NetworkStateD s = build_network<double>(spec, 5);
        const TensorD x({1, 3}, {1.5, -2.0, 0.25});
        ForwardCache<double> cache;
        forward(s, spec, x, false, &cache);
        const auto g = backward(s, spec, cache, TensorD({1, 2}, 1.0));
        for (int o = 0; o < 2; ++o) {
            for (int i = 0; i < 3; ++i) {
                CHECK(g.weights[0][0][static_cast<std::size_t>(o * 3 + i)] == x[static_cast<std::size_t>(i)]);
            }
        }
    }
    SUBCASE("missing cache")
    {
        NetworkSpec spec{{3}, {2}, {LayerSpec::dense(2)}};
        const NetworkStateD s = build_network<double>(spec, 5);
        CHECK_THROWS(backward(s, spec, ForwardCache<double>{}, TensorD({1, 2})));
    }
}

TEST_CASE("conv matches a direct loop oracle")
{
    NetworkSpec spec{{2, 5, 6}, {}, {LayerSpec::conv(3, 3, 2, 1)}};
    const NetworkStateD s = randomized_state(spec, 21);
    const TensorD x = random_tensor({2, 2, 5, 6}, 22);
    const TensorD y = forward(s, spec, x, false);
    const auto& w = s.weights[0][0];
    const auto& b = s.weights[0][1];
    REQUIRE(y.shape() == Shape{2, 3, 3, 3});
    double worst = 0;
    for (int n = 0; n < 2; ++n) {
        for (int o = 0; o < 3; ++o) {
            for (int oy = 0; oy < 3; ++oy) {
                for (int ox = 0; ox < 3; ++ox) {
                    double acc = b[static_cast<std::size_t>(o)];
                    for (int c = 0; c < 2; ++c) {
                        for (int ky = 0; ky < 3; ++ky) {
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) {
                                    continue;
                                }
                                acc += w[static_cast<std::size_t>(((o * 2 + c) * 3 + ky) * 3 + kx)] *
                                       x[static_cast<std::size_t>(((n * 2 + c) * 5 + iy) * 6 + ix)];
                            }
                        }
                    }
                    worst = std::max(worst, std::abs(acc - y[static_cast<std::size_t>(((n * 3 + o) * 3 + oy) * 3 + ox)]));
                }
            }
        }
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("transposed conv is the adjoint of conv")
{
    // <conv(x), y> == <x, convT(y)> with shared weights and zero bias
    NetworkSpec down{{3, 8, 8}, {}, {LayerSpec::conv(4, 4, 2, 1)}};
    NetworkSpec up{{4, 4, 4}, {}, {LayerSpec::conv_transpose(3, 4, 2, 1)}};
    NetworkStateD sd = randomized_state(down, 31);
    sd.weights[0][1].fill(0);
    NetworkStateD su = build_network<double>(up, 1);
    su.weights[0][0] = sd.weights[0][0];
    const TensorD x = random_tensor({1, 3, 8, 8}, 32);
    const TensorD y = random_tensor({1, 4, 4, 4}, 33);
    const TensorD cx = forward(sd, down, x, false);
    const TensorD ty = forward(su, up, y, false);
    REQUIRE(ty.shape() == x.shape());
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        lhs += cx[i] * y[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        rhs += x[i] * ty[i];
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("gradient check for every layer kind")
{
    const std::uint64_t seeds[] = {1, 2, 3};
    for (const std::uint64_t seed : seeds) {
        Rng rng(seed * 1000);
        const int c = 1 + static_cast<int>(rng.below(3));
        const int h = 4 + static_cast<int>(rng.below(4));
        const int w = 4 + static_cast<int>(rng.below(4));
        CAPTURE(seed);
        CHECK(check({{c, h, w}, {}, {LayerSpec::conv(2, 3, 1, 1)}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::conv(3, 4, 2, 1)}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::conv_transpose(2, 4, 2, 1)}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::dense(3)}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::leaky_relu(0.2)}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::relu()}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::tanh()}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::sigmoid()}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::instance_norm()}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::scale_shift(0.5, 0.5)}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::dropout(0.3)}}, seed) < 1e-4);
        CHECK(check({{c, h, w}, {}, {LayerSpec::conv(2, 3, 1, 1), LayerSpec::tanh(), LayerSpec::concat(-1)}}, seed) <
              1e-4);
        CHECK(check({{c, h, w},
                     {},
                     {LayerSpec::conv(2, 3, 1, 1), LayerSpec::instance_norm(), LayerSpec::concat(0),
                      LayerSpec::concat(-1)}},
                    seed) < 1e-4);
    }
}

// A bias feeding straight into instance normalization has an identically zero
// gradient, where the relative error is pure rounding noise; these networks keep
// an activation in between so every checked weight carries signal.
TEST_CASE("gradient check on composite networks and losses")
{
    SUBCASE("tiny regressor with MSE")
    {
        NetworkSpec spec{{1, 8, 8},
                         {3},
                         {LayerSpec::conv(4, 3, 2, 1), LayerSpec::relu(), LayerSpec::dense(5), LayerSpec::relu(),
                          LayerSpec::dense(3)}};
        CHECK(check(spec, 41) < 1e-4);
    }
    SUBCASE("U-Net style generator with L1")
    {
        NetworkSpec spec{{2, 8, 8},
                         {3, 8, 8},
                         {LayerSpec::conv(4, 4, 2, 1), LayerSpec::leaky_relu(0.2), LayerSpec::conv(6, 4, 2, 1),
                          LayerSpec::leaky_relu(0.2), LayerSpec::instance_norm(),
                          LayerSpec::conv_transpose(4, 4, 2, 1), LayerSpec::relu(), LayerSpec::instance_norm(),
                          LayerSpec::concat(1), LayerSpec::conv_transpose(3, 4, 2, 1), LayerSpec::tanh(),
                          LayerSpec::scale_shift(0.5, 0.5)}};
        const NetworkStateD state = randomized_state(spec, 51);
        const TensorD input = random_tensor({1, 2, 8, 8}, 52);
        TensorD target = forward(state, spec, input, false);
        Rng rng(53);
        for (auto& v : target.values()) {
            // keep every residual well away from the L1 kink
            v += (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.05, 0.2);
        }
        const auto report = gradient_check(spec, state, input, [&](const TensorD& out) { return l1_loss(out, target); });
        INFO(report.worst);
        CHECK(report.max_relative_error < 1e-4);
    }
    SUBCASE("patch discriminator with binary cross-entropy")
    {
        NetworkSpec spec{{4, 8, 8},
                         {1, 2, 2},
                         {LayerSpec::conv(4, 4, 2, 1), LayerSpec::leaky_relu(0.2), LayerSpec::conv(4, 4, 2, 1),
                          LayerSpec::leaky_relu(0.2), LayerSpec::instance_norm(), LayerSpec::conv(1, 3, 1, 1),
                          LayerSpec::sigmoid()}};
        const NetworkStateD state = randomized_state(spec, 61);
        const TensorD input = random_tensor({2, 4, 8, 8}, 62);
        const TensorD label({2, 1, 2, 2}, std::vector<double>{1, 1, 1, 1, 0, 0, 0, 0});
        const auto report =
            gradient_check(spec, state, input, [&](const TensorD& out) { return bce_loss(out, label); });
        INFO(report.worst);
        CHECK(report.max_relative_error < 1e-4);
    }
}

TEST_CASE("losses")
{
    const TensorD p({1, 3}, {0.5, 1.0, -1.0});
    const TensorD t({1, 3}, {0.5, 0.0, 1.0});
    const auto m = mse_loss(p, t);
    CHECK(m.value == doctest::Approx(5.0 / 3.0));
    CHECK(m.gradient[2] == doctest::Approx(2.0 * -2.0 / 3.0));
    const auto l = l1_loss(p, t);
    CHECK(l.value == doctest::Approx(1.0));
    CHECK(l.gradient[0] == 0.0);
    CHECK(l.gradient[1] == doctest::Approx(1.0 / 3.0));
    const auto b = bce_loss(TensorD({1, 2}, {0.0, 0.75}), TensorD({1, 2}, {1.0, 1.0}));
    CHECK(std::isfinite(b.value));
    CHECK(b.value == doctest::Approx((-std::log(1e-7) - std::log(0.75)) / 2.0));
}

TEST_CASE("adam one step on a scalar")
{
    NetworkSpec spec{{1}, {1}, {LayerSpec::dense(1)}};
    NetworkStateD s = build_network<double>(spec, 1);
    s.weights[0][0][0] = 0.0;
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    std::vector<std::vector<TensorD>> g{{TensorD({1, 1}, {1.0}), TensorD({1}, {0.0})}};
    adam_step(s, g, cfg);
    // m = 0.1, v = 0.001; bias-corrected mhat = 1, vhat = 1
    CHECK(s.weights[0][0][0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(s.weights[0][1][0] == 0.0);
    CHECK(s.step_count == 1);
}

TEST_CASE("adam properties")
{
    NetworkSpec spec{{3, 4, 4}, {}, {LayerSpec::conv(2, 3, 1, 1), LayerSpec::instance_norm(), LayerSpec::dense(2)}};
    const NetworkStateD s0 = randomized_state(spec, 71);
    AdamConfig cfg;

    SUBCASE("zero gradient is a fixed point")
    {
        NetworkStateD s = s0;
        std::vector<std::vector<TensorD>> zero;
        for (const auto& layer : s.weights) {
            zero.emplace_back();
            for (const auto& t : layer) {
                zero.back().emplace_back(t.shape());
            }
        }
        for (int i = 0; i < 5; ++i) {
            adam_step(s, zero, cfg);
        }
        CHECK(s.weights == s0.weights);
        CHECK(s.adam_m == s0.adam_m);
        CHECK(s.adam_v == s0.adam_v);
        CHECK(s.step_count == 5);
    }
    SUBCASE("negated gradient negates the step")
    {
        std::vector<std::vector<TensorD>> g, ng;
        Rng rng(72);
        for (const auto& layer : s0.weights) {
            g.emplace_back();
            ng.emplace_back();
            for (const auto& t : layer) {
                TensorD a(t.shape());
                for (auto& v : a.values()) {
                    v = rng.uniform(-1, 1);
                }
                TensorD b = a;
                for (auto& v : b.values()) {
                    v = -v;
                }
                g.back().push_back(a);
                ng.back().push_back(b);
            }
        }
        // from a zero state so the deltas are not rounded against a nonzero weight
        NetworkStateD a = build_network<double>(spec, 71);
        for (auto& layer : a.weights) {
            for (auto& t : layer) {
                t.fill(0);
            }
        }
        NetworkStateD b = a;
        adam_step(a, g, cfg);
        adam_step(b, ng, cfg);
        for (std::size_t i = 0; i < a.weights.size(); ++i) {
            for (std::size_t k = 0; k < a.weights[i].size(); ++k) {
                for (std::size_t q = 0; q < a.weights[i][k].size(); ++q) {
                    CHECK(a.weights[i][k][q] == -b.weights[i][k][q]);
                }
            }
        }
    }
    SUBCASE("non-finite gradient rejected")
    {
        NetworkStateD s = s0;
        std::vector<std::vector<TensorD>> g;
        for (const auto& layer : s.weights) {
            g.emplace_back();
            for (const auto& t : layer) {
                g.back().emplace_back(t.shape());
            }
        }
        g[0][0][0] = std::nan("");
        CHECK_THROWS_AS(adam_step(s, g, cfg), NumericError);
    }
}

TEST_CASE("training trajectory is bit-deterministic")
{
    NetworkSpec spec{{1, 6, 6},
                     {2},
                     {LayerSpec::conv(3, 3, 2, 1), LayerSpec::relu(), LayerSpec::dense(4), LayerSpec::dropout(0.5),
                      LayerSpec::dense(2)}};
    auto run = [&] {
        NetworkState s = build_network<float>(spec, 9);
        const Tensor x = random_tensor({4, 1, 6, 6}, 10).cast<float>();
        const Tensor t = random_tensor({4, 2}, 11).cast<float>();
        for (int step = 0; step < 5; ++step) {
            ForwardCache<float> cache;
            const Tensor y = forward(s, spec, x, true, &cache, derive_seed(12, step));
            const auto loss = mse_loss(y, t);
            adam_step(s, backward(s, spec, cache, loss.gradient).weights, AdamConfig{});
        }
        return s;
    };
    CHECK(run() == run());
}

TEST_CASE("weights and description round-trip")
{
    NetworkSpec spec{{3, 8, 8},
                     {3, 8, 8},
                     {LayerSpec::conv(4, 4, 2, 1, "e1"), LayerSpec::leaky_relu(0.2), LayerSpec::instance_norm(),
                      LayerSpec::conv_transpose(3, 4, 2, 1, "d1"), LayerSpec::dropout(0.25), LayerSpec::concat(-1),
                      LayerSpec::conv(3, 3, 1, 1), LayerSpec::tanh(), LayerSpec::scale_shift(0.5, 0.5)}};
    const auto dir = std::filesystem::temp_directory_path() / "egoface_nn_io";
    std::filesystem::create_directories(dir);
    save_spec(spec, dir / "net.json");
    const NetworkSpec back = load_spec(dir / "net.json");
    CHECK(back == spec);

    const NetworkState s = build_network<float>(spec, 5);
    save_weights(s, dir / "net.egfw");
    const NetworkState r = load_weights(spec, dir / "net.egfw");
    CHECK(r.weights == s.weights);

    NetworkSpec other = spec;
    other.layers[0].out_channels = 5;
    other.output_shape = {};
    CHECK_THROWS(load_weights(other, dir / "net.egfw"));
    std::filesystem::remove_all(dir);
}
