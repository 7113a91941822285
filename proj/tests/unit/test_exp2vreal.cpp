#include "doctest.h"

#include "egoface/common/error.hpp"
#include "egoface/common/rng.hpp"
#include "egoface/exp2vreal/translator.hpp"
#include "egoface/nn/gradient_check.hpp"
#include "egoface/sim/capture.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace egoface;
using namespace egoface::exp2vreal;

namespace {

GanConfig full_scale_config(Variant v)
{
    GanConfig c;
    c.variant = v;
    c.full_size = 256;
    c.optimized_size = 128;
    c.channel_scale = 1.0;
    return c;
}

GanConfig tiny_config()
{
    GanConfig c;
    c.variant = Variant::optimized;
    c.optimized_size = 32;
    c.batch_size = 4;
    c.epochs = 2;
    return c;
}

nn::Tensor filled(const nn::Shape& shape, float v)
{
    return nn::Tensor(shape, v);
}

// Small Exp2VRealFace export, shared across cases.
const sim::DatasetManifest& small_dataset()
{
    static const sim::DatasetManifest manifest = [] {
        const auto basis = model::synth_basis({500, 16, 16, 12}, 7);
        const auto actor = sim::make_actor(basis, 8);
        const std::vector<sim::PerformanceScript> scripts{
            sim::gen_performance(basis, actor, 100, 48, 0, sim::Motion::studio),
            sim::gen_performance(basis, actor, 101, 16, 0, sim::Motion::studio)};
        const sim::ExportCameras cams{camera::PerspectiveCamera{}.scaled(0.25), camera::ego_camera_default(64, 64)};
        return sim::export_dataset(sim::DatasetKind::exp2vreal, basis, scripts, cams, 0.2, {0, 0}, {},
                                   std::filesystem::temp_directory_path() / "egoface_exp2vreal");
    }();
    return manifest;
}

double l1_to_target(const Gan& gan, const FrameSet& data, const std::vector<int>& idx, bool identity)
{
    double sum = 0.0;
    for (const int i : idx) {
        const nn::Tensor x = window_input(data, i, gan.cfg.window);
        const nn::Tensor y = front_target(data, i);
        nn::Tensor out = y;
        if (identity) {
            std::copy_n(x.data() + (gan.cfg.window / 2) * data.plane(), data.plane(), out.data());
        } else {
            out = nn::forward(gan.g_state, gan.g_spec, x, false);
        }
        sum += loss_l1(out, y);
    }
    return sum / static_cast<double>(idx.size());
}

} // namespace

TEST_CASE("full generator reproduces the architecture table at full scale")
{
    const std::vector<ArchRow> expected = {
        {"Encoder1", 128, 128, 64}, {"Encoder2", 64, 64, 128}, {"Encoder3", 32, 32, 256},
        {"Encoder4", 16, 16, 512},  {"Encoder5", 8, 8, 512},   {"Encoder6", 4, 4, 512},
        {"Encoder7", 2, 2, 512},    {"Decoder7", 2, 2, 512},   {"Decoder6", 4, 4, 512},
        {"Decoder5", 8, 8, 512},    {"Decoder4", 16, 16, 512}, {"Decoder3", 32, 32, 256},
        {"Decoder2", 64, 64, 128},  {"Decoder1", 128, 128, 64}};
    const auto spec = generator_spec(full_scale_config(Variant::full));
    CHECK(architecture_table(spec) == expected);
    CHECK(spec.input_shape == nn::Shape{9, 256, 256});
    CHECK(nn::infer_shapes(spec).back() == nn::Shape{3, 256, 256});
}

TEST_CASE("optimized generator omits exactly the gray rows")
{
    const auto full = architecture_table(generator_spec(full_scale_config(Variant::full)));
    const auto opt_spec = generator_spec(full_scale_config(Variant::optimized));
    const auto opt = architecture_table(opt_spec);
    std::vector<ArchRow> expected;
    for (const auto& r : full) {
        if (r.name != "Encoder1" && r.name != "Encoder6" && r.name != "Encoder7" && r.name != "Decoder7" &&
            r.name != "Decoder6" && r.name != "Decoder1") {
            expected.push_back(r);
        }
    }
    CHECK(opt == expected);
    CHECK(opt_spec.input_shape == nn::Shape{9, 128, 128});
    int deepest = 1 << 20;
    for (const auto& r : opt) {
        deepest = std::min(deepest, r.height);
    }
    CHECK(deepest == 8);
    CHECK(nn::infer_shapes(opt_spec).back() == nn::Shape{3, 128, 128});
}

TEST_CASE("desk scale halves sizes and scales widths")
{
    GanConfig c;
    const auto rows = architecture_table(generator_spec(c));
    REQUIRE(rows.size() == 14);
    CHECK(rows.front() == ArchRow{"Encoder1", 64, 64, 8});
    CHECK(rows[6] == ArchRow{"Encoder7", 1, 1, 64});
    c.variant = Variant::optimized;
    const auto opt = generator_spec(c);
    CHECK(opt.input_shape == nn::Shape{9, 64, 64});
    CHECK(architecture_table(opt).size() == 8);

    GanConfig w1;
    w1.window = 1;
    CHECK(generator_spec(w1).input_shape == nn::Shape{3, 128, 128});
    CHECK(discriminator_spec(w1).input_shape == nn::Shape{6, 128, 128});
}

TEST_CASE("discriminator conditions on window plus frame and outputs probabilities")
{
    GanConfig c = tiny_config();
    const auto spec = discriminator_spec(c);
    CHECK(spec.input_shape == nn::Shape{3 * c.window + 3, 32, 32});
    CHECK(nn::infer_shapes(spec).back() == nn::Shape{1, 4, 4});
    const Gan a = build_gan(c, 5), b = build_gan(c, 5), d = build_gan(c, 6);
    CHECK(a.g_state == b.g_state);
    CHECK(a.d_state == b.d_state);
    CHECK_FALSE(a.g_state == d.g_state);

    Rng rng(3);
    nn::Tensor x({2, 12, 32, 32});
    for (auto& v : x.values()) {
        v = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    const nn::Tensor p = nn::forward(a.d_state, a.d_spec, x, false);
    for (const float v : p.values()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("config validation and json")
{
    GanConfig c;
    c.lambda = -1;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("exp2vreal.lambda"), ConfigError);
    c = GanConfig{};
    c.window = 2;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("exp2vreal.window"), ConfigError);
    CHECK_THROWS_AS(parse_variant("huge"), ConfigError);

    GanConfig d = tiny_config();
    d.lambda = 7.5;
    d.generator_adam.beta1 = 0.4;
    CHECK(same_config(gan_config_from_json(gan_config_to_json(d)), d));
    CHECK_THROWS_WITH_AS(gan_config_from_json({{"lamda", 3}}), doctest::Contains("unknown key exp2vreal.lamda"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(gan_config_from_json({{"generator_adam", {{"lr", 1}}}}),
                         doctest::Contains("exp2vreal.generator_adam.lr"), ConfigError);
    CHECK_THROWS_WITH_AS(gan_config_from_json({{"lambda", -1}}), doctest::Contains("exp2vreal.lambda"), ConfigError);
}

TEST_CASE("l1 loss examples")
{
    const nn::Tensor a = filled({1, 3, 4, 4}, 0.3f);
    CHECK(loss_l1(a, a) == 0.0);
    nn::Tensor b = filled({1, 3, 4, 4}, 0.0f), c = filled({1, 3, 4, 4}, 0.0f);
    for (std::size_t i = 0; i < b.size(); i += 4) {
        b[i] = 1.0f;
    }
    CHECK(loss_l1(b, c) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(loss_l1(b, c) == loss_l1(c, b));
    CHECK_THROWS_AS(loss_l1(a, filled({1, 3, 4, 5}, 0.0f)), nn::ShapeError);
}

TEST_CASE("adversarial loss analytic values")
{
    const nn::Tensor half = filled({4, 1, 2, 2}, 0.5f);
    const auto uniform = loss_adv(half, half);
    CHECK(std::abs(uniform.objective + 2.0 * std::numbers::ln2) < 1e-15);
    CHECK(uniform.discriminator == -uniform.objective);
    CHECK(std::abs(uniform.generator - std::numbers::ln2) < 1e-15);

    const auto perfect = loss_adv(filled({4, 1, 2, 2}, 1.0f), filled({4, 1, 2, 2}, 0.0f));
    CHECK(std::abs(perfect.objective) < 1e-6);
    CHECK(std::isfinite(perfect.generator));

    double previous = 1e300;
    for (float p = 0.05f; p < 1.0f; p += 0.1f) {
        const double g = loss_adv(half, filled({1, 1, 1, 1}, p)).generator;
        CHECK(g < previous);
        previous = g;
    }
    CHECK_THROWS_AS(loss_adv(filled({1, 1, 1, 1}, 1.5f), half), std::invalid_argument);
    CHECK_THROWS_AS(loss_adv(half, filled({1, 1, 1, 1}, std::nanf(""))), std::invalid_argument);
}

TEST_CASE("generator objective decomposes into adversarial plus lambda times l1")
{
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        nn::Tensor d({3, 1, 4, 4}), g({3, 3, 8, 8}), y({3, 3, 8, 8});
        for (auto& v : d.values()) {
            v = static_cast<float>(rng.uniform(0.0, 1.0));
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = static_cast<float>(rng.uniform(0.0, 1.0));
            y[i] = static_cast<float>(rng.uniform(0.0, 1.0));
        }
        const double weight = trial % 2 == 0 ? 1.0 : 0.0;
        const auto o = generator_objective(d, g, y, 10.0, weight);
        CHECK(std::abs(o.total - (weight * o.adversarial + 10.0 * o.l1)) <= 1e-12 * std::abs(o.total));
        CHECK(o.l1 == loss_l1(g, y));
        CHECK(std::abs(o.adversarial - loss_adv(d, d).generator) < 1e-12);
    }
}

TEST_CASE("gradient check of the composite generator loss")
{
    GanConfig c = tiny_config();
    c.optimized_size = 16;
    c.window = 1;
    const auto g_spec = generator_spec(c), d_spec = discriminator_spec(c);
    const auto g_state = nn::build_network<double>(g_spec, 21);
    const auto d_state = nn::build_network<double>(d_spec, 22);
    Rng rng(23);
    nn::TensorD x({2, 3, 16, 16}), y({2, 3, 16, 16});
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.uniform(0.0, 1.0);
        y[i] = rng.uniform(0.0, 1.0);
    }
    for (const double weight : {1.0, 0.0}) {
        const auto loss = [&](const nn::TensorD& out) {
            const auto o = generator_loss(d_state, d_spec, x, out, y, 10.0, weight);
            return nn::LossResult<double>{o.total, o.grad_generated};
        };
        nn::GradientCheckOptions opt;
        opt.max_samples = 150;
        const auto report = nn::gradient_check(g_spec, g_state, x, loss, opt);
        INFO(report.worst);
        CHECK(report.max_relative_error < 1e-4);
    }
}

TEST_CASE("frame windows clamp to their sequence")
{
    const FrameSet data = load_frames(small_dataset(), 32);
    REQUIRE(data.entries() == 64);
    CHECK(data.train.size() + data.test.size() == 64);
    CHECK(data.window(10, 3) == std::vector<int>{9, 10, 11});
    CHECK(data.window(0, 3) == std::vector<int>{0, 0, 1});
    CHECK(data.window(47, 3) == std::vector<int>{46, 47, 47});
    CHECK(data.window(48, 5) == std::vector<int>{48, 48, 48, 49, 50});
    CHECK(data.window(20, 1) == std::vector<int>{20});
    const nn::Tensor x = window_input(data, 0, 3);
    CHECK(x.shape() == nn::Shape{1, 9, 32, 32});
    CHECK(std::equal(x.data(), x.data() + data.plane(), x.data() + data.plane()));
    CHECK_THROWS_AS(train_cgan(data, GanConfig{}, 1), std::invalid_argument);
}

TEST_CASE("training is deterministic per seed")
{
    const FrameSet data = load_frames(small_dataset(), 32);
    const GanConfig c = tiny_config();
    const auto a = train_cgan(data, c, 4);
    const auto b = train_cgan(data, c, 4);
    REQUIRE(a.curve.size() == 2);
    for (std::size_t e = 0; e < a.curve.size(); ++e) {
        CHECK(a.curve[e].l1 == b.curve[e].l1);
        CHECK(a.curve[e].g_adv == b.curve[e].g_adv);
        CHECK(a.curve[e].d_loss == b.curve[e].d_loss);
        CHECK(a.curve[e].d_loss > 0.0);
    }
    CHECK(a.gan.g_state == b.gan.g_state);
    CHECK(a.gan.d_state == b.gan.d_state);
    const auto other = train_cgan(data, c, 5);
    CHECK_FALSE(other.gan.g_state == a.gan.g_state);
}

TEST_CASE("l1-only training beats the identity mapping")
{
    const FrameSet data = load_frames(small_dataset(), 32);
    GanConfig c = tiny_config();
    c.adversarial_weight = 0.0;
    c.epochs = 25;
    c.generator_adam.learning_rate = 1e-3;
    const auto res = train_cgan(data, c, 2);
    CHECK(res.curve.back().l1 < res.curve.front().l1);
    CHECK(res.curve.back().d_loss == 0.0);
    const double learned = l1_to_target(res.gan, data, data.train, false);
    const double identity = l1_to_target(res.gan, data, data.train, true);
    CHECK(learned < identity);
}

TEST_CASE("translation is deterministic and bounded")
{
    const FrameSet data = load_frames(small_dataset(), 32);
    const Gan gan = build_gan(tiny_config(), 8);
    std::vector<render::Image> window;
    for (const int i : data.window(30, 3)) {
        window.push_back(tensor_to_image(window_input(data, i, 1)));
    }
    const auto a = translate(gan, window), b = translate(gan, window);
    CHECK(a.width() == 32);
    CHECK(a.height() == 32);
    bool same = true;
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                same = same && a.at(x, y, ch) == b.at(x, y, ch);
                CHECK(a.at(x, y, ch) >= 0.0);
                CHECK(a.at(x, y, ch) <= 1.0);
            }
        }
    }
    CHECK(same);
    const auto direct = translate_tensor(gan, window_input(data, 30, 3));
    CHECK(direct.at(5, 7, 1) == a.at(5, 7, 1));

    CHECK_THROWS_AS(translate(gan, {window[0], window[1]}), std::invalid_argument);
    CHECK_THROWS_AS(translate(gan, {render::Image(16, 16), window[1], window[2]}), std::invalid_argument);

    GanConfig single = tiny_config();
    single.window = 1;
    const Gan g1 = build_gan(single, 8);
    CHECK(translate(g1, {window[1]}).width() == 32);
}

TEST_CASE("pose selection")
{
    PoseSelection sel;
    for (int k = 0; k < 4; ++k) {
        sel.poses.push_back({Vector3d(0.0, 0.1 * k, 0.0), Vector3d(0.0, 0.0, 500.0 + k)});
    }
    CHECK(select_pose(sel, 0) == sel.poses[0]);
    CHECK(select_pose(sel, 37) == sel.poses[0]);

    sel.mode = PoseMode::loop;
    CHECK(select_pose(sel, 6) == sel.poses[2]);
    CHECK(select_pose(sel, 3) == sel.poses[3]);
    CHECK(select_pose(sel, 4) == sel.poses[0]);
    sel.loop_period = 5;
    CHECK(select_pose(sel, 9) == sel.poses[1]);

    sel.loop_period = 1;
    sel.ping_pong = true;
    const std::vector<int> bounce = {0, 1, 2, 3, 2, 1, 0, 1, 2};
    for (int f = 0; f < static_cast<int>(bounce.size()); ++f) {
        CHECK(select_pose(sel, f) == sel.poses[static_cast<std::size_t>(bounce[static_cast<std::size_t>(f)])]);
    }

    sel.poses.clear();
    CHECK_THROWS_AS(select_pose(sel, 0), std::invalid_argument);
}

TEST_CASE("pose override changes the albedo render and keeps the geometry")
{
    const auto basis = model::synth_basis({500, 16, 16, 12}, 7);
    const auto actor = sim::make_actor(basis, 8);
    const auto script = sim::gen_performance(basis, actor, 100, 10, 0, sim::Motion::studio);
    const model::ParamVector base = script.params(4);
    const camera::PerspectiveCamera cam = camera::PerspectiveCamera{}.scaled(0.25);

    const std::pair<Vector3d, Vector3d> frontal{Vector3d::Zero(), camera::frontal_translation()};
    const std::pair<Vector3d, Vector3d> turned{Vector3d(0.0, 0.3, 0.0), camera::frontal_translation()};
    const model::ParamVector a = drive_params(base, base.delta, frontal);
    const model::ParamVector b = drive_params(base, base.delta, turned);
    CHECK(a.alpha == base.alpha);
    CHECK(a.beta == base.beta);
    CHECK(a.gamma == base.gamma);
    CHECK(model::assemble_geometry(basis, a.alpha, a.delta) == model::assemble_geometry(basis, b.alpha, b.delta));
    CHECK(b.R == turned.first);

    const auto ra = sim::render_albedo_frame(basis, a, cam);
    const auto rb = sim::render_albedo_frame(basis, b, cam);
    double diff = 0.0;
    for (int y = 0; y < ra.height(); ++y) {
        for (int x = 0; x < ra.width(); ++x) {
            diff += std::abs(ra.at(x, y, 0) - rb.at(x, y, 0));
        }
    }
    CHECK(diff > 1.0);
    CHECK_THROWS_AS(drive_params(base, Eigen::VectorXd::Zero(3), frontal), std::invalid_argument);
}

TEST_CASE("translator save and load round trip")
{
    const auto dir = std::filesystem::temp_directory_path() / "egoface_gan_io";
    std::filesystem::remove_all(dir);
    const Gan gan = build_gan(tiny_config(), 3);
    save_gan(gan, dir, "optimized");
    const Gan back = load_gan(dir, "optimized");
    CHECK(back.g_state.weights == gan.g_state.weights);
    CHECK(back.d_state.weights == gan.d_state.weights);
    CHECK(same_config(back.cfg, gan.cfg));
    CHECK_THROWS_WITH_AS(load_gan(dir, "full"), doctest::Contains("full_generator.egfw"), MissingArtifactError);
    std::filesystem::remove(dir / "optimized_discriminator.egfw");
    CHECK_THROWS_WITH_AS(load_gan(dir, "optimized"), doctest::Contains("optimized_discriminator.egfw"),
                         MissingArtifactError);
}
