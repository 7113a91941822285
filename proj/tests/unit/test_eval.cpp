#include "doctest.h"

#include "egoface/common/error.hpp"
#include "egoface/common/rng.hpp"
#include "egoface/eval/eval.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace egoface;
using namespace egoface::eval;

namespace {

const model::FaceBasis& basis()
{
    static const auto b = model::synth_basis({500, 16, 16, 12}, 7);
    return b;
}

const sim::DatasetManifest& ego_dataset()
{
    static const sim::DatasetManifest m = [] {
        const auto actor = sim::make_actor(basis(), 8);
        const std::vector<sim::PerformanceScript> scripts{
            sim::gen_performance(basis(), actor, 300, 40, 1, sim::Motion::free)};
        const sim::ExportCameras cams{camera::PerspectiveCamera{}.scaled(0.25), camera::ego_camera_default(64, 64)};
        return sim::export_dataset(sim::DatasetKind::ego2exp, basis(), scripts, cams, 0.3, {0}, {},
                                   std::filesystem::temp_directory_path() / "egoface_eval_ego");
    }();
    return m;
}

const sim::DatasetManifest& front_dataset()
{
    static const sim::DatasetManifest m = [] {
        const auto actor = sim::make_actor(basis(), 8);
        const std::vector<sim::PerformanceScript> scripts{
            sim::gen_performance(basis(), actor, 301, 30, 0, sim::Motion::studio)};
        const sim::ExportCameras cams{camera::PerspectiveCamera{}.scaled(0.25), camera::ego_camera_default(64, 64)};
        return sim::export_dataset(sim::DatasetKind::exp2vreal, basis(), scripts, cams, 0.3, {0}, {},
                                   std::filesystem::temp_directory_path() / "egoface_eval_front");
    }();
    return m;
}

render::Image constant_image(int size, double v)
{
    render::Image img(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.set(x, y, c, v);
            }
        }
    }
    return img;
}

} // namespace

TEST_CASE("per-vertex distance examples")
{
    Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(1500, -40.0, 60.0);
    const auto same = pervertex_distance(a, a);
    CHECK(same.min == 0.0);
    CHECK(same.max == 0.0);
    CHECK(same.mean == 0.0);

    Eigen::VectorXd shifted = a;
    for (int i = 0; i < 500; ++i) {
        shifted(3 * i + 1) += 2.0;
    }
    const auto t = pervertex_distance(a, shifted);
    CHECK(t.min == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(t.max == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(t.mean == doctest::Approx(2.0).epsilon(1e-12));

    Eigen::VectorXd one = a;
    one(3 * 17 + 2) += 3.0;
    const auto s = pervertex_distance(a, one);
    CHECK(s.min == 0.0);
    CHECK(s.max == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(s.mean == doctest::Approx(3.0 / 500.0).epsilon(1e-12));
    const auto back = pervertex_distance(one, a);
    CHECK(back.max == s.max);
    CHECK(back.mean == s.mean);

    CHECK_THROWS_AS(pervertex_distance(a, a.head(1497)), std::invalid_argument);
    CHECK_THROWS_AS(pervertex_distance(a.head(4), a.head(4)), std::invalid_argument);
}

TEST_CASE("per-vertex statistics stay ordered on random meshes")
{
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd a(300), b(300);
        for (int i = 0; i < 300; ++i) {
            a(i) = rng.uniform(-50.0, 50.0);
            b(i) = a(i) + rng.uniform(-3.0, 3.0);
        }
        const auto s = pervertex_distance(a, b);
        CHECK(s.min <= s.mean);
        CHECK(s.mean <= s.max);
        CHECK(s.min > 0.0);
    }
}

TEST_CASE("ego2exp geometry: oracle is zero and the mean predictor matches brute force")
{
    const auto& m = ego_dataset();
    const auto params = sim::load_dataset_params(m);
    const auto test = m.indices(true);
    REQUIRE(test.size() >= 3);

    std::size_t next = 0;
    const auto oracle = eval_ego2exp_geometry(basis(), m, [&](const render::Image&) {
        return params[static_cast<std::size_t>(test[next++])].delta;
    });
    CHECK(oracle.entries == test);
    CHECK(oracle.average.max == 0.0);
    CHECK(oracle.average.mean == 0.0);

    const auto mean = eval_ego2exp_geometry(basis(), m, mean_predictor(m));
    Eigen::VectorXd mean_delta = Eigen::VectorXd::Zero(basis().dim_delta());
    const auto train = m.indices(false);
    for (const int i : train) {
        mean_delta += params[static_cast<std::size_t>(i)].delta;
    }
    mean_delta /= static_cast<double>(train.size());
    double brute_mean = 0.0, brute_max = 0.0;
    for (const int i : test) {
        const auto& p = params[static_cast<std::size_t>(i)];
        const Eigen::VectorXd ga = model::assemble_geometry(basis(), p.alpha, mean_delta);
        const Eigen::VectorXd gb = model::assemble_geometry(basis(), p.alpha, p.delta);
        double sum = 0.0, mx = 0.0;
        for (int v = 0; v < basis().vertex_count; ++v) {
            const double d = (ga.segment<3>(3 * v) - gb.segment<3>(3 * v)).norm();
            sum += d;
            mx = std::max(mx, d);
        }
        brute_mean += sum / basis().vertex_count;
        brute_max += mx;
    }
    CHECK(mean.average.mean == doctest::Approx(brute_mean / test.size()).epsilon(1e-12));
    CHECK(mean.average.max == doctest::Approx(brute_max / test.size()).epsilon(1e-12));
    CHECK(mean.average.mean > 0.0);

    const auto j = geo_stats_to_json(mean);
    CHECK(j.at("frame_count") == test.size());
    CHECK(j.at("average").at("mean").get<double>() == mean.average.mean);
}

TEST_CASE("image mse")
{
    const auto a = constant_image(8, 0.25), b = constant_image(8, 0.75);
    CHECK(image_mse(a, a) == 0.0);
    CHECK(image_mse(a, b) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(image_mse(a, b) == image_mse(b, a));
    CHECK_THROWS_AS(image_mse(a, constant_image(4, 0.25)), std::invalid_argument);
}

TEST_CASE("self-reenactment mse of a copier and a constant gray generator")
{
    const auto data = exp2vreal::load_frames(front_dataset(), 32);
    REQUIRE(!data.test.empty());
    const auto copier = self_reenactment_mse(
        [&](int i) { return exp2vreal::tensor_to_image(exp2vreal::front_target(data, i)); }, data);
    CHECK(copier.mean == 0.0);
    CHECK(copier.entries == data.test);
    CHECK(copier.size == 32);

    const auto gray = self_reenactment_mse([](int) { return constant_image(32, 0.5); }, data);
    double variance = 0.0;
    for (const int i : data.test) {
        double s = 0.0;
        for (std::size_t k = 0; k < data.plane(); ++k) {
            const double v = data.front[static_cast<std::size_t>(i) * data.plane() + k] / 255.0 - 0.5;
            s += v * v;
        }
        variance += s / data.plane();
    }
    CHECK(gray.mean == doctest::Approx(variance / data.test.size()).epsilon(1e-9));
    for (const double v : gray.per_frame) {
        CHECK(v > 0.0);
    }

    const auto larger = exp2vreal::load_frames(front_dataset(), 64);
    const auto resized = self_reenactment_mse(
        [&](int i) { return exp2vreal::tensor_to_image(exp2vreal::front_target(larger, i)); }, data);
    CHECK(resized.mean < 1e-4);
}

TEST_CASE("self-reenactment with a generator checks its inputs")
{
    const auto data = exp2vreal::load_frames(front_dataset(), 32);
    exp2vreal::GanConfig c;
    c.variant = exp2vreal::Variant::optimized;
    c.optimized_size = 32;
    const auto gan = exp2vreal::build_gan(c, 1);
    const auto r = self_reenactment_mse(gan, data, data);
    CHECK(r.per_frame.size() == data.test.size());
    CHECK(r.mean > 0.0);
    CHECK_THROWS_AS(self_reenactment_mse(gan, exp2vreal::load_frames(front_dataset(), 64), data),
                    std::invalid_argument);
}

TEST_CASE("component selection")
{
    CHECK(parse_components("resnet-analog,albedo,optimized") ==
          std::vector<std::string>{"resnet-analog", "albedo", "optimized"});
    CHECK_THROWS_WITH_AS(parse_components("resnet,albedo"), doctest::Contains("resnet"), ConfigError);
    CHECK_THROWS_AS(parse_components("albedo,albedo"), ConfigError);
    CHECK(component_info("albedo").label == "Albedo only");
}

TEST_CASE("timing bench follows the table layout and the translator ordering")
{
    const auto& m = ego_dataset();
    const auto params = sim::load_dataset_params(m);
    BenchSetup setup;
    setup.basis = &basis();
    for (int i = 0; i < 6; ++i) {
        setup.params.push_back(params[static_cast<std::size_t>(i)]);
        setup.ego_frames.push_back(render::read_ppm(m.resolve(m.entries[static_cast<std::size_t>(i)].ego)));
    }
    ego2exp::RegressorConfig rc;
    rc.output_dim = basis().dim_delta();
    rc.preset = "small";
    const auto small = ego2exp::build_regressor(rc, 1);
    exp2vreal::GanConfig gc;
    const auto full = exp2vreal::build_gan(gc, 1);
    gc.variant = exp2vreal::Variant::optimized;
    const auto opt = exp2vreal::build_gan(gc, 1);
    setup.regressors["resnet-analog"] = &small;
    setup.translators["full"] = &full;
    setup.translators["optimized"] = &opt;

    const auto report = timing_bench(setup, {"optimized", "albedo", "resnet-analog", "full"});
    REQUIRE(report.rows.size() == 4);
    CHECK(report.rows[0].component.id == "resnet-analog");
    CHECK(report.rows[1].component.id == "albedo");
    CHECK(report.rows[2].component.id == "full");
    CHECK(report.rows[3].component.id == "optimized");
    CHECK(report.repetitions == 2);
    CHECK(report.frames == 6);
    double sum = 0.0;
    for (const auto& r : report.rows) {
        CHECK(r.repetition_ms.size() == 2);
        CHECK(r.mean_ms > 0.0);
        CHECK(r.mean_ms == doctest::Approx((r.repetition_ms[0] + r.repetition_ms[1]) / 2));
        sum += r.mean_ms;
    }
    CHECK(report.end_to_end_ms == doctest::Approx(sum));
    CHECK(report.translator_ordering_holds());
    CHECK(report.rows[2].component.reference_ms == 39.4);

    const auto reference_row = timing_bench(setup, {"resnet-analog", "albedo", "optimized"}, 1);
    CHECK(reference_row.reference_end_to_end_ms == 36.2);
    const auto table = format_timing_table(reference_row);
    CHECK(table.find("Albedo only") != std::string::npos);
    CHECK(table.find("ResNet50 analog") != std::string::npos);

    const auto csv = std::filesystem::temp_directory_path() / "egoface_timing.csv";
    write_timing_csv(report, csv);
    std::ifstream is(csv);
    std::string header;
    std::getline(is, header);
    CHECK(header == "component,group,label,mean_ms,pass1_ms,pass2_ms,reference_ms");

    CHECK_THROWS_AS(timing_bench(setup, {"vgg-analog"}), std::invalid_argument);
    CHECK_THROWS_AS(timing_bench(setup, {"albedo"}, 0), std::invalid_argument);
}
