#include "doctest.h"

#include "egoface/common/error.hpp"
#include "egoface/common/rng.hpp"
#include "egoface/recon/recon.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace egoface;
using namespace egoface::recon;
using model::ParamVector;

namespace {

const model::FaceBasis& desk_basis()
{
    static const model::FaceBasis b = model::synth_basis({500, 16, 16, 12}, 3);
    return b;
}

const Vector3d gray_bg(0.2, 0.2, 0.2);
const double degree = std::numbers::pi / 180.0;

struct Scene
{
    ParamVector truth;
    render::Image image;
    render::LandmarkSet landmarks;
};

Scene make_scene(const model::FaceBasis& b, const ParamVector& truth, const camera::PerspectiveCamera& cam)
{
    Scene s;
    s.truth = truth;
    s.image = render::rasterize_shaded(model::build_shaded_mesh(b, truth), cam, render::Pose{truth.R, truth.T}, gray_bg)
                  .image;
    s.landmarks = render::project_landmarks(b, truth, cam);
    return s;
}

ParamVector random_truth(const model::FaceBasis& b, Rng& rng, double spread = 0.5)
{
    ParamVector p = frontal_init(b);
    for (int k = 0; k < b.dim_alpha(); ++k) {
        p.alpha(k) = spread * rng.normal() * b.sigma_alpha(k);
    }
    for (int k = 0; k < b.dim_beta(); ++k) {
        p.beta(k) = spread * rng.normal() * b.sigma_beta(k);
    }
    for (int k = 0; k < b.dim_delta(); ++k) {
        p.delta(k) = spread * rng.normal() * b.sigma_delta(k);
    }
    p.R = Vector3d(0.05 * rng.normal(), 0.05 * rng.normal(), 0.02 * rng.normal());
    return p;
}

double geometry_error(const model::FaceBasis& b, const ParamVector& x, const ParamVector& y)
{
    return mean_vertex_distance(model::assemble_geometry(b, x.alpha, x.delta), model::assemble_geometry(b, y.alpha, y.delta));
}

bool energies_decrease(const FitReport& r)
{
    for (const StageRecord& s : r.stages) {
        for (std::size_t k = 1; k < s.total.size(); ++k) {
            if (!(s.total[k] < s.total[k - 1])) {
                return false;
            }
        }
    }
    return true;
}

} // namespace

TEST_CASE("free sets and config parsing")
{
    CHECK(FreeSet::parse("R, T,delta,gamma") == FreeSet::tracking());
    CHECK(FreeSet::parse(FreeSet::all().to_string()) == FreeSet::all());
    CHECK_THROWS_AS(FreeSet::parse("R,omega"), ConfigError);
    const model::BasisDims dims{500, 16, 16, 12};
    const std::vector<int> idx = free_indices(FreeSet::parse("T,delta"), dims);
    CHECK(idx.size() == 15);
    CHECK(idx.front() == 3);
    CHECK(idx.back() == 6 + 16 + 16 + 11);

    EnergyConfig c;
    CHECK(energy_config_from_json(energy_config_to_json(c)) == c);
    CHECK(energy_config_from_json({{"w_lmk", 2.0}}).w_lmk == 2.0);
    CHECK_THROWS_AS(energy_config_from_json({{"w_lmk", -1.0}}), ConfigError);
    CHECK_THROWS_AS(energy_config_from_json({{"weight", 1.0}}), ConfigError);
    CHECK_THROWS_AS(energy_config_from_json({{"w_photo", 0.0}, {"w_lmk", 0.0}, {"w_prior", 0.0}}), ConfigError);
}

TEST_CASE("residual self-consistency with a constant color field")
{
    // constant reflectance and band-0 light give one vertex color everywhere, so the
    // rendered image equals that color at every sample position
    model::FaceBasis b = desk_basis();
    b.a_ref.setConstant(0.5);
    ParamVector p = frontal_init(b);
    p.gamma.setZero();
    for (int c = 0; c < 3; ++c) {
        p.gamma(c * model::sh_band_count) = 1.2 / 0.282095;
    }
    const camera::PerspectiveCamera cam;
    const render::Image image =
        render::rasterize_shaded(model::build_shaded_mesh(b, p), cam, render::Pose{p.R, p.T}, Vector3d(0.6, 0.6, 0.6))
            .image;
    const render::LandmarkSet lm = render::project_landmarks(b, p, cam);
    const EnergyConfig cfg;
    const Residuals r = energy_residuals(b, p, cam, image, lm, cfg);
    REQUIRE(r.photo_rows > 300);
    CHECK(r.landmark_rows == 2 * 66);
    CHECK(r.values.head(r.photo_rows + r.landmark_rows).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(r.prior_energy() == 0.0);
}

TEST_CASE("residual blocks")
{
    const model::FaceBasis& b = desk_basis();
    Rng rng(5);
    const camera::PerspectiveCamera cam;
    const Scene s = make_scene(b, random_truth(b, rng), cam);

    SUBCASE("photo weight zero removes the photo block")
    {
        EnergyConfig cfg;
        cfg.w_photo = 0;
        const Residuals r = energy_residuals(b, s.truth, cam, s.image, s.landmarks, cfg);
        CHECK(r.photo_rows == 0);
        CHECK(r.total() == doctest::Approx(r.landmark_energy() + r.prior_energy()).epsilon(1e-14));
    }
    SUBCASE("unit-sigma prior")
    {
        EnergyConfig cfg;
        ParamVector p = frontal_init(b);
        p.alpha = b.sigma_alpha;
        const Residuals r = energy_residuals(b, p, cam, s.image, s.landmarks, cfg);
        CHECK(r.prior_energy() == doctest::Approx(cfg.w_prior * b.dim_alpha()).epsilon(1e-14));
    }
    SUBCASE("ground truth energy is small apart from the prior")
    {
        EnergyConfig cfg;
        const Residuals r = energy_residuals(b, s.truth, cam, s.image, s.landmarks, cfg);
        CHECK(r.landmark_energy() < 1e-18);
        CHECK(std::sqrt(r.photo_energy() / r.photo_rows) < 0.01);
    }
    SUBCASE("bilinear sampling at pixel centers")
    {
        CHECK(sample_bilinear(s.image, Vector2d(100.5, 80.5)) == s.image.pixel(100, 80));
        const Vector3d mid = sample_bilinear(s.image, Vector2d(101.0, 80.5));
        CHECK((mid - 0.5 * (s.image.pixel(100, 80) + s.image.pixel(101, 80))).norm() < 1e-15);
        CHECK(sample_bilinear(s.image, Vector2d(-5, -5)) == s.image.pixel(0, 0));
    }
    SUBCASE("dimension mismatches are rejected")
    {
        ParamVector bad = s.truth;
        bad.delta = VectorXd::Zero(5);
        CHECK_THROWS(energy_residuals(b, bad, cam, s.image, s.landmarks, EnergyConfig{}));
        render::LandmarkSet short_set = s.landmarks;
        short_set.points.pop_back();
        CHECK_THROWS(energy_residuals(b, s.truth, cam, s.image, short_set, EnergyConfig{}));
    }
}

TEST_CASE("landmark Jacobian against the pinhole derivative")
{
    const model::FaceBasis& b = desk_basis();
    const camera::PerspectiveCamera cam;
    Rng rng(6);
    const Scene s = make_scene(b, random_truth(b, rng), cam);
    EnergyConfig cfg;
    cfg.w_photo = 0;
    cfg.w_prior = 0;
    const MatrixXd J = energy_jacobian(b, s.truth, cam, s.image, s.landmarks, cfg, {}, FreeSet::parse("T"));
    const VectorXd positions = model::assemble_geometry(b, s.truth.alpha, s.truth.delta);
    const Eigen::Matrix3d rot = camera::rotation(s.truth.R);
    const double sw = std::sqrt(cfg.w_lmk);
    int row = 0;
    for (int l = 0; l < 66; ++l) {
        if (!s.landmarks.visible[static_cast<std::size_t>(l)]) {
            continue;
        }
        const Vector3d pc = rot * positions.segment<3>(3 * b.landmark_vertex_ids[static_cast<std::size_t>(l)]) + s.truth.T;
        const double z = pc.z();
        CHECK(J(row, 0) == doctest::Approx(sw * cam.focal / z).epsilon(1e-12));
        CHECK(J(row, 1) == 0.0);
        CHECK(J(row, 2) == doctest::Approx(-sw * cam.focal * pc.x() / (z * z)).epsilon(1e-12));
        CHECK(J(row + 1, 1) == doctest::Approx(sw * cam.focal / z).epsilon(1e-12));
        CHECK(J(row + 1, 2) == doctest::Approx(-sw * cam.focal * pc.y() / (z * z)).epsilon(1e-12));
        row += 2;
    }
    CHECK(row == J.rows());
}

TEST_CASE("full Jacobian against central differences on interior vertices")
{
    const model::FaceBasis& b = desk_basis();
    const camera::PerspectiveCamera cam;
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        Rng rng(seed);
        const Scene s = make_scene(b, random_truth(b, rng), cam);
        // evaluate away from the generating parameters so residuals are not all near zero
        ParamVector at = s.truth;
        at.delta += 0.2 * b.sigma_delta;
        at.R.y() += 1.0 * degree;
        EnergyConfig cfg;
        EnergyConfig interior_cfg = cfg;
        interior_cfg.min_facing = 0.6;
        const std::vector<int> set = photo_vertices(b, at, cam, interior_cfg);
        REQUIRE(set.size() > 150);

        const FreeSet free = FreeSet::all();
        const MatrixXd J = energy_jacobian(b, at, cam, s.image, s.landmarks, cfg, set, free);
        const std::vector<int> idx = free_indices(free, b.dims());
        REQUIRE(J.cols() == static_cast<Eigen::Index>(idx.size()));

        const VectorXd x = at.flatten();
        const VectorXd scale = [&] {
            VectorXd sc = VectorXd::Ones(x.size());
            sc.segment(6, 16) = b.sigma_alpha;
            sc.segment(22, 16) = b.sigma_beta;
            sc.segment(38, 12) = b.sigma_delta;
            sc.segment(3, 3).setConstant(10.0);
            return sc;
        }();
        double worst = 0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const double h = 1e-6 * scale(idx[j]);
            VectorXd xp = x, xm = x;
            xp(idx[j]) += h;
            xm(idx[j]) -= h;
            const VectorXd rp =
                energy_residuals(b, ParamVector::unflatten(xp, b.dims()), cam, s.image, s.landmarks, cfg, set).values;
            const VectorXd rm =
                energy_residuals(b, ParamVector::unflatten(xm, b.dims()), cam, s.image, s.landmarks, cfg, set).values;
            const VectorXd fd = (rp - rm) / (2 * h);
            const double denom = std::max(fd.norm(), 1e-12);
            worst = std::max(worst, (J.col(static_cast<Eigen::Index>(j)) - fd).norm() / denom);
        }
        CHECK(worst < 1e-3);

        // prior rows are constant diagonals scaled by sqrt(w_prior)
        const Eigen::Index o = J.rows() - (16 + 16 + 12);
        for (int k = 0; k < 12; ++k) {
            const Eigen::Index col = 6 + 16 + 16 + k;
            CHECK(J(o + 32 + k, col) == doctest::Approx(std::sqrt(cfg.w_prior) / b.sigma_delta(k)).epsilon(1e-15));
            CHECK(J.col(col).tail(44).cwiseAbs().sum() == doctest::Approx(std::sqrt(cfg.w_prior) / b.sigma_delta(k)));
        }
    }
}

TEST_CASE("fit_frame")
{
    const model::FaceBasis& b = desk_basis();
    const camera::PerspectiveCamera cam;
    const EnergyConfig cfg;

    SUBCASE("ground-truth start is a fixed point")
    {
        model::FaceBasis flat = b;
        flat.a_ref.setConstant(0.5);
        ParamVector p = frontal_init(flat);
        p.gamma.setZero();
        for (int c = 0; c < 3; ++c) {
            p.gamma(c * model::sh_band_count) = 1.2 / 0.282095;
        }
        const render::Image image = render::rasterize_shaded(model::build_shaded_mesh(flat, p), cam,
                                                             render::Pose{p.R, p.T}, Vector3d(0.6, 0.6, 0.6))
                                        .image;
        const FitReport r =
            fit_frame(flat, image, render::project_landmarks(flat, p, cam), cam, p, FreeSet::tracking(), cfg);
        CHECK(r.converged);
        CHECK(r.iterations <= 2);
        CHECK(r.final_energy < 1e-18);
        CHECK(r.params == p);
    }
    SUBCASE("ground-truth start on a shaded scene stays close")
    {
        Rng rng(21);
        const Scene s = make_scene(b, random_truth(b, rng), cam);
        const FitReport r = fit_frame(b, s.image, s.landmarks, cam, s.truth, FreeSet::tracking(), cfg);
        CHECK(r.converged);
        CHECK(geometry_error(b, r.params, s.truth) < 0.01);
        CHECK(energies_decrease(r));
    }
    SUBCASE("expression-only recovery")
    {
        for (std::uint64_t seed = 30; seed < 33; ++seed) {
            Rng rng(seed);
            const Scene s = make_scene(b, random_truth(b, rng), cam);
            ParamVector init = s.truth;
            for (int k = 0; k < b.dim_delta(); ++k) {
                init.delta(k) += (rng.uniform() < 0.5 ? -0.5 : 0.5) * b.sigma_delta(k);
            }
            const FitReport r = fit_frame(b, s.image, s.landmarks, cam, init, FreeSet::parse("delta"), cfg);
            CHECK(geometry_error(b, r.params, s.truth) < 0.5);
            CHECK(energies_decrease(r));
            CHECK(r.params.R == s.truth.R);
        }
    }
    SUBCASE("pose, expression and light recovery")
    {
        for (std::uint64_t seed = 40; seed < 43; ++seed) {
            Rng rng(seed);
            const Scene s = make_scene(b, random_truth(b, rng), cam);
            ParamVector init = s.truth;
            init.delta += 0.5 * b.sigma_delta;
            init.R += Vector3d(2, -2, 2) * degree / std::sqrt(3.0);
            init.T += Vector3d(3, -4, 0);
            init.gamma *= 1.1;
            const FitReport r = fit_frame(b, s.image, s.landmarks, cam, init, FreeSet::tracking(), cfg);
            CHECK(r.converged);
            CHECK(r.photo_rms < 0.01);
            CHECK(geometry_error(b, r.params, s.truth) < 0.5);
            CHECK(energies_decrease(r));
        }
    }
    SUBCASE("prior-only energy is minimized at zero coefficients")
    {
        EnergyConfig prior_only;
        prior_only.w_photo = 0;
        prior_only.w_lmk = 0;
        Rng rng(50);
        const ParamVector start = random_truth(b, rng, 1.0);
        const FitReport r = fit_frame(b, render::Image(256, 256), {}, cam, start, FreeSet::parse("alpha,beta,delta"),
                                      prior_only);
        CHECK(r.params.alpha.cwiseQuotient(b.sigma_alpha).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(r.params.beta.cwiseQuotient(b.sigma_beta).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(r.params.delta.cwiseQuotient(b.sigma_delta).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(energies_decrease(r));
    }
    SUBCASE("image and camera size must agree")
    {
        CHECK_THROWS(fit_frame(b, render::Image(128, 128), {}, cam, frontal_init(b), FreeSet::all(), cfg));
    }
}

TEST_CASE("fit_sequence")
{
    const model::FaceBasis& b = desk_basis();
    const camera::PerspectiveCamera cam;
    const EnergyConfig cfg;

    SUBCASE("identical frames give identical outputs")
    {
        Rng rng(60);
        const Scene s = make_scene(b, random_truth(b, rng), cam);
        const SequenceFit fit = fit_sequence(b, {s.image, s.image, s.image}, {s.landmarks, s.landmarks, s.landmarks},
                                             cam, frontal_init(b), cfg);
        REQUIRE(fit.params.size() == 3);
        for (std::size_t k = 1; k < 3; ++k) {
            CHECK(fit.params[k].alpha == fit.params[0].alpha);
            CHECK(fit.params[k].beta == fit.params[0].beta);
            CHECK(geometry_error(b, fit.params[k], fit.params[0]) < 1e-4);
            CHECK((fit.params[k].R - fit.params[0].R).norm() < 1e-6);
        }
    }
    SUBCASE("smoothly varying expressions are tracked")
    {
        Rng rng(61);
        const ParamVector base = random_truth(b, rng);
        VectorXd phase(b.dim_delta());
        for (int k = 0; k < b.dim_delta(); ++k) {
            phase(k) = 2 * std::numbers::pi * rng.uniform();
        }
        std::vector<render::Image> frames;
        std::vector<render::LandmarkSet> tracks;
        std::vector<ParamVector> truth;
        for (int f = 0; f < 20; ++f) {
            ParamVector p = base;
            for (int k = 0; k < b.dim_delta(); ++k) {
                p.delta(k) = 0.8 * b.sigma_delta(k) * std::sin(0.3 * f + phase(k));
            }
            p.R.y() += 0.01 * std::sin(0.2 * f);
            const Scene s = make_scene(b, p, cam);
            frames.push_back(s.image);
            tracks.push_back(s.landmarks);
            truth.push_back(p);
        }
        const SequenceFit fit = fit_sequence(b, frames, tracks, cam, frontal_init(b), cfg);
        double mean = 0;
        for (int f = 0; f < 20; ++f) {
            mean += geometry_error(b, fit.params[static_cast<std::size_t>(f)], truth[static_cast<std::size_t>(f)]) / 20;
            CHECK(fit.params[static_cast<std::size_t>(f)].alpha == fit.params[0].alpha);
            CHECK(fit.params[static_cast<std::size_t>(f)].beta == fit.params[0].beta);
        }
        CHECK(mean < 0.5);

        const auto path = std::filesystem::temp_directory_path() / "egoface_fit.jsonl";
        write_fit_jsonl(fit, path);
        const std::vector<ParamVector> back = read_params_jsonl(path);
        REQUIRE(back.size() == fit.params.size());
        for (std::size_t k = 0; k < back.size(); ++k) {
            CHECK(back[k] == fit.params[k]);
        }
        std::filesystem::remove(path);
    }
    CHECK_THROWS(fit_sequence(b, {}, {}, cam, frontal_init(b), cfg));
}
