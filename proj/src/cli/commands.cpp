#include "egoface/cli/commands.hpp"

#include "egoface/common/error.hpp"
#include "egoface/common/parallel.hpp"
#include "egoface/eval/eval.hpp"
#include "egoface/render/rasterizer.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace egoface::cli {

namespace fs = std::filesystem;

namespace {

void write_json(const nlohmann::json& j, const fs::path& path)
{
    fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot write " + path.string());
    }
    os << j.dump(2) << "\n";
}

std::string frame_name(int i)
{
    std::ostringstream s;
    s << std::setw(6) << std::setfill('0') << i << ".ppm";
    return s.str();
}

model::FaceBasis load_model(const RunConfig& cfg)
{
    const Layout out{cfg.out};
    if (!fs::exists(out.model() / "basis.json") || !fs::exists(out.model() / "basis.bin")) {
        throw MissingArtifactError("missing face model " + (out.model() / "basis.json").string() +
                                   " (run synth-model first)");
    }
    model::FaceBasis basis = model::load_basis(out.model());
    if (!(basis.dims() == cfg.basis)) {
        throw ConfigError("basis: the model in " + out.model().string() + " has other dimensions than the config");
    }
    return basis;
}

sim::DatasetManifest load_data(const fs::path& dir, const char* command)
{
    try {
        return sim::load_manifest(dir);
    } catch (const MissingArtifactError& e) {
        throw MissingArtifactError(std::string(e.what()) + " (run gen-data before " + command + ")");
    }
}

/// Manifest indices of one sequence in frame order.
std::vector<int> sequence_entries(const sim::DatasetManifest& m, int sequence, int limit)
{
    std::vector<int> idx;
    for (const auto& e : m.entries) {
        if (e.sequence == sequence) {
            idx.push_back(e.index);
        }
    }
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return m.entries[static_cast<std::size_t>(a)].frame < m.entries[static_cast<std::size_t>(b)].frame; });
    if (static_cast<int>(idx.size()) > limit) {
        idx.resize(static_cast<std::size_t>(limit));
    }
    return idx;
}

std::vector<std::string> variant_list(const std::string& variant, const std::string& fallback)
{
    const std::string v = variant.empty() ? fallback : variant;
    if (v == "both") {
        return {"full", "optimized"};
    }
    try {
        return {exp2vreal::to_string(exp2vreal::parse_variant(v))};
    } catch (const ConfigError&) {
        throw ConfigError("--variant: expected full, optimized or both, got \"" + v + "\"");
    }
}

camera::PerspectiveCamera reference_front(const RunConfig& cfg)
{
    camera::PerspectiveCamera c;
    c.focal = cfg.cameras.front_focal;
    return c;
}

std::uint64_t gan_seed(const RunConfig& cfg, exp2vreal::Variant v)
{
    return cfg.seed + (v == exp2vreal::Variant::full ? seeds::gan_full : seeds::gan_optimized);
}

} // namespace

const std::vector<std::string>& command_names()
{
    static const std::vector<std::string> names{"synth-model", "gen-data",  "fit",      "train-ego2exp",
                                                "train-exp2vreal", "reenact", "eval-geo", "eval-mse",
                                                "bench",       "demo"};
    return names;
}

void synth_model(const RunConfig& cfg, std::ostream& log)
{
    const Layout out{cfg.out};
    const model::FaceBasis basis = model::synth_basis(cfg.basis, cfg.seed + seeds::basis);
    model::save_basis(basis, out.model());
    nlohmann::json doc = config_to_json(cfg);
    doc.erase("paths");
    write_json(doc, out.config());
    log << "[synth-model] " << basis.vertex_count << " vertices, " << basis.dim_alpha() << " identity, "
        << basis.dim_beta() << " reflectance, " << basis.dim_delta() << " expression coefficients -> "
        << out.model().string() << "\n";
}

void gen_data(const RunConfig& cfg, std::ostream& log)
{
    const Layout out{cfg.out};
    const model::FaceBasis basis = load_model(cfg);
    const sim::Actor actor = sim::make_actor(basis, cfg.seed + seeds::actor);
    const sim::ExportCameras cams{cfg.cameras.front(), cfg.cameras.ego()};
    const auto& s = cfg.simulator;

    std::vector<sim::PerformanceScript> ego_scripts;
    for (std::size_t k = 0; k < s.ego2exp_scenarios.size(); ++k) {
        ego_scripts.push_back(sim::gen_performance(basis, actor, cfg.seed + seeds::ego2exp_scripts + k,
                                                   s.ego2exp_frames, s.ego2exp_scenarios[k], sim::Motion::free));
    }
    fs::remove_all(out.ego2exp_data());
    const auto ego = sim::export_dataset(sim::DatasetKind::ego2exp, basis, ego_scripts, cams, s.test_ratio,
                                         s.sync_offsets, s.sync, out.ego2exp_data());
    log << "[gen-data] ego2exp: " << ego.entries.size() << " frames, " << ego.indices(true).size() << " held out\n";
    for (const auto& q : ego.sequences) {
        log << "[gen-data]   sequence " << q.id << " scenario " << q.scenario << ": injected offset "
            << q.injected_offset << ", recovered " << q.recovered_offset
            << (q.sync_checked ? (q.sync_verified ? " (verified)" : " (not verified)") : " (too short to check)")
            << "\n";
    }

    std::vector<sim::PerformanceScript> front_scripts;
    for (int k = 0; k < s.exp2vreal_sequences; ++k) {
        front_scripts.push_back(sim::gen_performance(basis, actor, cfg.seed + seeds::exp2vreal_scripts + k,
                                                     s.exp2vreal_frames, s.exp2vreal_scenario, sim::Motion::studio));
    }
    fs::remove_all(out.exp2vreal_data());
    const auto front =
        sim::export_dataset(sim::DatasetKind::exp2vreal, basis, front_scripts, cams, s.test_ratio,
                            std::vector<int>(front_scripts.size(), 0), s.sync, out.exp2vreal_data());
    log << "[gen-data] exp2vreal: " << front.entries.size() << " frames, " << front.indices(true).size()
        << " held out\n";
}

void fit(const RunConfig& cfg, std::ostream& log)
{
    const Layout out{cfg.out};
    const model::FaceBasis basis = load_model(cfg);
    const auto m = load_data(out.ego2exp_data(), "fit");
    const auto params = sim::load_dataset_params(m);
    const auto idx = sequence_entries(m, 0, cfg.recon.fit_frames);
    const auto cam = cfg.cameras.front();
    std::vector<render::Image> frames;
    std::vector<render::LandmarkSet> landmarks;
    for (const int i : idx) {
        frames.push_back(render::read_ppm(m.resolve(m.entries[static_cast<std::size_t>(i)].front)));
        landmarks.push_back(render::project_landmarks(basis, params[static_cast<std::size_t>(i)], cam));
    }
    const auto result = recon::fit_sequence(basis, frames, landmarks, cam, recon::frontal_init(basis), cfg.recon.energy);
    fs::create_directories(out.fit());
    recon::write_fit_jsonl(result, out.fit() / "fit.jsonl");

    nlohmann::json rows = nlohmann::json::array();
    double sum = 0.0;
    for (std::size_t f = 0; f < idx.size(); ++f) {
        const auto& truth = params[static_cast<std::size_t>(idx[f])];
        const auto& est = result.params[f];
        const double err = recon::mean_vertex_distance(model::assemble_geometry(basis, est.alpha, est.delta),
                                                       model::assemble_geometry(basis, truth.alpha, truth.delta));
        sum += err;
        rows.push_back({{"frame", m.entries[static_cast<std::size_t>(idx[f])].frame},
                        {"entry", idx[f]},
                        {"mean_vertex_error_mm", err},
                        {"converged", result.reports[f].converged},
                        {"photo_rms", result.reports[f].photo_rms}});
        log << "[fit] frame " << f << ": mean vertex error " << err << " mm, photo rms "
            << result.reports[f].photo_rms << "\n";
    }
    const double mean = idx.empty() ? 0.0 : sum / static_cast<double>(idx.size());
    write_json({{"frames", rows}, {"mean_vertex_error_mm", mean}}, out.fit() / "report.json");
    log << "[fit] mean vertex error over " << idx.size() << " frames: " << mean << " mm\n";
}

void train_ego2exp(const RunConfig& cfg, std::ostream& log)
{
    const Layout out{cfg.out};
    const model::FaceBasis basis = load_model(cfg);
    const auto m = load_data(out.ego2exp_data(), "train-ego2exp");
    const auto& rc = cfg.ego2exp;
    const auto result = ego2exp::train_regressor(m, basis, cfg.cameras.ego(), rc, cfg.seed + seeds::regressor,
                                                 [&](const ego2exp::CurveRow& r) {
                                                     log << "[train-ego2exp] epoch " << r.epoch << "/" << rc.epochs
                                                         << ": train mse " << r.train_mse << ", val mse "
                                                         << r.val_mse << std::endl;
                                                 });
    fs::create_directories(out.ego2exp());
    ego2exp::save_regressor(result.model, out.regressor());
    ego2exp::write_curve_csv(result.curve, out.ego2exp() / "curve.csv");
    log << "[train-ego2exp] saved " << out.regressor().string() << "\n";
}

void train_exp2vreal(const RunConfig& cfg, const std::string& variant, std::ostream& log)
{
    const Layout out{cfg.out};
    const auto m = load_data(out.exp2vreal_data(), "train-exp2vreal");
    for (const auto& name : variant_list(variant, "both")) {
        exp2vreal::GanConfig gc = cfg.exp2vreal;
        gc.variant = exp2vreal::parse_variant(name);
        const auto data = exp2vreal::load_frames(m, gc.image_size());
        log << "[train-exp2vreal] " << name << ": " << data.train.size() << " training frames at " << data.size
            << " px" << std::endl;
        const auto result = exp2vreal::train_cgan(data, gc, gan_seed(cfg, gc.variant), [&](const exp2vreal::GanCurveRow& r) {
            log << "[train-exp2vreal] " << name << " epoch " << r.epoch << "/" << gc.epochs << ": l1 " << r.l1
                << ", g_adv " << r.g_adv << ", d_loss " << r.d_loss << std::endl;
        });
        fs::create_directories(out.exp2vreal());
        exp2vreal::save_gan(result.gan, out.exp2vreal(), name);
        exp2vreal::write_gan_curve_csv(result.curve, out.exp2vreal() / (name + "_curve.csv"));
    }
}

void reenact(const RunConfig& cfg, const std::string& variant, std::ostream& log)
{
    const auto names = variant_list(variant, cfg.eval.reenact_variant);
    if (names.size() != 1) {
        throw ConfigError("--variant: reenact takes full or optimized");
    }
    const Layout out{cfg.out};
    const exp2vreal::Gan gan = exp2vreal::load_gan(out.exp2vreal(), names[0]);
    const ego2exp::Regressor reg = ego2exp::load_regressor(out.regressor());
    const model::FaceBasis basis = load_model(cfg);
    const auto ego = load_data(out.ego2exp_data(), "reenact");
    const auto front = load_data(out.exp2vreal_data(), "reenact");
    const model::ParamVector base = sim::load_dataset_params(front).front();
    const auto idx = sequence_entries(ego, 0, cfg.eval.reenact_frames);
    const int size = gan.cfg.image_size();
    const auto cam = cfg.cameras.front();

    const fs::path dir = out.reenact(names[0]);
    fs::remove_all(dir);
    fs::create_directories(dir / "albedo");
    fs::create_directories(dir / "frames");
    std::ofstream csv(dir / "expressions.csv");
    csv << "frame,pose";
    for (int k = 0; k < basis.dim_delta(); ++k) {
        csv << ",delta" << k;
    }
    csv << "\n" << std::setprecision(17);

    std::vector<render::Image> albedo;
    for (std::size_t t = 0; t < idx.size(); ++t) {
        const auto image = render::read_ppm(ego.resolve(ego.entries[static_cast<std::size_t>(idx[t])].ego));
        const Eigen::VectorXd delta = ego2exp::predict_expressions(reg, image);
        const auto pose = exp2vreal::select_pose(cfg.pose, static_cast<int>(t));
        const auto params = exp2vreal::drive_params(base, delta, pose);
        const auto full = sim::render_albedo_frame(basis, params, cam);
        albedo.push_back(full.width() == size ? full : render::resize_area(full, size, size));
        render::write_ppm(albedo.back(), dir / "albedo" / frame_name(static_cast<int>(t)));
        const auto chosen = std::find(cfg.pose.poses.begin(), cfg.pose.poses.end(), pose) - cfg.pose.poses.begin();
        csv << t << "," << chosen;
        for (int k = 0; k < delta.size(); ++k) {
            csv << "," << delta(k);
        }
        csv << "\n";
    }
    const int n = static_cast<int>(albedo.size());
    const int half = gan.cfg.window / 2;
    for (int t = 0; t < n; ++t) {
        std::vector<render::Image> window;
        for (int k = t - half; k <= t + half; ++k) {
            window.push_back(albedo[static_cast<std::size_t>(std::clamp(k, 0, n - 1))]);
        }
        render::write_ppm(exp2vreal::translate(gan, window), dir / "frames" / frame_name(t));
    }
    log << "[reenact] " << n << " frames with the " << names[0] << " translator -> " << (dir / "frames").string()
        << "\n";
}

void eval_geo(const RunConfig& cfg, std::ostream& log)
{
    const Layout out{cfg.out};
    const ego2exp::Regressor reg = ego2exp::load_regressor(out.regressor());
    const model::FaceBasis basis = load_model(cfg);
    const auto m = load_data(out.ego2exp_data(), "eval-geo");
    const auto params = sim::load_dataset_params(m);

    fs::create_directories(out.eval());
    std::vector<Eigen::VectorXd> predicted;
    const auto geo = eval::eval_ego2exp_geometry(basis, m, [&](const render::Image& ego) {
        predicted.push_back(ego2exp::predict_expressions(reg, ego));
        return predicted.back();
    });
    const auto baseline_predictor = eval::mean_predictor(m);
    const auto baseline = eval::eval_ego2exp_geometry(basis, m, baseline_predictor);
    const Eigen::VectorXd mean_delta = baseline_predictor(render::Image{});

    std::vector<Eigen::VectorXd> truth, mean_pred;
    int better = 0;
    for (std::size_t f = 0; f < geo.entries.size(); ++f) {
        truth.push_back(params[static_cast<std::size_t>(geo.entries[f])].delta);
        mean_pred.push_back(mean_delta);
        better += geo.frames[f].mean < baseline.frames[f].mean;
    }
    const double mse = ego2exp::expression_mse(predicted, truth);
    const double mse_baseline = ego2exp::expression_mse(mean_pred, truth);
    const double fraction = geo.frames.empty() ? 0.0 : static_cast<double>(better) / static_cast<double>(geo.frames.size());

    write_json(eval::geo_stats_to_json(geo), out.eval() / "geo_regressor.json");
    eval::write_geo_stats_csv(geo, out.eval() / "geo_regressor.csv");
    write_json(eval::geo_stats_to_json(baseline), out.eval() / "geo_mean.json");
    write_json({{"test_frames", geo.entries.size()},
                {"expression_mse", mse},
                {"expression_mse_mean_baseline", mse_baseline},
                {"geometry_mean_mm", geo.average.mean},
                {"geometry_mean_mm_mean_baseline", baseline.average.mean},
                {"frames_better_than_baseline", fraction},
                {"beats_baseline", mse < mse_baseline && geo.average.mean < baseline.average.mean}},
               out.eval() / "ego2exp_summary.json");
    log << "[eval-geo] " << geo.entries.size() << " held-out frames\n"
        << "[eval-geo] expression mse " << mse << " (mean baseline " << mse_baseline << ")\n"
        << "[eval-geo] per-vertex error min/mean/max " << geo.average.min << " / " << geo.average.mean << " / "
        << geo.average.max << " mm (mean baseline mean " << baseline.average.mean << " mm)\n"
        << "[eval-geo] frames better than the baseline: " << fraction * 100.0 << " %\n";
}

void eval_mse(const RunConfig& cfg, const std::string& variant, std::ostream& log)
{
    const Layout out{cfg.out};
    const auto m = load_data(out.exp2vreal_data(), "eval-mse");
    const auto truth = exp2vreal::load_frames(m, cfg.exp2vreal.optimized_size);
    fs::create_directories(out.eval());
    nlohmann::json means = nlohmann::json::object();
    std::vector<double> values;
    for (const auto& name : variant_list(variant, "both")) {
        const exp2vreal::Gan gan = exp2vreal::load_gan(out.exp2vreal(), name);
        const int size = gan.cfg.image_size();
        const auto r = size == truth.size ? eval::self_reenactment_mse(gan, truth, truth)
                                          : eval::self_reenactment_mse(gan, exp2vreal::load_frames(m, size), truth);
        eval::write_reenactment_csv(r, out.eval() / ("reenact_" + name + ".csv"));
        means[name] = r.mean;
        values.push_back(r.mean);
        log << "[eval-mse] " << name << ": held-out mse " << r.mean << " over " << r.entries.size()
            << " frames at " << r.size << " px\n";
    }
    nlohmann::json doc{{"size", truth.size}, {"mean_mse", means}};
    if (values.size() == 2) {
        const double ratio = std::max(values[0], values[1]) / std::min(values[0], values[1]);
        doc["ratio"] = ratio;
        log << "[eval-mse] larger / smaller mean mse: " << ratio << "\n";
    }
    write_json(doc, out.eval() / "reenactment.json");
}

void bench(const RunConfig& cfg, const std::string& components, std::ostream& log)
{
    if (!std::getenv("EGOFACE_THREADS")) {
        setenv("EGOFACE_THREADS", "1", 0);
    }
    const Layout out{cfg.out};
    const auto selected = eval::parse_components(components.empty() ? cfg.eval.bench_components : components);
    const model::FaceBasis basis = load_model(cfg);
    const auto m = load_data(out.ego2exp_data(), "bench");
    const auto params = sim::load_dataset_params(m);

    eval::BenchSetup setup;
    setup.basis = &basis;
    setup.front_cam = reference_front(cfg);
    const std::size_t frames = std::min<std::size_t>(static_cast<std::size_t>(cfg.eval.bench_frames), m.entries.size());
    for (std::size_t i = 0; i < frames; ++i) {
        setup.ego_frames.push_back(render::read_ppm(m.resolve(m.entries[i].ego)));
        setup.params.push_back(params[i]);
    }

    static const std::map<std::string, std::string> presets{
        {"alexnet-analog", "tiny"}, {"resnet-analog", "small"}, {"vgg-analog", "large"}};
    std::map<std::string, ego2exp::Regressor> regressors;
    std::map<std::string, exp2vreal::Gan> translators;
    for (const auto& id : selected) {
        if (presets.count(id)) {
            ego2exp::RegressorConfig rc = cfg.ego2exp;
            rc.preset = presets.at(id);
            bool trained = false;
            if (fs::exists(out.regressor() / "regressor.egfw")) {
                auto reg = ego2exp::load_regressor(out.regressor());
                if (reg.cfg.preset == rc.preset) {
                    regressors.emplace(id, std::move(reg));
                    trained = true;
                }
            }
            if (!trained) {
                regressors.emplace(id, ego2exp::build_regressor(rc, cfg.seed + seeds::bench));
            }
            log << "[bench] " << id << ": " << (trained ? "trained" : "untrained") << " " << rc.preset
                << " regressor\n";
        } else if (id == "full" || id == "optimized") {
            bool trained = true;
            try {
                translators.emplace(id, exp2vreal::load_gan(out.exp2vreal(), id));
            } catch (const MissingArtifactError&) {
                exp2vreal::GanConfig gc = cfg.exp2vreal;
                gc.variant = exp2vreal::parse_variant(id);
                translators.emplace(id, exp2vreal::build_gan(gc, cfg.seed + seeds::bench));
                trained = false;
            }
            log << "[bench] " << id << ": " << (trained ? "trained" : "untrained") << " translator\n";
        }
    }
    for (const auto& [id, reg] : regressors) {
        setup.regressors[id] = &reg;
    }
    for (const auto& [id, gan] : translators) {
        setup.translators[id] = &gan;
    }

    log << "[bench] " << frames << " frames, " << cfg.eval.bench_repetitions << " passes, " << worker_threads()
        << " worker thread(s)" << std::endl;
    const auto report = eval::timing_bench(setup, selected, cfg.eval.bench_repetitions);
    const std::string table = eval::format_timing_table(report);
    fs::create_directories(out.bench());
    eval::write_timing_csv(report, out.bench() / "timing.csv");
    std::ofstream(out.bench() / "timing.txt") << table;
    log << table;
    if (!report.translator_ordering_holds()) {
        throw std::runtime_error("bench: the optimized translator was not faster than the full translator");
    }
}

void demo(const RunConfig& cfg, std::ostream& log)
{
    synth_model(cfg, log);
    gen_data(cfg, log);
    fit(cfg, log);
    train_ego2exp(cfg, log);
    train_exp2vreal(cfg, "both", log);
    reenact(cfg, cfg.eval.reenact_variant, log);
    eval_geo(cfg, log);
    eval_mse(cfg, "both", log);
    bench(cfg, cfg.eval.bench_components, log);
}

void run(const std::string& command, const RunConfig& cfg, const CommandOptions& options, std::ostream& log)
{
    if (command == "synth-model") {
        synth_model(cfg, log);
    } else if (command == "gen-data") {
        gen_data(cfg, log);
    } else if (command == "fit") {
        fit(cfg, log);
    } else if (command == "train-ego2exp") {
        train_ego2exp(cfg, log);
    } else if (command == "train-exp2vreal") {
        train_exp2vreal(cfg, options.variant, log);
    } else if (command == "reenact") {
        reenact(cfg, options.variant, log);
    } else if (command == "eval-geo") {
        eval_geo(cfg, log);
    } else if (command == "eval-mse") {
        eval_mse(cfg, options.variant, log);
    } else if (command == "bench") {
        bench(cfg, options.components, log);
    } else if (command == "demo") {
        demo(cfg, log);
    } else {
        throw ConfigError("unknown command \"" + command + "\"");
    }
}

int exit_code(const std::exception_ptr& error)
{
    if (!error) {
        return 0;
    }
    try {
        std::rethrow_exception(error);
    } catch (const ConfigError&) {
        return 2;
    } catch (const MissingArtifactError&) {
        return 3;
    } catch (const NumericError&) {
        return 4;
    } catch (...) {
        return 1;
    }
}

} // namespace egoface::cli
