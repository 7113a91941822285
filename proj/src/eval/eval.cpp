#include "egoface/eval/eval.hpp"

#include "egoface/common/error.hpp"
#include "egoface/common/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace egoface::eval {

namespace {

std::ofstream open_output(const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot write " + path.string());
    }
    os.precision(9);
    return os;
}

nlohmann::json stats_json(const VertexErrorStats& s)
{
    return {{"min", s.min}, {"max", s.max}, {"mean", s.mean}};
}

} // namespace

VertexErrorStats pervertex_distance(const VectorXd& a, const VectorXd& b)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("vertex counts differ: " + std::to_string(a.size() / 3) + " vs " +
                                    std::to_string(b.size() / 3));
    }
    if (a.size() == 0 || a.size() % 3 != 0) {
        throw std::invalid_argument("positions must hold a positive multiple of 3 values");
    }
    const Eigen::Index n = a.size() / 3;
    VertexErrorStats s;
    s.min = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = (a.segment<3>(3 * i) - b.segment<3>(3 * i)).norm();
        s.min = std::min(s.min, d);
        s.max = std::max(s.max, d);
        sum += d;
    }
    s.mean = sum / static_cast<double>(n);
    return s;
}

GeoErrorStats geometry_error(const model::FaceBasis& basis, const std::vector<VectorXd>& alphas,
                             const std::vector<VectorXd>& predicted, const std::vector<VectorXd>& truth)
{
    if (alphas.size() != predicted.size() || alphas.size() != truth.size()) {
        throw std::invalid_argument("geometry error needs one identity, prediction and truth per frame");
    }
    GeoErrorStats g;
    g.frames.resize(alphas.size());
    parallel_for(alphas.size(), [&](std::size_t f) {
        g.frames[f] = pervertex_distance(model::assemble_geometry(basis, alphas[f], predicted[f]),
                                         model::assemble_geometry(basis, alphas[f], truth[f]));
    });
    for (const auto& s : g.frames) {
        g.average.min += s.min;
        g.average.max += s.max;
        g.average.mean += s.mean;
    }
    if (!g.frames.empty()) {
        const double n = static_cast<double>(g.frames.size());
        g.average = {g.average.min / n, g.average.max / n, g.average.mean / n};
    }
    return g;
}

GeoErrorStats eval_ego2exp_geometry(const model::FaceBasis& basis, const sim::DatasetManifest& manifest,
                                    const ExpressionPredictor& predictor)
{
    const auto params = sim::load_dataset_params(manifest);
    const auto test = manifest.indices(true);
    std::vector<VectorXd> alphas, predicted, truth;
    for (const int i : test) {
        const auto& p = params[static_cast<std::size_t>(i)];
        alphas.push_back(p.alpha);
        truth.push_back(p.delta);
        predicted.push_back(predictor(render::read_ppm(manifest.resolve(manifest.entries[static_cast<std::size_t>(i)].ego))));
    }
    GeoErrorStats g = geometry_error(basis, alphas, predicted, truth);
    g.entries = test;
    return g;
}

GeoErrorStats eval_ego2exp_geometry(const model::FaceBasis& basis, const ego2exp::Regressor& regressor,
                                    const sim::DatasetManifest& manifest)
{
    return eval_ego2exp_geometry(basis, manifest,
                                 [&](const render::Image& ego) { return ego2exp::predict_expressions(regressor, ego); });
}

ExpressionPredictor mean_predictor(const sim::DatasetManifest& manifest)
{
    const auto params = sim::load_dataset_params(manifest);
    const auto train = manifest.indices(false);
    if (train.empty()) {
        throw std::invalid_argument("mean predictor needs training frames");
    }
    VectorXd mean = VectorXd::Zero(params.front().delta.size());
    for (const int i : train) {
        mean += params[static_cast<std::size_t>(i)].delta;
    }
    mean /= static_cast<double>(train.size());
    return [mean](const render::Image&) { return mean; };
}

nlohmann::json geo_stats_to_json(const GeoErrorStats& stats)
{
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t f = 0; f < stats.frames.size(); ++f) {
        nlohmann::json row = stats_json(stats.frames[f]);
        if (f < stats.entries.size()) {
            row["entry"] = stats.entries[f];
        }
        frames.push_back(row);
    }
    return {{"unit", "mm"}, {"frame_count", stats.frames.size()}, {"average", stats_json(stats.average)},
            {"frames", frames}};
}

void write_geo_stats_csv(const GeoErrorStats& stats, const std::filesystem::path& path)
{
    auto os = open_output(path);
    os << "entry,min_mm,max_mm,mean_mm\n";
    for (std::size_t f = 0; f < stats.frames.size(); ++f) {
        os << (f < stats.entries.size() ? stats.entries[f] : static_cast<int>(f)) << ',' << stats.frames[f].min << ','
           << stats.frames[f].max << ',' << stats.frames[f].mean << '\n';
    }
}

double image_mse(const render::Image& a, const render::Image& b)
{
    if (a.width() != b.width() || a.height() != b.height()) {
        throw std::invalid_argument("images of different sizes: " + std::to_string(a.width()) + "x" +
                                    std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                                    std::to_string(b.height()));
    }
    double sum = 0.0;
    for (int y = 0; y < a.height(); ++y) {
        for (int x = 0; x < a.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                const double d = a.at(x, y, c) - b.at(x, y, c);
                sum += d * d;
            }
        }
    }
    return sum / (3.0 * static_cast<double>(a.pixel_count()));
}

ReenactmentMse self_reenactment_mse(const FrameGenerator& generator, const exp2vreal::FrameSet& truth)
{
    ReenactmentMse r;
    r.size = truth.size;
    r.entries = truth.test;
    r.per_frame.resize(r.entries.size());
    parallel_for(r.entries.size(), [&](std::size_t k) {
        const int i = r.entries[k];
        render::Image out = generator(i);
        if (out.width() > truth.size || out.height() > truth.size) {
            out = render::resize_area(out, truth.size, truth.size);
        }
        r.per_frame[k] = image_mse(out, exp2vreal::tensor_to_image(exp2vreal::front_target(truth, i)));
    });
    for (const double v : r.per_frame) {
        r.mean += v;
    }
    if (!r.per_frame.empty()) {
        r.mean /= static_cast<double>(r.per_frame.size());
    }
    return r;
}

ReenactmentMse self_reenactment_mse(const exp2vreal::Gan& gan, const exp2vreal::FrameSet& inputs,
                                    const exp2vreal::FrameSet& truth)
{
    if (inputs.entries() != truth.entries() || inputs.test != truth.test) {
        throw std::invalid_argument("reenactment inputs and truth must come from the same dataset");
    }
    if (inputs.size != gan.cfg.image_size()) {
        throw std::invalid_argument("reenactment inputs of size " + std::to_string(inputs.size) +
                                    " do not match the generator size " + std::to_string(gan.cfg.image_size()));
    }
    return self_reenactment_mse(
        [&](int i) { return exp2vreal::translate_tensor(gan, exp2vreal::window_input(inputs, i, gan.cfg.window)); },
        truth);
}

void write_reenactment_csv(const ReenactmentMse& mse, const std::filesystem::path& path)
{
    auto os = open_output(path);
    os << "entry,mse\n";
    for (std::size_t k = 0; k < mse.entries.size(); ++k) {
        os << mse.entries[k] << ',' << mse.per_frame[k] << '\n';
    }
}

const std::vector<ComponentInfo>& timing_components()
{
    static const std::vector<ComponentInfo> table = {
        {"vgg-analog", "Ego2Exp", "VGG analog (large)", 26.4},
        {"resnet-analog", "Ego2Exp", "ResNet50 analog (small)", 11.5},
        {"alexnet-analog", "Ego2Exp", "AlexNet analog (tiny)", 5.5},
        {"albedo", "Synthetic rendering", "Albedo only", 3.3},
        {"full", "Exp2VRealFace", "Full", 39.4},
        {"optimized", "Exp2VRealFace", "Optimized", 21.4}};
    return table;
}

const ComponentInfo& component_info(const std::string& id)
{
    for (const auto& c : timing_components()) {
        if (c.id == id) {
            return c;
        }
    }
    throw ConfigError("--components: unknown component '" + id +
                      "' (vgg-analog, resnet-analog, alexnet-analog, albedo, full, optimized)");
}

std::vector<std::string> parse_components(const std::string& list)
{
    std::vector<std::string> out;
    std::set<std::string> seen;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        component_info(item);
        if (!seen.insert(item).second) {
            throw ConfigError("--components: '" + item + "' listed twice");
        }
        out.push_back(item);
    }
    if (out.empty()) {
        throw ConfigError("--components: empty selection");
    }
    return out;
}

const TimingRow* TimingReport::row(const std::string& id) const
{
    for (const auto& r : rows) {
        if (r.component.id == id) {
            return &r;
        }
    }
    return nullptr;
}

bool TimingReport::translator_ordering_holds() const
{
    const TimingRow* full = row("full");
    const TimingRow* opt = row("optimized");
    return !full || !opt || opt->mean_ms < full->mean_ms;
}

TimingReport timing_bench(const BenchSetup& setup, const std::vector<std::string>& components, int repetitions)
{
    using clock = std::chrono::steady_clock;
    if (repetitions < 1) {
        throw std::invalid_argument("timing needs at least one repetition");
    }
    if (!setup.basis) {
        throw std::invalid_argument("timing needs a face basis");
    }
    if (setup.params.empty() || setup.ego_frames.size() != setup.params.size()) {
        throw std::invalid_argument("timing needs one ego frame and one parameter vector per frame");
    }
    std::set<std::string> selected(components.begin(), components.end());
    TimingReport report;
    report.frames = static_cast<int>(setup.params.size());
    report.repetitions = repetitions;
    for (const auto& info : timing_components()) {
        if (!selected.count(info.id)) {
            continue;
        }
        if (info.group == "Ego2Exp" && !setup.regressors.count(info.id)) {
            throw std::invalid_argument("no regressor provided for " + info.id);
        }
        if (info.group == "Exp2VRealFace" && !setup.translators.count(info.id)) {
            throw std::invalid_argument("no translator provided for " + info.id);
        }
        report.rows.push_back({info, {}, 0.0});
    }
    for (const auto& id : components) {
        component_info(id);
    }

    // Albedo windows at each translator's resolution, prepared outside the timed region.
    std::map<std::string, std::vector<render::Image>> albedo;
    for (const auto& [id, gan] : setup.translators) {
        if (!selected.count(id)) {
            continue;
        }
        const auto cam = setup.front_cam.scaled(gan->cfg.image_size() / (2.0 * setup.front_cam.cx));
        auto& frames = albedo[id];
        frames.resize(setup.params.size());
        parallel_for(frames.size(), [&](std::size_t f) {
            frames[f] = sim::render_albedo_frame(*setup.basis, setup.params[f], cam);
        });
    }
    const auto albedo_cam = setup.front_cam;
    const int n = report.frames;

    volatile double sink = 0.0;
    for (int rep = 0; rep < repetitions; ++rep) {
        std::vector<double> total(report.rows.size(), 0.0);
        for (int f = 0; f < n; ++f) {
            for (std::size_t r = 0; r < report.rows.size(); ++r) {
                const auto& info = report.rows[r].component;
                const auto t0 = clock::now();
                if (info.group == "Ego2Exp") {
                    const VectorXd d = ego2exp::predict_expressions(*setup.regressors.at(info.id),
                                                                    setup.ego_frames[static_cast<std::size_t>(f)]);
                    sink = sink + d(0);
                } else if (info.group == "Synthetic rendering") {
                    const auto img = sim::render_albedo_frame(*setup.basis, setup.params[static_cast<std::size_t>(f)],
                                                              albedo_cam);
                    sink = sink + img.at(0, 0, 0);
                } else {
                    const exp2vreal::Gan& gan = *setup.translators.at(info.id);
                    const auto& frames = albedo.at(info.id);
                    std::vector<render::Image> window;
                    for (int o = -(gan.cfg.window / 2); o <= gan.cfg.window / 2; ++o) {
                        window.push_back(frames[static_cast<std::size_t>(std::clamp(f + o, 0, n - 1))]);
                    }
                    const auto img = exp2vreal::translate(gan, window);
                    sink = sink + img.at(0, 0, 0);
                }
                total[r] += std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            }
        }
        for (std::size_t r = 0; r < report.rows.size(); ++r) {
            report.rows[r].repetition_ms.push_back(total[r] / n);
        }
    }
    for (auto& r : report.rows) {
        for (const double v : r.repetition_ms) {
            r.mean_ms += v;
        }
        r.mean_ms /= static_cast<double>(repetitions);
        report.end_to_end_ms += r.mean_ms;
    }
    if (selected == std::set<std::string>{"resnet-analog", "albedo", "optimized"}) {
        report.reference_end_to_end_ms = 36.2;
    } else if (selected == std::set<std::string>{"alexnet-analog", "albedo", "optimized"}) {
        report.reference_end_to_end_ms = 30.2;
    }
    return report;
}

std::string format_timing_table(const TimingReport& report)
{
    std::ostringstream os;
    os << "Processing times, " << report.frames << " frames x " << report.repetitions << " passes (ms per frame)\n";
    os << std::left << std::setw(22) << "Component" << std::setw(26) << "Variant" << std::right << std::setw(10)
       << "Time" << std::setw(14) << "Reference" << '\n';
    os << std::fixed << std::setprecision(2);
    for (const auto& r : report.rows) {
        os << std::left << std::setw(22) << r.component.group << std::setw(26) << r.component.label << std::right
           << std::setw(10) << r.mean_ms << std::setw(14) << r.component.reference_ms << '\n';
    }
    os << std::left << std::setw(48) << "End-to-end (sum)" << std::right << std::setw(10) << report.end_to_end_ms;
    if (report.reference_end_to_end_ms > 0) {
        os << std::setw(14) << report.reference_end_to_end_ms;
    }
    os << "\nReference column: published GPU timings, shown for orientation only.\n";
    if (report.row("full") && report.row("optimized")) {
        os << "Optimized translator faster than full: " << (report.translator_ordering_holds() ? "yes" : "NO") << '\n';
    }
    return os.str();
}

void write_timing_csv(const TimingReport& report, const std::filesystem::path& path)
{
    auto os = open_output(path);
    os << "component,group,label,mean_ms,";
    for (int r = 0; r < report.repetitions; ++r) {
        os << "pass" << r + 1 << "_ms,";
    }
    os << "reference_ms\n";
    for (const auto& row : report.rows) {
        os << row.component.id << ',' << row.component.group << ',' << row.component.label << ',' << row.mean_ms << ',';
        for (const double v : row.repetition_ms) {
            os << v << ',';
        }
        os << row.component.reference_ms << '\n';
    }
    os << "end_to_end,,sum," << report.end_to_end_ms << ',';
    for (int r = 0; r < report.repetitions; ++r) {
        double s = 0.0;
        for (const auto& row : report.rows) {
            s += row.repetition_ms[static_cast<std::size_t>(r)];
        }
        os << s << ',';
    }
    os << report.reference_end_to_end_ms << '\n';
}

} // namespace egoface::eval
