#include "egoface/sim/capture.hpp"

#include "egoface/common/error.hpp"
#include "egoface/common/parallel.hpp"
#include "egoface/common/rng.hpp"
#include "egoface/model/param_io.hpp"
#include "egoface/render/rasterizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace egoface::sim {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;
constexpr double deg = std::numbers::pi / 180.0;

struct Sinusoid
{
    double amplitude = 0.0;
    double frequency = 0.0; // Hz
    double phase = 0.0;

    double at(double t) const { return amplitude * std::sin(two_pi * frequency * t + phase); }
};

/// Three sinusoids whose amplitudes sum to `bound`.
std::array<Sinusoid, 3> smooth_process(Rng& rng, double bound, double f_lo, double f_hi)
{
    std::array<Sinusoid, 3> s;
    double total = 0.0;
    for (auto& w : s) {
        w.amplitude = rng.uniform(0.3, 1.0);
        w.frequency = rng.uniform(f_lo, f_hi);
        w.phase = rng.uniform(0.0, two_pi);
        total += w.amplitude;
    }
    for (auto& w : s) {
        w.amplitude *= bound / total;
    }
    return s;
}

double evaluate(const std::array<Sinusoid, 3>& s, double t)
{
    return s[0].at(t) + s[1].at(t) + s[2].at(t);
}

// Raised cosine over [start, start + length], 1 at the midpoint.
double bump(int frame, int start, int length)
{
    if (frame < start || frame > start + length) {
        return 0.0;
    }
    return 0.5 * (1.0 - std::cos(two_pi * (frame - start) / length));
}

struct EventTemplate
{
    std::vector<int> active;   // coefficients driven by the event
    std::vector<int> silenced; // coefficients held near zero during the event
};

std::vector<EventTemplate> event_cycle(const model::FaceBasis& basis)
{
    const int d = basis.dim_delta();
    const auto partner = [&](int k) { return basis.expression_partner[static_cast<std::size_t>(k)]; };
    std::vector<EventTemplate> cycle;
    auto one_sided = [&](int k) {
        if (k < d && partner(k) != k) {
            cycle.push_back({{k}, {partner(k)}});
        }
    };
    auto both = [&](int k) {
        if (k < d) {
            cycle.push_back({partner(k) == k ? std::vector<int>{k} : std::vector<int>{k, partner(k)}, {}});
        }
    };
    both(0);                            // jaw open
    one_sided(asymmetric_left_coefficient); // left smile only
    both(2);                            // smile
    one_sided(3);                       // right smile only
    both(1);                            // pucker
    both(4);                            // brow raise
    one_sided(8);                       // wink
    both(10);                           // frown
    one_sided(6);                       // one cheek puffed
    if (cycle.empty()) {
        for (int k = 0; k < d; ++k) {
            cycle.push_back({{k}, {}});
        }
    }
    return cycle;
}

VectorXd perturbed_gamma(const VectorXd& base, double t, const std::array<std::array<Sinusoid, 3>, 4>& drift)
{
    VectorXd g = base;
    for (int c = 0; c < 3; ++c) {
        const double gain = 1.0 + evaluate(drift[static_cast<std::size_t>(c)], t);
        for (int b = 0; b < model::sh_band_count; ++b) {
            g(c * model::sh_band_count + b) *= gain;
        }
        g(c * model::sh_band_count + 3) += evaluate(drift[3], t); // light swinging sideways
    }
    return g;
}

std::string frame_name(int frame)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d.ppm", frame);
    return buf;
}

std::string sequence_name(int sequence)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "seq%02d", sequence);
    return buf;
}

int period_frames(double period_s, double frame_rate)
{
    return static_cast<int>(std::lround(period_s * frame_rate));
}

} // namespace

int scenario_count()
{
    return 4;
}

Scenario scenario(int id)
{
    if (id < 0 || id >= scenario_count()) {
        throw std::out_of_range("unknown scenario " + std::to_string(id));
    }
    Scenario s;
    s.id = id;
    s.gamma = model::default_gamma();
    const auto add = [&](int band, const Vector3d& rgb) {
        for (int c = 0; c < 3; ++c) {
            s.gamma(c * model::sh_band_count + band) += rgb(c);
        }
    };
    const auto tint = [&](const Vector3d& rgb) {
        for (int c = 0; c < 3; ++c) {
            s.gamma.segment(c * model::sh_band_count, model::sh_band_count) *= rgb(c);
        }
    };
    switch (id) {
    case 0: // neutral room
        s.background = {0.35, 0.38, 0.42};
        break;
    case 1: // warm lamp from the subject's right
        s.background = {0.55, 0.47, 0.36};
        tint({1.08, 1.0, 0.88});
        add(3, {-0.25, -0.22, -0.18});
        break;
    case 2: // dim room lit from above
        s.background = {0.12, 0.13, 0.17};
        tint({0.92, 0.94, 1.0});
        add(1, {-0.2, -0.2, -0.22});
        break;
    default: // office with a window to the subject's left
        s.background = {0.32, 0.42, 0.30};
        tint({0.95, 1.02, 1.0});
        add(3, {0.22, 0.24, 0.25});
        break;
    }
    return s;
}

Actor make_actor(const model::FaceBasis& basis, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, 0xac7));
    const auto draw = [&](const VectorXd& sigma) {
        VectorXd v(sigma.size());
        for (Eigen::Index k = 0; k < sigma.size(); ++k) {
            v(k) = std::clamp(0.7 * sigma(k) * rng.normal(), -2.0 * sigma(k), 2.0 * sigma(k));
        }
        return v;
    };
    Actor a;
    a.alpha = draw(basis.sigma_alpha);
    a.beta = draw(basis.sigma_beta);
    return a;
}

void PerformanceScript::validate() const
{
    if (!(frame_rate > 0)) {
        throw std::invalid_argument("performance frame rate must be positive");
    }
    const std::size_t n = delta.size();
    if (n == 0 || R.size() != n || T.size() != n || gamma.size() != n) {
        throw std::invalid_argument("performance trajectories must be non-empty and of equal length");
    }
}

model::ParamVector PerformanceScript::params(int frame) const
{
    if (frame < 0 || frame >= frame_count()) {
        throw std::out_of_range("frame " + std::to_string(frame) + " outside script of " +
                                std::to_string(frame_count()) + " frames");
    }
    const auto f = static_cast<std::size_t>(frame);
    model::ParamVector p;
    p.R = R[f];
    p.T = T[f];
    p.alpha = alpha;
    p.beta = beta;
    p.delta = delta[f];
    p.gamma = gamma[f];
    return p;
}

PerformanceScript gen_performance(const model::FaceBasis& basis, const Actor& actor, std::uint64_t seed, int frames,
                                  int scenario_id, Motion motion)
{
    if (frames < 1) {
        throw std::invalid_argument("a performance needs at least one frame");
    }
    if (actor.alpha.size() != basis.dim_alpha() || actor.beta.size() != basis.dim_beta()) {
        throw std::invalid_argument("actor coefficients do not match the basis");
    }
    const Scenario env = scenario(scenario_id);
    const int d = basis.dim_delta();
    Rng rng(derive_seed(seed, 0x5c81));

    PerformanceScript s;
    s.scenario = scenario_id;
    s.motion = motion;
    s.alpha = actor.alpha;
    s.beta = actor.beta;
    s.background = env.background;

    std::vector<std::array<Sinusoid, 3>> base(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) {
        base[static_cast<std::size_t>(k)] = smooth_process(rng, 0.35 * basis.sigma_delta(k), 0.05, 0.4);
    }

    struct Event
    {
        int start, length;
        double amplitude;
        const EventTemplate* shape;
    };
    const auto cycle = event_cycle(basis);
    std::vector<Event> events;
    int next = static_cast<int>(rng.uniform(8.0, 20.0));
    for (std::size_t e = 0; next < frames; ++e) {
        const int length = 2 * static_cast<int>(rng.uniform(15.0, 25.0));
        events.push_back({next, length, rng.uniform(1.4, 1.7), &cycle[e % cycle.size()]});
        next += length + static_cast<int>(rng.uniform(10.0, 40.0));
    }

    const bool studio = motion == Motion::studio;
    const double sway = studio ? 0.25 : 1.0;
    std::array<std::array<Sinusoid, 3>, 3> rot, trans;
    const std::array<double, 3> rot_bound{4.0 * deg, 6.0 * deg, 2.0 * deg};
    const std::array<double, 3> trans_bound{8.0, 5.0, 15.0};
    for (std::size_t a = 0; a < 3; ++a) {
        rot[a] = smooth_process(rng, sway * rot_bound[a], 0.03, 0.25);
        trans[a] = smooth_process(rng, sway * trans_bound[a], 0.03, 0.2);
    }
    std::array<std::array<Sinusoid, 3>, 4> light{};
    if (!studio) {
        for (std::size_t c = 0; c < 3; ++c) {
            light[c] = smooth_process(rng, 0.08, 0.01, 0.1);
        }
        light[3] = smooth_process(rng, 0.12, 0.01, 0.08);
    }

    const Vector3d t0 = camera::frontal_translation();
    std::vector<double> gain(static_cast<std::size_t>(d)), silence(static_cast<std::size_t>(d));
    for (int f = 0; f < frames; ++f) {
        const double t = f / s.frame_rate;
        VectorXd delta(d);
        std::fill(gain.begin(), gain.end(), 0.0);
        std::fill(silence.begin(), silence.end(), 0.0);
        for (const Event& e : events) {
            const double b = bump(f, e.start, e.length);
            if (b <= 0) {
                continue;
            }
            for (int k : e.shape->active) {
                gain[static_cast<std::size_t>(k)] += e.amplitude * b;
            }
            for (int k : e.shape->silenced) {
                silence[static_cast<std::size_t>(k)] = std::max(silence[static_cast<std::size_t>(k)], b);
            }
        }
        for (int k = 0; k < d; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            const double sigma = basis.sigma_delta(k);
            const double v = evaluate(base[kk], t) * (1.0 - silence[kk]) + gain[kk] * sigma;
            delta(k) = std::clamp(v, -2.0 * sigma, 2.0 * sigma);
        }
        s.delta.push_back(delta);
        s.R.emplace_back(evaluate(rot[0], t), evaluate(rot[1], t), evaluate(rot[2], t));
        s.T.push_back(t0 + Vector3d(evaluate(trans[0], t), evaluate(trans[1], t), evaluate(trans[2], t)));
        s.gamma.push_back(studio ? env.gamma : perturbed_gamma(env.gamma, t, light));
    }
    return s;
}

FramePair render_pair(const model::FaceBasis& basis, const PerformanceScript& script, int frame,
                      const camera::PerspectiveCamera& front_cam, const camera::FisheyeCamera& ego_cam)
{
    FramePair out;
    out.params = script.params(frame);
    const model::ShadedMesh mesh = model::build_shaded_mesh(basis, out.params);
    out.ego = render::rasterize_egocentric(mesh, ego_cam, script.background).image;
    out.front = render::rasterize_shaded(mesh, front_cam, render::Pose{out.params.R, out.params.T}, script.background)
                    .image;
    return out;
}

render::Image render_albedo_frame(const model::FaceBasis& basis, const model::ParamVector& params,
                                  const camera::PerspectiveCamera& cam)
{
    return render::rasterize_albedo(basis, params, cam, render::Pose{params.R, params.T}, Vector3d::Zero()).image;
}

void FrameStream::validate() const
{
    if (!(frame_rate > 0)) {
        throw std::invalid_argument("stream frame rate must be positive");
    }
    if (timestamps.size() != frames.size()) {
        throw std::invalid_argument("stream needs one timestamp per frame");
    }
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
        if (std::abs(timestamps[i] - timestamps[i - 1] - 1.0 / frame_rate) > 1e-9) {
            throw std::invalid_argument("stream timestamps are not spaced at 1 / frame_rate");
        }
    }
}

FrameStream make_stream(std::vector<render::Image> frames, StreamSource source, double frame_rate, double start_time)
{
    FrameStream s;
    s.source = source;
    s.frame_rate = frame_rate;
    s.frames = std::move(frames);
    for (std::size_t i = 0; i < s.frames.size(); ++i) {
        s.timestamps.push_back(start_time + static_cast<double>(i) / frame_rate);
    }
    s.validate();
    return s;
}

PatchRect sync_patch(int width, int height)
{
    const int side = std::min({std::max(2, width / 8), width, height});
    return {0, 0, side, side};
}

void paint_sync_patch(render::Image& image, bool white)
{
    const PatchRect r = sync_patch(image.width(), image.height());
    const Vector3d v = white ? Vector3d::Ones() : Vector3d::Zero();
    for (int y = r.y; y < r.y + r.height; ++y) {
        for (int x = r.x; x < r.x + r.width; ++x) {
            image.set(x, y, v);
        }
    }
}

double sync_patch_mean(const render::Image& image)
{
    const PatchRect r = sync_patch(image.width(), image.height());
    double sum = 0.0;
    for (int y = r.y; y < r.y + r.height; ++y) {
        for (int x = r.x; x < r.x + r.width; ++x) {
            sum += image.pixel(x, y).sum();
        }
    }
    return sum / (3.0 * r.width * r.height);
}

FrameStream inject_sync_events(const FrameStream& stream, double period_s, int event_frames, int offset_frames)
{
    if (stream.frames.empty()) {
        throw std::invalid_argument("cannot inject sync events into an empty stream");
    }
    if (event_frames < 1) {
        throw std::invalid_argument("sync events need at least one frame");
    }
    const int period = period_frames(period_s, stream.frame_rate);
    if (period < event_frames) {
        throw std::invalid_argument("sync period of " + std::to_string(period) + " frames is shorter than the " +
                                    std::to_string(event_frames) + "-frame event");
    }
    FrameStream out = stream;
    for (int i = 0; i < out.size(); ++i) {
        const int phase = ((i - offset_frames) % period + period) % period;
        paint_sync_patch(out.frames[static_cast<std::size_t>(i)], phase < event_frames);
    }
    return out;
}

std::vector<int> detect_onsets(const FrameStream& stream)
{
    struct Run
    {
        int start, length;
    };
    std::vector<Run> runs;
    for (int i = 0; i < stream.size(); ++i) {
        const bool on = sync_patch_mean(stream.frames[static_cast<std::size_t>(i)]) > 0.5;
        if (!on) {
            continue;
        }
        if (!runs.empty() && runs.back().start + runs.back().length == i) {
            ++runs.back().length;
        } else {
            runs.push_back({i, 1});
        }
    }
    int longest = 0;
    for (const Run& r : runs) {
        longest = std::max(longest, r.length);
    }
    std::vector<int> onsets;
    for (const Run& r : runs) {
        if (r.start == 0 && r.length < longest) {
            continue; // the event began before the recording did
        }
        onsets.push_back(r.start);
    }
    return onsets;
}

SyncReport align_streams(const FrameStream& ego, const FrameStream& front)
{
    SyncReport rep;
    rep.ego_onsets = detect_onsets(ego);
    rep.front_onsets = detect_onsets(front);
    if (rep.ego_onsets.empty() || rep.front_onsets.empty()) {
        throw SyncError(std::string("no sync event found in the ") + (rep.ego_onsets.empty() ? "ego" : "front") +
                        " stream");
    }
    const auto nearest_offset = [&](int onset) {
        int best = rep.front_onsets.front();
        for (int f : rep.front_onsets) {
            if (std::abs(onset - f) < std::abs(onset - best)) {
                best = f;
            }
        }
        return onset - best;
    };
    rep.first_offset = nearest_offset(rep.ego_onsets.front());
    int last = rep.ego_onsets.front();
    for (int onset : rep.ego_onsets) {
        if (onset - rep.first_offset < front.size()) {
            last = onset; // its front counterpart was recorded
        }
    }
    rep.last_offset = nearest_offset(last);
    rep.offset = rep.first_offset;
    rep.verified = std::abs(rep.first_offset - rep.last_offset) <= 1;
    return rep;
}

std::string to_string(DatasetKind kind)
{
    return kind == DatasetKind::ego2exp ? "ego2exp" : "exp2vreal";
}

DatasetKind parse_dataset_kind(const std::string& name)
{
    if (name == "ego2exp") {
        return DatasetKind::ego2exp;
    }
    if (name == "exp2vreal") {
        return DatasetKind::exp2vreal;
    }
    throw std::invalid_argument("unknown dataset kind '" + name + "'");
}

std::vector<int> DatasetManifest::indices(bool test) const
{
    std::vector<int> out;
    for (const ManifestEntry& e : entries) {
        if (e.test == test) {
            out.push_back(e.index);
        }
    }
    return out;
}

bool is_test_frame(int index, double test_ratio)
{
    const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(index) ^ 0x7e57ULL);
    return static_cast<double>(h >> 11) * 0x1.0p-53 < test_ratio;
}

DatasetManifest export_dataset(DatasetKind kind, const model::FaceBasis& basis,
                               const std::vector<PerformanceScript>& scripts, const ExportCameras& cams,
                               double test_ratio, const std::vector<int>& sync_offsets, const SyncSettings& sync,
                               const std::filesystem::path& out_dir)
{
    if (scripts.empty()) {
        throw std::invalid_argument("export needs at least one performance script");
    }
    if (!(test_ratio >= 0 && test_ratio < 1)) {
        throw std::invalid_argument("test ratio must lie in [0, 1)");
    }
    for (const auto& s : scripts) {
        s.validate();
    }
    cams.front.validate();
    cams.ego.validate();

    DatasetManifest m;
    m.kind = kind;
    m.frame_rate = scripts.front().frame_rate;
    m.width = cams.front.width;
    m.height = cams.front.height;
    m.test_ratio = test_ratio;
    m.root = out_dir;
    std::filesystem::create_directories(out_dir);

    std::ofstream params_out(out_dir / "params.jsonl");
    if (!params_out) {
        throw std::runtime_error("cannot write " + (out_dir / "params.jsonl").string());
    }

    int index = 0;
    for (std::size_t si = 0; si < scripts.size(); ++si) {
        const PerformanceScript& script = scripts[si];
        const int seq = static_cast<int>(si);
        SequenceInfo info;
        info.id = seq;
        info.scenario = script.scenario;
        info.frames = script.frame_count();
        info.injected_offset = si < sync_offsets.size() ? sync_offsets[si] : 0;

        if (kind == DatasetKind::ego2exp) {
            // The event patch is all the protocol observes, so the streams carry patch-sized frames.
            const PatchRect patch = sync_patch(16, 16);
            const std::vector<render::Image> blank(static_cast<std::size_t>(script.frame_count()),
                                                   render::Image(patch.width, patch.height));
            const FrameStream front = inject_sync_events(make_stream(blank, StreamSource::front, script.frame_rate),
                                                         sync.period_s, sync.event_frames, 0);
            const FrameStream ego = inject_sync_events(make_stream(blank, StreamSource::ego, script.frame_rate),
                                                       sync.period_s, sync.event_frames, info.injected_offset);
            if (detect_onsets(front).size() >= 2 && detect_onsets(ego).size() >= 2) {
                const SyncReport rep = align_streams(ego, front);
                info.sync_checked = true;
                info.sync_verified = rep.verified;
                info.recovered_offset = rep.offset;
                if (!rep.verified || rep.offset != info.injected_offset) {
                    throw SyncError("sequence " + std::to_string(seq) + ": injected offset " +
                                    std::to_string(info.injected_offset) + " recovered as " +
                                    std::to_string(rep.offset) + (rep.verified ? "" : " (verification failed)"));
                }
            }
        }
        m.sequences.push_back(info);

        const std::string sname = sequence_name(seq);
        std::vector<ManifestEntry> entries(static_cast<std::size_t>(script.frame_count()));
        for (int f = 0; f < script.frame_count(); ++f) {
            ManifestEntry& e = entries[static_cast<std::size_t>(f)];
            e.index = index + f;
            e.sequence = seq;
            e.frame = f;
            e.test = is_test_frame(e.index, test_ratio);
            const std::string file = sname + "/" + frame_name(f);
            e.front = "frames/front/" + file;
            if (kind == DatasetKind::ego2exp) {
                e.ego = "frames/ego/" + file;
            } else {
                e.albedo = "frames/albedo/" + file;
            }
        }
        parallel_for(entries.size(), [&](std::size_t f) {
            const ManifestEntry& e = entries[f];
            if (kind == DatasetKind::ego2exp) {
                const FramePair pair = render_pair(basis, script, e.frame, cams.front, cams.ego);
                render::write_ppm(pair.ego, out_dir / e.ego);
                render::write_ppm(pair.front, out_dir / e.front);
            } else {
                const model::ParamVector p = script.params(e.frame);
                const model::ShadedMesh mesh = model::build_shaded_mesh(basis, p);
                render::write_ppm(
                    render::rasterize_shaded(mesh, cams.front, render::Pose{p.R, p.T}, script.background).image,
                    out_dir / e.front);
                render::write_ppm(render_albedo_frame(basis, p, cams.front), out_dir / e.albedo);
            }
        });
        for (const ManifestEntry& e : entries) {
            nlohmann::json line{{"index", e.index},
                                {"sequence", e.sequence},
                                {"frame", e.frame},
                                {"params", model::param_to_json(script.params(e.frame))}};
            params_out << line.dump() << '\n';
            m.entries.push_back(e);
        }
        index += script.frame_count();
    }
    params_out.close();
    if (!params_out) {
        throw std::runtime_error("failed writing " + (out_dir / "params.jsonl").string());
    }

    std::ofstream os(out_dir / "manifest.json");
    os << manifest_to_json(m).dump(1) << '\n';
    if (!os) {
        throw std::runtime_error("failed writing " + (out_dir / "manifest.json").string());
    }
    return m;
}

nlohmann::json manifest_to_json(const DatasetManifest& m)
{
    nlohmann::json seqs = nlohmann::json::array();
    for (const SequenceInfo& s : m.sequences) {
        seqs.push_back({{"id", s.id},
                        {"scenario", s.scenario},
                        {"frames", s.frames},
                        {"injected_offset", s.injected_offset},
                        {"recovered_offset", s.recovered_offset},
                        {"sync_checked", s.sync_checked},
                        {"sync_verified", s.sync_verified}});
    }
    nlohmann::json entries = nlohmann::json::array();
    for (const ManifestEntry& e : m.entries) {
        nlohmann::json j{{"index", e.index},
                         {"sequence", e.sequence},
                         {"frame", e.frame},
                         {"split", e.test ? "test" : "train"},
                         {"front", e.front}};
        if (!e.ego.empty()) {
            j["ego"] = e.ego;
        }
        if (!e.albedo.empty()) {
            j["albedo"] = e.albedo;
        }
        entries.push_back(std::move(j));
    }
    return {{"kind", to_string(m.kind)}, {"frame_rate", m.frame_rate}, {"width", m.width},
            {"height", m.height},        {"test_ratio", m.test_ratio}, {"sequences", seqs},
            {"entries", entries},        {"params", "params.jsonl"}};
}

DatasetManifest load_manifest(const std::filesystem::path& dir)
{
    const auto path = dir / "manifest.json";
    std::ifstream is(path);
    if (!is) {
        throw MissingArtifactError("missing dataset manifest " + path.string());
    }
    const nlohmann::json j = nlohmann::json::parse(is);
    DatasetManifest m;
    m.root = dir;
    m.kind = parse_dataset_kind(j.at("kind").get<std::string>());
    m.frame_rate = j.at("frame_rate").get<double>();
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.test_ratio = j.at("test_ratio").get<double>();
    for (const auto& s : j.at("sequences")) {
        SequenceInfo info;
        info.id = s.at("id").get<int>();
        info.scenario = s.at("scenario").get<int>();
        info.frames = s.at("frames").get<int>();
        info.injected_offset = s.at("injected_offset").get<int>();
        info.recovered_offset = s.at("recovered_offset").get<int>();
        info.sync_checked = s.at("sync_checked").get<bool>();
        info.sync_verified = s.at("sync_verified").get<bool>();
        m.sequences.push_back(info);
    }
    for (const auto& e : j.at("entries")) {
        ManifestEntry entry;
        entry.index = e.at("index").get<int>();
        entry.sequence = e.at("sequence").get<int>();
        entry.frame = e.at("frame").get<int>();
        entry.test = e.at("split").get<std::string>() == "test";
        entry.front = e.at("front").get<std::string>();
        entry.ego = e.value("ego", std::string());
        entry.albedo = e.value("albedo", std::string());
        m.entries.push_back(std::move(entry));
    }
    return m;
}

std::vector<model::ParamVector> load_dataset_params(const DatasetManifest& manifest)
{
    const auto path = manifest.root / "params.jsonl";
    std::ifstream is(path);
    if (!is) {
        throw MissingArtifactError("missing dataset parameters " + path.string());
    }
    std::vector<model::ParamVector> out;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) {
            out.push_back(model::param_from_json(nlohmann::json::parse(line).at("params")));
        }
    }
    if (out.size() != manifest.entries.size()) {
        throw std::runtime_error(path.string() + " holds " + std::to_string(out.size()) + " records for " +
                                 std::to_string(manifest.entries.size()) + " manifest entries");
    }
    return out;
}

} // namespace egoface::sim
