#include "egoface/cli/config.hpp"

#include "egoface/common/error.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace egoface::cli {

namespace {

// Reads the fields of one JSON object, remembering which keys were consumed so that
// leftovers can be reported with their full path.
class Section
{
public:
    Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) {
            throw ConfigError(path_ + ": expected an object");
        }
    }

    template <typename V>
    void read(const char* key, V& out)
    {
        used_.insert(key);
        if (!j_.contains(key)) {
            return;
        }
        try {
            out = j_.at(key).get<V>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(field(key) + ": wrong type");
        }
    }

    /// Sub-object, or an empty object when absent.
    nlohmann::json object(const char* key)
    {
        used_.insert(key);
        if (!j_.contains(key)) {
            return nlohmann::json::object();
        }
        if (!j_.at(key).is_object()) {
            throw ConfigError(field(key) + ": expected an object");
        }
        return j_.at(key);
    }

    bool has(const char* key) const { return j_.contains(key); }

    void finish() const
    {
        for (const auto& [key, value] : j_.items()) {
            if (!used_.count(key)) {
                throw ConfigError("unknown key " + field(key));
            }
        }
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> used_;
};

void require(bool ok, const std::string& field, const std::string& why)
{
    if (!ok) {
        throw ConfigError(field + ": " + why);
    }
}

nlohmann::json vec3(const Eigen::Vector3d& v)
{
    return nlohmann::json::array({v.x(), v.y(), v.z()});
}

Eigen::Vector3d read_vec3(const nlohmann::json& j, const std::string& field)
{
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError(field + ": expected three numbers");
    }
    Eigen::Vector3d v;
    for (int k = 0; k < 3; ++k) {
        if (!j[static_cast<std::size_t>(k)].is_number()) {
            throw ConfigError(field + ": expected three numbers");
        }
        v(k) = j[static_cast<std::size_t>(k)].get<double>();
    }
    return v;
}

// The regressor JSON omits output_dim (it follows the basis), the translator JSON is
// whole; both reject unknown keys with their section prefix.
nlohmann::json without(nlohmann::json j, const char* key)
{
    j.erase(key);
    return j;
}

} // namespace

camera::PerspectiveCamera CameraConfig::front() const
{
    camera::PerspectiveCamera c;
    c.focal = front_focal;
    return c.scaled(image_size / 256.0);
}

camera::FisheyeCamera CameraConfig::ego() const
{
    camera::FisheyeCamera c = camera::ego_camera_default(image_size, image_size);
    c.focal = ego_focal * image_size / 256.0;
    return c;
}

std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> default_pose_list()
{
    const Eigen::Vector3d t = camera::frontal_translation();
    const double deg = 3.14159265358979323846 / 180.0;
    return {{Eigen::Vector3d::Zero(), t},
            {Eigen::Vector3d(0.0, 12.0 * deg, 0.0), t},
            {Eigen::Vector3d(-8.0 * deg, 0.0, 0.0), t},
            {Eigen::Vector3d(0.0, -12.0 * deg, 0.0), t}};
}

void RunConfig::validate() const
{
    require(basis.vertex_count >= 100, "basis.vertices", "must be at least 100");
    require(basis.alpha >= 1 && basis.beta >= 1 && basis.delta >= 1, "basis", "coefficient counts must be positive");
    require(cameras.image_size >= 64 && cameras.image_size % 64 == 0, "cameras.image_size",
            "must be a positive multiple of 64");
    require(cameras.front_focal > 0, "cameras.front_focal", "must be positive");
    require(cameras.ego_focal > 0, "cameras.ego_focal", "must be positive");

    const auto& s = simulator;
    require(!s.ego2exp_scenarios.empty(), "simulator.ego2exp.scenarios", "needs at least one sequence");
    for (const int sc : s.ego2exp_scenarios) {
        require(sc >= 0 && sc < 4, "simulator.ego2exp.scenarios", "scenario ids are 0..3");
    }
    require(s.ego2exp_frames >= 2, "simulator.ego2exp.frames_per_sequence", "must be at least 2");
    require(s.sync_offsets.size() == s.ego2exp_scenarios.size(), "simulator.ego2exp.sync_offsets",
            "needs one offset per sequence");
    require(s.exp2vreal_sequences >= 1, "simulator.exp2vreal.sequences", "must be positive");
    require(s.exp2vreal_frames >= 2, "simulator.exp2vreal.frames_per_sequence", "must be at least 2");
    require(s.exp2vreal_scenario >= 0 && s.exp2vreal_scenario < 4, "simulator.exp2vreal.scenario",
            "scenario ids are 0..3");
    require(s.test_ratio > 0 && s.test_ratio < 1, "simulator.test_ratio", "must lie in (0, 1)");
    require(s.sync.period_s > 0, "simulator.sync.period_s", "must be positive");
    require(s.sync.event_frames >= 1, "simulator.sync.event_frames", "must be positive");

    require(recon.fit_frames >= 1, "recon.fit_frames", "must be positive");
    ego2exp.validate();
    exp2vreal.validate();
    require(!pose.poses.empty(), "exp2vreal.pose_selection.poses", "needs at least one pose");
    require(pose.loop_period >= 1, "exp2vreal.pose_selection.loop_period", "must be positive");

    require(eval.bench_frames >= 1, "eval.bench_frames", "must be positive");
    require(eval.bench_repetitions >= 1, "eval.bench_repetitions", "must be positive");
    require(eval.reenact_frames >= 1, "eval.reenact_frames", "must be positive");
    try {
        exp2vreal::parse_variant(eval.reenact_variant);
    } catch (const ConfigError&) {
        throw ConfigError("eval.reenact_variant: expected full or optimized");
    }
    require(!out.empty(), "paths.out", "must not be empty");
}

RunConfig config_from_json(const nlohmann::json& j)
{
    RunConfig c;
    c.pose.poses = default_pose_list();
    Section root(j, "");
    root.read("seed", c.seed);

    {
        const auto bj = root.object("basis");
        Section b(bj, "basis");
        bool full = false;
        b.read("full_size", full);
        if (full) {
            c.basis = model::BasisDims::full();
        }
        b.read("vertices", c.basis.vertex_count);
        b.read("alpha", c.basis.alpha);
        b.read("beta", c.basis.beta);
        b.read("delta", c.basis.delta);
        b.finish();
    }
    {
        const auto cj = root.object("cameras");
        Section cam(cj, "cameras");
        cam.read("image_size", c.cameras.image_size);
        cam.read("front_focal", c.cameras.front_focal);
        cam.read("ego_focal", c.cameras.ego_focal);
        cam.finish();
    }
    {
        const auto sj = root.object("simulator");
        Section s(sj, "simulator");
        const auto ej = s.object("ego2exp");
        Section e(ej, "simulator.ego2exp");
        e.read("scenarios", c.simulator.ego2exp_scenarios);
        e.read("frames_per_sequence", c.simulator.ego2exp_frames);
        if (e.has("scenarios") && !e.has("sync_offsets")) {
            c.simulator.sync_offsets.assign(c.simulator.ego2exp_scenarios.size(), 0);
        }
        e.read("sync_offsets", c.simulator.sync_offsets);
        e.finish();
        const auto xj = s.object("exp2vreal");
        Section x(xj, "simulator.exp2vreal");
        x.read("sequences", c.simulator.exp2vreal_sequences);
        x.read("frames_per_sequence", c.simulator.exp2vreal_frames);
        x.read("scenario", c.simulator.exp2vreal_scenario);
        x.finish();
        s.read("test_ratio", c.simulator.test_ratio);
        const auto yj = s.object("sync");
        Section y(yj, "simulator.sync");
        y.read("period_s", c.simulator.sync.period_s);
        y.read("event_frames", c.simulator.sync.event_frames);
        y.finish();
        s.finish();
    }
    {
        const auto rj = root.object("recon");
        Section r(rj, "recon");
        r.read("fit_frames", c.recon.fit_frames);
        c.recon.energy = recon::energy_config_from_json(without(rj, "fit_frames"));
    }
    c.ego2exp = ego2exp::regressor_config_from_json(root.object("ego2exp"));
    c.ego2exp.output_dim = c.basis.delta;
    {
        const auto xj = root.object("exp2vreal");
        c.exp2vreal = exp2vreal::gan_config_from_json(without(xj, "pose_selection"));
        const nlohmann::json pj = xj.contains("pose_selection") ? xj.at("pose_selection") : nlohmann::json::object();
        Section p(pj, "exp2vreal.pose_selection");
        std::string mode = "fixed";
        p.read("mode", mode);
        if (mode == "fixed") {
            c.pose.mode = exp2vreal::PoseMode::fixed;
        } else if (mode == "loop") {
            c.pose.mode = exp2vreal::PoseMode::loop;
        } else {
            throw ConfigError("exp2vreal.pose_selection.mode: expected fixed or loop");
        }
        p.read("loop_period", c.pose.loop_period);
        p.read("ping_pong", c.pose.ping_pong);
        nlohmann::json poses;
        p.read("poses", poses);
        if (!poses.is_null()) {
            if (!poses.is_array()) {
                throw ConfigError("exp2vreal.pose_selection.poses: expected an array of {R, T}");
            }
            c.pose.poses.clear();
            for (std::size_t k = 0; k < poses.size(); ++k) {
                const std::string f = "exp2vreal.pose_selection.poses[" + std::to_string(k) + "]";
                const auto& pk = poses[k];
                if (!pk.is_object() || !pk.contains("R") || !pk.contains("T") || pk.size() != 2) {
                    throw ConfigError(f + ": expected {\"R\": [3], \"T\": [3]}");
                }
                c.pose.poses.emplace_back(read_vec3(pk.at("R"), f + ".R"), read_vec3(pk.at("T"), f + ".T"));
            }
        }
        p.finish();
    }
    {
        const auto ej = root.object("eval");
        Section e(ej, "eval");
        e.read("bench_frames", c.eval.bench_frames);
        e.read("bench_repetitions", c.eval.bench_repetitions);
        e.read("bench_components", c.eval.bench_components);
        e.read("reenact_frames", c.eval.reenact_frames);
        e.read("reenact_variant", c.eval.reenact_variant);
        e.finish();
    }
    {
        const auto pj = root.object("paths");
        Section p(pj, "paths");
        std::string out = c.out.string();
        p.read("out", out);
        c.out = out;
        p.finish();
    }
    root.finish();
    c.validate();
    return c;
}

nlohmann::json config_to_json(const RunConfig& c)
{
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& [r, t] : c.pose.poses) {
        poses.push_back({{"R", vec3(r)}, {"T", vec3(t)}});
    }
    nlohmann::json x = exp2vreal::gan_config_to_json(c.exp2vreal);
    x["pose_selection"] = {{"mode", c.pose.mode == exp2vreal::PoseMode::fixed ? "fixed" : "loop"},
                           {"loop_period", c.pose.loop_period},
                           {"ping_pong", c.pose.ping_pong},
                           {"poses", poses}};
    nlohmann::json r = recon::energy_config_to_json(c.recon.energy);
    r["fit_frames"] = c.recon.fit_frames;
    return {{"seed", c.seed},
            {"basis",
             {{"vertices", c.basis.vertex_count},
              {"alpha", c.basis.alpha},
              {"beta", c.basis.beta},
              {"delta", c.basis.delta}}},
            {"cameras",
             {{"image_size", c.cameras.image_size},
              {"front_focal", c.cameras.front_focal},
              {"ego_focal", c.cameras.ego_focal}}},
            {"simulator",
             {{"ego2exp",
               {{"scenarios", c.simulator.ego2exp_scenarios},
                {"frames_per_sequence", c.simulator.ego2exp_frames},
                {"sync_offsets", c.simulator.sync_offsets}}},
              {"exp2vreal",
               {{"sequences", c.simulator.exp2vreal_sequences},
                {"frames_per_sequence", c.simulator.exp2vreal_frames},
                {"scenario", c.simulator.exp2vreal_scenario}}},
              {"test_ratio", c.simulator.test_ratio},
              {"sync", {{"period_s", c.simulator.sync.period_s}, {"event_frames", c.simulator.sync.event_frames}}}}},
            {"recon", r},
            {"ego2exp", ego2exp::regressor_config_to_json(c.ego2exp)},
            {"exp2vreal", x},
            {"eval",
             {{"bench_frames", c.eval.bench_frames},
              {"bench_repetitions", c.eval.bench_repetitions},
              {"bench_components", c.eval.bench_components},
              {"reenact_frames", c.eval.reenact_frames},
              {"reenact_variant", c.eval.reenact_variant}}},
            {"paths", {{"out", c.out.string()}}}};
}

RunConfig parse_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("config file " + path.string() + " not found");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

} // namespace egoface::cli
