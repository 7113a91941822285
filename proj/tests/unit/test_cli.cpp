#include "doctest.h"

#include "egoface/cli/commands.hpp"
#include "egoface/cli/config.hpp"
#include "egoface/common/error.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace egoface;
using namespace egoface::cli;

namespace {

RunConfig defaults()
{
    RunConfig c;
    c.pose.poses = default_pose_list();
    return c;
}

std::string error_of(const nlohmann::json& j)
{
    try {
        config_from_json(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_CASE("empty config yields the full default config")
{
    const RunConfig c = config_from_json(nlohmann::json::object());
    CHECK(config_to_json(c) == config_to_json(defaults()));
    CHECK(c.seed == 1);
    CHECK(c.exp2vreal.lambda == 10.0);
    CHECK(c.ego2exp.output_dim == c.basis.delta);
    CHECK(c.simulator.ego2exp_scenarios.size() * c.simulator.ego2exp_frames == 4000);
    CHECK(c.cameras.front().width == c.cameras.image_size);
    CHECK(c.cameras.ego().width == c.cameras.image_size);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("config errors name the offending path")
{
    CHECK(error_of({{"exp2vreal", {{"lambda", -1}}}}).find("exp2vreal.lambda") != std::string::npos);
    CHECK(error_of({{"sed", 1}}) == "unknown key sed");
    CHECK(error_of({{"simulator", {{"ego2exp", {{"frames", 10}}}}}}) == "unknown key simulator.ego2exp.frames");
    CHECK(error_of({{"basis", {{"vertex", 10}}}}) == "unknown key basis.vertex");
    CHECK(error_of({{"recon", {{"w_photon", 1.0}}}}).find("recon.w_photon") != std::string::npos);
    CHECK(error_of({{"ego2exp", {{"preset", "huge"}}}}).find("ego2exp.preset") != std::string::npos);
    CHECK(error_of({{"exp2vreal", {{"pose_selection", {{"mode", "spin"}}}}}}).find("exp2vreal.pose_selection.mode") !=
          std::string::npos);
    CHECK(error_of({{"exp2vreal", {{"pose_selection", {{"poses", {{{"R", {0, 0}}, {"T", {0, 0, 500}}}}}}}}}})
              .find("exp2vreal.pose_selection.poses[0].R") != std::string::npos);
    CHECK(error_of({{"seed", "x"}}).find("seed") != std::string::npos);
    CHECK(error_of({{"cameras", {{"image_size", 100}}}}).find("cameras.image_size") != std::string::npos);
    CHECK(error_of({{"simulator", {{"ego2exp", {{"sync_offsets", {1, 2}}}}}}})
              .find("simulator.ego2exp.sync_offsets") != std::string::npos);
    CHECK(error_of({{"eval", {{"reenact_variant", "medium"}}}}).find("eval.reenact_variant") != std::string::npos);
    CHECK(error_of({{"paths", 3}}).find("paths") != std::string::npos);
}

TEST_CASE("config round-trips through json")
{
    nlohmann::json j{{"seed", 42},
                     {"basis", {{"vertices", 300}, {"delta", 8}}},
                     {"simulator", {{"ego2exp", {{"scenarios", {2, 3}}, {"frames_per_sequence", 50}}}}},
                     {"recon", {{"w_lmk", 5.0}, {"fit_frames", 3}}},
                     {"ego2exp", {{"preset", "tiny"}, {"epochs", 4}}},
                     {"exp2vreal",
                      {{"window", 5},
                       {"generator_adam", {{"learning_rate", 1e-3}}},
                       {"pose_selection",
                        {{"mode", "loop"}, {"loop_period", 3}, {"poses", {{{"R", {0.1, 0, 0}}, {"T", {0, 0, 450}}}}}}}}},
                     {"eval", {{"bench_components", "alexnet-analog,albedo,optimized"}}},
                     {"paths", {{"out", "somewhere"}}}};
    const RunConfig a = config_from_json(j);
    CHECK(a.simulator.sync_offsets == std::vector<int>{0, 0});
    CHECK(a.ego2exp.output_dim == 8);
    CHECK(a.pose.mode == exp2vreal::PoseMode::loop);
    REQUIRE(a.pose.poses.size() == 1);
    CHECK(a.pose.poses[0].second.z() == 450.0);
    const nlohmann::json first = config_to_json(a);
    const RunConfig b = config_from_json(first);
    CHECK(config_to_json(b) == first);
    CHECK(b.recon.energy == a.recon.energy);
    CHECK(b.ego2exp == a.ego2exp);
    CHECK(exp2vreal::same_config(b.exp2vreal, a.exp2vreal));
    CHECK(b.out == "somewhere");
}

TEST_CASE("parse_config reads files and reports missing or malformed ones")
{
    const auto dir = std::filesystem::temp_directory_path() / "egoface_cli_config";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "ok.json") << R"({"seed": 9, "eval": {"bench_frames": 5}})";
    const RunConfig c = parse_config(dir / "ok.json");
    CHECK(c.seed == 9);
    CHECK(c.eval.bench_frames == 5);
    CHECK_THROWS_WITH_AS(parse_config(dir / "absent.json"), doctest::Contains("absent.json"), ConfigError);
    std::ofstream(dir / "broken.json") << "{\"seed\": ";
    CHECK_THROWS_AS(parse_config(dir / "broken.json"), ConfigError);
}

TEST_CASE("commands report missing prerequisites and map errors to exit codes")
{
    RunConfig c = defaults();
    c.out = std::filesystem::temp_directory_path() / "egoface_cli_empty";
    std::filesystem::remove_all(c.out);
    std::ostringstream log;
    CHECK_THROWS_WITH_AS(run("reenact", c, {}, log), doctest::Contains("optimized_generator.egfw"),
                         MissingArtifactError);
    CHECK_THROWS_WITH_AS(run("reenact", c, {"", "full"}, log), doctest::Contains("full_generator.egfw"),
                         MissingArtifactError);
    CHECK_THROWS_AS(run("gen-data", c, {}, log), MissingArtifactError);
    CHECK_THROWS_AS(run("eval-geo", c, {}, log), MissingArtifactError);
    CHECK_THROWS_AS(run("reenact", c, {"", "both"}, log), ConfigError);
    CHECK_THROWS_AS(run("paint", c, {}, log), ConfigError);
    CHECK(command_names().size() == 10);

    CHECK(exit_code(nullptr) == 0);
    CHECK(exit_code(std::make_exception_ptr(ConfigError("x"))) == 2);
    CHECK(exit_code(std::make_exception_ptr(MissingArtifactError("x"))) == 3);
    CHECK(exit_code(std::make_exception_ptr(NumericError("x"))) == 4);
    CHECK(exit_code(std::make_exception_ptr(std::runtime_error("x"))) == 1);
}

TEST_CASE("synth-model writes the model and the run config")
{
    RunConfig c = defaults();
    c.out = std::filesystem::temp_directory_path() / "egoface_cli_model";
    std::filesystem::remove_all(c.out);
    std::ostringstream log;
    run("synth-model", c, {}, log);
    const Layout out{c.out};
    CHECK(std::filesystem::exists(out.model() / "basis.bin"));
    std::ifstream is(out.config());
    const auto doc = nlohmann::json::parse(is);
    CHECK(!doc.contains("paths"));
    CHECK(config_to_json(config_from_json(doc)).at("exp2vreal") == config_to_json(c).at("exp2vreal"));
    CHECK(model::load_basis(out.model()).dims() == c.basis);
}
