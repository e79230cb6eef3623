#include <doctest.h>

#include <dynspike/io.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dynspike;
using io::json;
namespace fs = std::filesystem;

namespace {

const fs::path root = fs::temp_directory_path() / "dynspike_cli_test";

struct Result
{
    int code;
    std::string err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

fs::path write_config(const std::string& name, const std::string& text)
{
    fs::create_directories(root);
    const fs::path p = root / name;
    std::ofstream(p) << text;
    return p;
}

Result run(const std::string& args)
{
    const fs::path err = root / "stderr.txt";
    const std::string cmd =
        std::string(DYNSPIKE_CLI) + " " + args + " > /dev/null 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

bool manifest_lists_outputs(const fs::path& dir)
{
    const json m = load(dir / "manifest.json");
    for (const auto& name : m.at("outputs"))
    {
        if (!fs::exists(dir / name.get<std::string>()))
        {
            return false;
        }
    }
    return m.at("status") == "ok";
}

const char* equispaced_ghosts = R"({"f_c": 128, "construction": "static_average",
 "configuration": {"tau": 0.5, "K": 1, "particles": [
  {"x": [0.4853906], "v": [0.0], "w": 1}, {"x": [0.5], "v": [0.0], "w": 1},
  {"x": [0.5146094], "v": [0.0], "w": 1}]}})";

} // namespace

TEST_CASE("simulate writes files and a manifest, reproducibly")
{
    fs::remove_all(root);
    const fs::path cfg = write_config("sim.json", R"({"trial": {"n_min": 2, "n_max": 4}})");
    const fs::path a = root / "sim_a", b = root / "sim_b";
    REQUIRE(run("simulate --config " + cfg.string() + " --seed 4 --out " + a.string()).code == 0);
    REQUIRE(run("simulate --config " + cfg.string() + " --seed 4 --out " + b.string()).code == 0);
    CHECK(fs::exists(a / "measurements.json"));
    CHECK(fs::exists(a / "truth.json"));
    CHECK(manifest_lists_outputs(a));
    CHECK(slurp(a / "measurements.json") == slurp(b / "measurements.json"));
    CHECK(load(a / "manifest.json").at("seed") == 4);
}

TEST_CASE("invalid tau is a located config error")
{
    const fs::path cfg = write_config("bad.json", "{\n \"trial\": {\n  \"tau\": -0.5\n }\n}");
    const fs::path out = root / "bad";
    const Result r     = run("simulate --config " + cfg.string() + " --out " + out.string());
    CHECK(r.code == 2);
    const json e = json::parse(r.err).at("error");
    CHECK(e.at("line") == 3);
    CHECK(e.at("pointer") == "/trial/tau");
    CHECK(load(out / "manifest.json").at("status") == "error");
}

TEST_CASE("syntax errors exit with code 2")
{
    const fs::path cfg = write_config("syntax.json", "{\n \"trial\": {,\n}");
    const Result r     = run("simulate --config " + cfg.string() + " --out " + (root / "syn").string());
    CHECK(r.code == 2);
    CHECK(json::parse(r.err).at("error").at("line") == 2);
}

TEST_CASE("simulate then reconstruct recovers the configuration")
{
    const fs::path sim = write_config("rt_sim.json", R"({
      "configuration": {"tau": 0.5, "K": 2, "particles": [
        {"x": [0.3], "v": [0.1], "w": 1.0}, {"x": [0.7], "v": [-0.2], "w": 0.9}]}})");
    REQUIRE(run("simulate --config " + sim.string() + " --out " + (root / "rt").string()).code == 0);
    const fs::path rec = write_config("rt_rec.json", R"({"measurements": "rt/measurements.json"})");
    REQUIRE(run("reconstruct --config " + rec.string() + " --out " + (root / "rt_out").string())
                .code == 0);
    const Reconstruction r =
        io::reconstruction_from_json(load(root / "rt_out" / "reconstruction.json"));
    const Configuration truth = io::configuration_from_json(load(root / "rt" / "truth.json"));
    CHECK(match_reconstruction(truth, r.particles, {1e-4, 1e-4, 1e-3}).success);
    CHECK(manifest_lists_outputs(root / "rt_out"));
}

TEST_CASE("reconstruct edge cases")
{
    MeasurementTensor zero(5, TimeGrid(2, 0.5));
    io::write_json(root / "zero.json", io::to_json(zero));
    const fs::path rec = write_config("zero_rec.json", R"({"measurements": "zero.json"})");
    REQUIRE(run("reconstruct --config " + rec.string() + " --out " + (root / "zero_out").string())
                .code == 0);
    CHECK(load(root / "zero_out" / "reconstruction.json").at("particles").empty());

    json broken = io::to_json(zero);
    broken["f_c"] = 7;
    io::write_json(root / "broken.json", broken);
    const fs::path bad = write_config("broken_rec.json", R"({"measurements": "broken.json"})");
    CHECK(run("reconstruct --config " + bad.string() + " --out " + (root / "broken_out").string())
              .code == 2);
}

TEST_CASE("certify")
{
    const fs::path ghost = write_config("ghost.json", equispaced_ghosts);
    REQUIRE(run("certify --config " + ghost.string() + " --out " + (root / "ghost").string()).code ==
            0);
    const json v = load(root / "ghost" / "verification.json");
    CHECK(v.at("violations").size() == 2);
    CHECK(v.at("passed") == false);
    CHECK(manifest_lists_outputs(root / "ghost"));

    std::string perturbed = equispaced_ghosts;
    perturbed.replace(perturbed.find("static_average"), 14, "perturbed");
    const fs::path pert = write_config("pert.json", perturbed);
    REQUIRE(run("certify --config " + pert.string() + " --out " + (root / "pert").string()).code == 0);
    CHECK(load(root / "pert" / "verification.json").at("passed") == true);

    const fs::path close = write_config("close.json", R"({"f_c": 128,
      "configuration": {"tau": 0.5, "K": 1, "particles": [
        {"x": [0.5], "v": [0.0], "w": 1}, {"x": [0.501], "v": [0.0], "w": 1}]}})");
    const Result r = run("certify --config " + close.string() + " --out " + (root / "close").string());
    CHECK(r.code == 3);
    CHECK(json::parse(r.err).at("error").at("type") == "separation");
}

TEST_CASE("experiment smoke run")
{
    const fs::path cfg = write_config("exp.json", R"({"trial": {"n_max": 6}, "trials": 10})");
    const auto t0      = std::chrono::steady_clock::now();
    REQUIRE(run("experiment --config " + cfg.string() + " --seed 2 --out " + (root / "e1").string())
                .code == 0);
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(60));
    REQUIRE(run("experiment --config " + cfg.string() +
                " --seed 2 --threads 2 --out " + (root / "e2").string())
                .code == 0);
    CHECK(slurp(root / "e1" / "records.csv") == slurp(root / "e2" / "records.csv"));
    CHECK(slurp(root / "e1" / "campaign.csv") == slurp(root / "e2" / "campaign.csv"));
    CHECK(manifest_lists_outputs(root / "e1"));

    std::istringstream rows(slurp(root / "e1" / "records.csv"));
    std::string line;
    std::getline(rows, line);
    int n = 0;
    while (std::getline(rows, line))
    {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');)
        {
            f.push_back(cell);
        }
        REQUIRE(f.size() >= 7);
        CHECK((f[5] == "0" || f[4] == "1"));
        ++n;
    }
    CHECK(n == 10);
}

TEST_CASE("ultrasound")
{
    const fs::path quiet =
        write_config("us0.json", R"({"bubbles": {"activation": 0.0}, "acquisition": {"duration": 0.2}})");
    REQUIRE(run("ultrasound --config " + quiet.string() + " --out " + (root / "us0").string()).code ==
            0);
    CHECK(slurp(root / "us0" / "points.csv") == "x_mm,y_mm,vx_mm_s,vy_mm_s,window_id\n");
    CHECK(manifest_lists_outputs(root / "us0"));

    const fs::path busy = write_config(
        "us1.json", R"({"bubbles": {"activation": 0.03, "seed": 3}, "acquisition": {"duration": 0.4}})");
    REQUIRE(run("ultrasound --config " + busy.string() + " --out " + (root / "us1").string()).code ==
            0);
    CHECK(slurp(root / "us1" / "points.csv").size() >
          std::string("x_mm,y_mm,vx_mm_s,vy_mm_s,window_id\n").size());
    CHECK(fs::exists(root / "us1" / "bmode.pgm"));
    CHECK(manifest_lists_outputs(root / "us1"));
}
