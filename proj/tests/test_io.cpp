#include <doctest.h>

#include <dynspike/io.hpp>

#include <filesystem>
#include <fstream>

using namespace dynspike;
using namespace dynspike::io;

namespace {

Particle particle(double x, double v, double w = 1.0)
{
    return Particle{Vector::Constant(1, x), Vector::Constant(1, v), w};
}

template <typename F>
ParseError catch_parse(F&& f)
{
    try
    {
        f();
    }
    catch (const ParseError& e)
    {
        return e;
    }
    FAIL("no ParseError thrown");
    return ParseError("", 0, 0, "", "");
}

} // namespace

TEST_CASE("syntax errors are located")
{
    const ParseError e = catch_parse([] { Document::parse("{\n  \"a\": 1,\n  \"b\": ]\n}", "x.json"); });
    CHECK(e.source() == "x.json");
    CHECK(e.line() == 3);
    CHECK(e.pointer().empty());
}

TEST_CASE("field errors carry the position of the value")
{
    const Document doc = Document::parse("{\n \"trial\": {\n  \"tau\": -1\n }\n}", "t.json");
    CHECK(doc.locate("/trial/tau").line == 3);
    CHECK(doc.locate("/trial/tau").column == 10);
    CHECK(doc.locate("/trial/missing").line == 2);

    const ParseError e = catch_parse(
        [&] { doc.read_at("/trial", [](const json& j) { return trial_spec_from_json(j); }); });
    CHECK(e.pointer() == "/trial/tau");
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("t.json:3:10") == 0);
}

TEST_CASE("absent sections read as empty objects")
{
    const Document doc = Document::parse("{}");
    const TrialSpec s  = doc.read_at("/trial", [](const json& j) { return trial_spec_from_json(j); });
    CHECK(s.cutoff == TrialSpec{}.cutoff);
}

TEST_CASE("configuration round trip")
{
    const Configuration c(TimeGrid(2, 0.5),
                          {particle(0.25, 0.1, 1.02), particle(0.75, -0.2, 0.97)});
    const Configuration back = configuration_from_json(to_json(c));
    CHECK(back.grid() == c.grid());
    REQUIRE(back.size() == 2);
    CHECK(back[1].position[0] == 0.75);
    CHECK(back[1].velocity[0] == -0.2);
    CHECK(back[0].weight == 1.02);

    json bad = to_json(c);
    bad["particles"][1]["x"] = json::array({1.5});
    CHECK_THROWS_AS(configuration_from_json(bad), FieldError);
    try
    {
        configuration_from_json(bad);
    }
    catch (const FieldError& e)
    {
        CHECK(e.pointer().rfind("/particles/1", 0) == 0);
    }
}

TEST_CASE("measurement and frame round trips")
{
    const TimeGrid g(2, 0.5);
    MeasurementTensor y(3, g);
    for (Eigen::Index i = 0; i < y.size(); ++i)
    {
        y.data()[i] = Complex(0.1 * static_cast<double>(i), -1.0 / (1.0 + static_cast<double>(i)));
    }
    const MeasurementTensor back = measurements_from_json(to_json(y));
    CHECK(back.cutoff() == 3);
    CHECK(back.grid() == g);
    CHECK(back.data() == y.data());

    json short_data = to_json(y);
    short_data["data"].erase(0);
    CHECK_THROWS_AS(measurements_from_json(short_data), FieldError);

    FrameStack s;
    s.pixels = PixelGrid{4, 3, 0.1};
    s.grid   = TimeGrid(1, 0.002, 2);
    for (int k = 0; k < 3; ++k)
    {
        s.frames.push_back(Eigen::MatrixXd::Random(3, 4));
    }
    const FrameStack fb = frames_from_json(to_json(s));
    CHECK(fb.pixels.width == 4);
    CHECK(fb.pixels.height == 3);
    CHECK(fb.flatten() == s.flatten());
}

TEST_CASE("reconstruction round trip")
{
    Reconstruction r;
    r.particles     = {particle(0.4, 0.05, 0.9)};
    r.residual_norm = 1e-7;
    r.iterations    = 4;
    r.converged     = true;
    const Reconstruction back = reconstruction_from_json(to_json(r, TimeGrid(2, 0.5)));
    REQUIRE(back.particles.size() == 1);
    CHECK(back.particles[0].position[0] == 0.4);
    CHECK(back.residual_norm == 1e-7);
    CHECK(back.iterations == 4);
    CHECK(back.converged);
}

TEST_CASE("solver settings")
{
    const SolverConfig c = solver_config_from_json(
        json{{"tv_bound", 2.5}, {"refine_method", "levenberg_marquardt"}, {"max_spikes", 4}});
    CHECK(c.tv_bound == 2.5);
    CHECK(c.max_spikes == 4);
    CHECK(c.refine_method == RefineMethod::levenberg_marquardt);
    CHECK(c.max_outer_iterations == SolverConfig{}.max_outer_iterations);
    const SolverConfig again = solver_config_from_json(to_json(c));
    CHECK(again.tv_bound == 2.5);
    CHECK(again.refine_method == RefineMethod::levenberg_marquardt);
    CHECK_THROWS_AS(solver_config_from_json(json{{"refine_method", "newton"}}), FieldError);
    CHECK_THROWS_AS(solver_config_from_json(json{{"max_spikes", "many"}}), FieldError);
    CHECK_THROWS_AS(solver_config_from_json(json{{"tv_bound", -1.0}}), FieldError);
}

TEST_CASE("trial spec")
{
    const TrialSpec s = trial_spec_from_json(
        json{{"f_c", 16}, {"alpha", 0.075}, {"srf", 40}, {"delta_w", 0.05}, {"seed", 9}});
    CHECK(s.cutoff == 16);
    CHECK(s.srf_x == 40);
    CHECK(s.srf_v == 40);
    CHECK(s.seed == 9);
    const TrialSpec t = trial_spec_from_json(to_json(s));
    CHECK(t.alpha == 0.075);
    CHECK(t.delta_w == 0.05);
    CHECK_THROWS_AS(trial_spec_from_json(json{{"K", 0}}), FieldError);
    CHECK_THROWS_AS(trial_spec_from_json(json{{"n_min", 5}, {"n_max", 2}}), FieldError);
}

TEST_CASE("csv outputs")
{
    const TrialSpec s;
    ExperimentRecord r{.trial_id = 3,
                       .config   = Configuration(s.grid(), {particle(0.5, 0.0)}),
                       .error    = {}};
    r.dynamic_ok = true;
    const std::vector<ExperimentRecord> recs{r};
    const std::string csv = records_csv(recs);
    CHECK(csv.find("trial_id") == 0);
    CHECK(csv.find("\n3,") != std::string::npos);

    const std::vector<MapPoint> pts{{0.1, 0.2, 1.5, -0.5, 4}};
    const std::string p = points_csv(pts);
    CHECK(p.rfind("x_mm,y_mm,vx_mm_s,vy_mm_s,window_id\n", 0) == 0);
    CHECK(p.find(",4\n") != std::string::npos);
}

TEST_CASE("pgm image")
{
    Eigen::MatrixXd img(2, 3);
    img << 0, 1, 2, 3, 4, 5;
    const std::string s = pgm(img);
    CHECK(s.rfind("P2\n3 2\n255\n", 0) == 0);
    CHECK(s.find("255") != std::string::npos);
    CHECK(pgm(Eigen::MatrixXd::Zero(2, 2)).rfind("P2", 0) == 0);
}

TEST_CASE("phantom round trip")
{
    const VesselPhantom p    = VesselPhantom::standard();
    const VesselPhantom back = phantom_from_json(to_json(p));
    REQUIRE(back.vessels.size() == p.vessels.size());
    CHECK(back.vessels[1].flow == p.vessels[1].flow);
    CHECK(back.vessels[2].parent == p.vessels[2].parent);
    CHECK(back.vessels[3].control[2] == p.vessels[3].control[2]);
    CHECK(back.sigma == p.sigma);

    json bad = to_json(p);
    bad["vessels"][0]["flow"] = 3;
    CHECK_THROWS_AS(phantom_from_json(bad), FieldError);
}

TEST_CASE("files")
{
    const auto dir = std::filesystem::temp_directory_path() / "dynspike_io_test" / "nested";
    std::filesystem::remove_all(dir.parent_path());
    write_json(dir / "a.json", json{{"k", 1}});
    const Document d = Document::load(dir / "a.json");
    CHECK(d.value().at("k") == 1);
    CHECK(d.source() == (dir / "a.json").string());
    CHECK_THROWS_AS(Document::load(dir / "missing.json"), Error);
    std::filesystem::remove_all(dir.parent_path());
}
