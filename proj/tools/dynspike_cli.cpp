// dynspike: simulate, reconstruct, certify, experiment and ultrasound runs.
//
// Every command reads an optional JSON config (--config), applies the flag
// overrides and writes its outputs plus manifest.json into --out.

#include <dynspike/certificates.hpp>
#include <dynspike/experiments.hpp>
#include <dynspike/forward_model.hpp>
#include <dynspike/io.hpp>
#include <dynspike/solver.hpp>
#include <dynspike/ultrasound.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

#ifndef DYNSPIKE_VERSION
#define DYNSPIKE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace dynspike;
using io::json;

namespace {

constexpr int exit_config    = 2;
constexpr int exit_numerical = 3;

struct Options
{
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::optional<int> trials;
    std::optional<double> alpha;
    std::optional<double> beta;
};

class Run
{
public:
    Run(std::string command, const Options& opt)
        : m_command(std::move(command)), m_opt(opt), m_dir(opt.out),
          m_start(std::chrono::steady_clock::now())
    {
    }

    const fs::path& dir() const { return m_dir; }

    io::Document config() const
    {
        if (m_opt.config.empty())
        {
            return io::Document::parse("{}", "<defaults>");
        }
        return io::Document::load(m_opt.config);
    }
    fs::path config_dir() const
    {
        return m_opt.config.empty() ? fs::current_path()
                                    : fs::absolute(m_opt.config).parent_path();
    }

    void snapshot(json resolved) { m_resolved = std::move(resolved); }
    void seed(std::uint64_t s) { m_seed = s; }
    void time(const std::string& name, double seconds) { m_timings[name] = seconds; }

    void text(const std::string& name, std::string_view body)
    {
        io::write_text(m_dir / name, body);
        m_outputs.push_back(name);
    }
    void write(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }

    void finish(const json& error = nullptr)
    {
        json m{{"command", m_command},
               {"config", m_resolved},
               {"config_file", m_opt.config},
               {"seed", m_seed},
               {"output_dir", m_dir.string()},
               {"version", DYNSPIKE_VERSION},
               {"threads", m_opt.threads},
               {"status", error.is_null() ? "ok" : "error"},
               {"outputs", m_outputs}};
        m_timings["total"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - m_start).count();
        m["timings_s"] = m_timings;
        if (!error.is_null())
        {
            m["error"] = error;
        }
        try
        {
            io::write_json(m_dir / "manifest.json", m);
        }
        catch (const std::exception& e)
        {
            std::cerr << json{{"error", {{"type", "io"}, {"message", e.what()}}}}.dump()
                      << "\n";
        }
    }

private:
    std::string m_command;
    Options m_opt;
    fs::path m_dir;
    std::chrono::steady_clock::time_point m_start;
    json m_resolved = json::object();
    json m_seed     = nullptr;
    json m_timings  = json::object();
    std::vector<std::string> m_outputs;
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const json& section(const json& j, const char* key)
{
    static const json empty = json::object();
    return j.is_object() && j.contains(key) ? j.at(key) : empty;
}

void require(const io::Document& doc, const char* key)
{
    doc.read([&](const json& j) {
        if (!j.is_object() || !j.contains(key))
        {
            throw io::FieldError("", std::string("missing field '") + key + "'");
        }
        return 0;
    });
}

// --- simulate ---------------------------------------------------------------------------

void simulate(Run& run, const Options& opt)
{
    const io::Document doc = run.config();
    const json& cfg        = doc.value();
    const std::string model = doc.read([](const json& j) {
        return j.value("model", std::string("fourier"));
    });

    if (model == "fourier")
    {
        TrialSpec spec = doc.read_at("/trial", [](const json& j) {
            return io::trial_spec_from_json(j);
        });
        spec.seed  = opt.seed.value_or(cfg.value("seed", spec.seed));
        spec.alpha = opt.alpha.value_or(cfg.value("alpha", spec.alpha));
        spec.beta  = opt.beta.value_or(cfg.value("beta", spec.beta));
        spec.validate();
        run.seed(spec.seed);

        auto rng                  = trial_rng(spec.seed, 0);
        const Configuration truth = cfg.contains("configuration")
                                        ? doc.read_at("/configuration", io::configuration_from_json)
                                        : random_configuration(spec, rng);
        if (!(truth.grid() == spec.grid()))
        {
            spec.K   = truth.grid().K();
            spec.tau = truth.grid().tau();
        }
        const MeasurementTensor y = synthesize(spec, truth, rng);
        run.snapshot({{"model", model}, {"trial", io::to_json(spec)}});
        run.write("measurements.json", io::to_json(y));
        run.write("truth.json", io::to_json(truth));
    }
    else if (model == "psf")
    {
        require(doc, "configuration");
        const Configuration truth = doc.read_at("/configuration", io::configuration_from_json);
        PixelGrid pixels;
        double sigma = 0.04;
        doc.read([&](const json& j) {
            const json& p = section(j, "pixels");
            pixels.width  = p.value("width", pixels.width);
            pixels.height = p.value("height", pixels.height);
            pixels.pitch  = p.value("pitch_mm", pixels.pitch);
            sigma         = j.value("sigma", sigma);
            return 0;
        });
        const double alpha      = opt.alpha.value_or(cfg.value("alpha", 0.0));
        const std::uint64_t sd  = opt.seed.value_or(cfg.value("seed", std::uint64_t{0}));
        run.seed(sd);
        const PSFOperator op(sigma, pixels, truth.grid());
        const FrameStack frames = add_noise(apply_psf(op, truth), NoiseSpec{alpha, sd});
        run.snapshot({{"model", model},
                      {"alpha", alpha},
                      {"sigma", sigma},
                      {"pixels",
                       {{"width", pixels.width},
                        {"height", pixels.height},
                        {"pitch_mm", pixels.pitch}}}});
        run.write("frames.json", io::to_json(frames));
        run.write("truth.json", io::to_json(truth));
    }
    else
    {
        const auto p = doc.locate("/model");
        throw io::ParseError(doc.source(), p.line, p.column, "/model",
                             "model must be \"fourier\" or \"psf\"");
    }
}

// --- reconstruct ------------------------------------------------------------------------

void reconstruct(Run& run, const Options& opt)
{
    const io::Document doc = run.config();
    const json& cfg        = doc.value();
    SolverConfig solver    = doc.read_at("/solver", [](const json& j) {
        return io::solver_config_from_json(j);
    });
    const bool explicit_bound = section(cfg, "solver").contains("tv_bound");
    const bool explicit_tol   = section(cfg, "solver").contains("residual_tolerance");
    const double alpha        = opt.alpha.value_or(cfg.value("alpha", 0.0));
    const std::string mode    = cfg.value("mode", std::string("dynamic"));
    if (mode != "dynamic" && mode != "static")
    {
        const auto p = doc.locate("/mode");
        throw io::ParseError(doc.source(), p.line, p.column, "/mode",
                             "mode must be \"dynamic\" or \"static\"");
    }

    const fs::path input = doc.read([&](const json& j) {
        if (j.contains("measurements"))
        {
            return run.config_dir() / j.at("measurements").get<std::string>();
        }
        if (j.contains("frames"))
        {
            return run.config_dir() / j.at("frames").get<std::string>();
        }
        throw io::FieldError("", "config needs \"measurements\" or \"frames\"");
    });
    const io::Document data = io::Document::load(input);
    run.snapshot({{"mode", mode},
                  {"input", input.string()},
                  {"alpha", alpha},
                  {"solver", io::to_json(solver)}});

    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.contains("frames"))
    {
        const FrameStack stack = data.read(io::frames_from_json);
        const PSFOperator op(stack.sigma, stack.pixels, stack.grid);
        if (alpha > 0.0 && !explicit_tol)
        {
            solver.residual_tolerance =
                alpha * std::sqrt(static_cast<double>(op.measurement_size()));
        }
        Reconstruction r;
        const double bound = explicit_bound ? solver.tv_bound : window_tv_bound(stack, op);
        if (bound > 0.0)
        {
            solver.tv_bound = bound;
            r               = solve_dynamic(stack, op, solver);
        }
        run.write("reconstruction.json", io::to_json(r, stack.grid));
    }
    else
    {
        const MeasurementTensor y = data.read(io::measurements_from_json);
        if (!y.all_finite())
        {
            throw NumericalFailure("measurements contain non-finite values");
        }
        // The l = 0 entries carry the total weight of each frame.
        auto frame_mass = [&](int k) { return std::abs(y(0, k)); };
        if (mode == "dynamic")
        {
            const FourierOperator op(y.cutoff(), y.grid());
            double mass = 0.0;
            for (int k : y.grid().frames())
            {
                mass += frame_mass(k) / y.grid().frame_count();
            }
            if (alpha > 0.0 && !explicit_tol)
            {
                solver.residual_tolerance = noise_floor(alpha, y.size());
            }
            Reconstruction r;
            const double bound = explicit_bound ? solver.tv_bound : mass;
            if (bound > 1e-12 * std::max(1.0, y.norm()) && y.norm() > 0.0)
            {
                solver.tv_bound = bound;
                r               = solve_dynamic(y, op, solver);
            }
            run.write("reconstruction.json", io::to_json(r, y.grid()));
        }
        else
        {
            const StaticFourierOperator op(y.cutoff());
            json frames = json::array();
            for (int k : y.grid().frames())
            {
                SolverConfig s = solver;
                if (alpha > 0.0 && !explicit_tol)
                {
                    s.residual_tolerance = noise_floor(alpha, op.measurement_size());
                }
                StaticReconstruction r;
                const Eigen::VectorXcd yk = y.frame(k);
                const double bound        = explicit_bound ? s.tv_bound : frame_mass(k);
                if (bound > 0.0 && yk.norm() > 0.0)
                {
                    s.tv_bound = bound;
                    r          = solve_static(yk, op, s);
                }
                frames.push_back(io::to_json(r, k));
            }
            run.write("static_reconstruction.json", {{"frames", frames}});
        }
    }
    run.time("solve", seconds_since(t0));
}

// --- certify ------------------------------------------------------------------------------

void certify(Run& run, const Options&)
{
    const io::Document doc = run.config();
    const json& cfg        = doc.value();
    require(doc, "configuration");
    const Configuration config = doc.read_at("/configuration", io::configuration_from_json);
    const int cutoff  = doc.read([](const json& j) { return j.value("f_c", 128); });
    const std::string construction =
        cfg.value("construction", std::string("static_average"));
    const double margin = cfg.value("margin", 1e-3);
    const int res = cfg.value("grid_resolution", 4 * cutoff * config.grid().frame_count());

    std::vector<Complex> eta(config.size(), Complex(1.0, 0.0));
    if (cfg.contains("eta"))
    {
        doc.read([&](const json& j) {
            const json& e = j.at("eta");
            if (!e.is_array() || e.size() != config.size())
            {
                throw io::FieldError("/eta", "eta needs one entry per particle");
            }
            for (std::size_t i = 0; i < e.size(); ++i)
            {
                eta[i] = e[i].is_array() ? Complex(e[i].at(0).get<double>(),
                                                   e[i].at(1).get<double>())
                                         : Complex(e[i].get<double>(), 0.0);
            }
            return 0;
        });
    }

    json resolved{{"construction", construction},
                  {"f_c", cutoff},
                  {"margin", margin},
                  {"grid_resolution", res},
                  {"configuration", io::to_json(config)}};
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<DynamicalCertificate> cert;
    if (construction == "static_average")
    {
        cert.emplace(build_static_average(config, eta, config.grid().frames(), cutoff));
    }
    else if (construction == "perturbed" || construction == "find_perturbation")
    {
        double eps = cfg.value("epsilon", 0.08);
        if (construction == "find_perturbation")
        {
            eps = find_perturbation(config, cutoff, margin, res);
        }
        resolved["epsilon"] = eps;
        cert.emplace(build_perturbed_certificate(config, eps, cutoff));
    }
    else
    {
        const auto p = doc.locate("/construction");
        throw io::ParseError(doc.source(), p.line, p.column, "/construction",
                             "construction must be static_average, perturbed or "
                             "find_perturbation");
    }
    run.snapshot(resolved);
    run.write("certificate.json", io::to_json(*cert));
    const VerificationReport report = verify_certificate(*cert, config, eta, res, margin);
    run.write("verification.json", io::to_json(report));
    run.time("certificate", seconds_since(t0));

    if (cfg.contains("stability"))
    {
        const StabilityInputs in = doc.read([&](const json& j) {
            const json& s = j.at("stability");
            if (!s.contains("delta_x") || !s.contains("delta_v"))
            {
                throw io::FieldError("/stability", "stability needs delta_x and delta_v");
            }
            return StabilityInputs{s.at("delta_x").get<double>(), s.at("delta_v").get<double>(),
                                   cutoff, config, s.value("grid_resolution", 0)};
        });
        run.write("stability.json", io::to_json(check_stability_conditions(in)));
    }
}

// --- experiment ----------------------------------------------------------------------------

void experiment(Run& run, const Options& opt)
{
    const io::Document doc = run.config();
    const json& cfg        = doc.value();
    TrialSpec spec         = doc.read_at("/trial", [](const json& j) {
        return io::trial_spec_from_json(j);
    });
    const BinSpec bins = doc.read_at("/bins", [](const json& j) {
        return io::bin_spec_from_json(j);
    });
    spec.seed        = opt.seed.value_or(spec.seed);
    spec.alpha       = opt.alpha.value_or(spec.alpha);
    spec.beta        = opt.beta.value_or(spec.beta);
    spec.validate();
    const int trials = opt.trials.value_or(cfg.value("trials", 1000));
    if (trials < 1)
    {
        throw InvalidArgument("trials must be >= 1");
    }
    run.seed(spec.seed);
    run.snapshot({{"trial", io::to_json(spec)},
                  {"trials", trials},
                  {"bins", {{"count", bins.count}, {"lo", bins.lo}, {"hi", bins.hi}}}});

    const auto t0               = std::chrono::steady_clock::now();
    const CampaignResult result = run_campaign(spec, trials, bins, opt.threads);
    run.time("campaign", seconds_since(t0));
    run.text("campaign.csv", campaign_csv(result.bins));
    run.text("records.csv", io::records_csv(result.records));
    const Rates rates = overall_rates(result.records);
    run.write("summary.json", {{"trials", trials},
                               {"rate_dynamic", rates.dynamic},
                               {"rate_static", rates.static_any},
                               {"rate_static3", rates.static_3}});
}

// --- ultrasound ----------------------------------------------------------------------------

void ultrasound(Run& run, const Options& opt)
{
    const io::Document doc = run.config();
    const json& cfg        = doc.value();
    const VesselPhantom phantom =
        cfg.contains("phantom")
            ? doc.read_at("/phantom", [](const json& j) { return io::phantom_from_json(j); })
            : VesselPhantom::standard();
    BubbleProcess bubbles = doc.read_at("/bubbles", [](const json& j) {
        return io::bubble_process_from_json(j);
    });
    AcquisitionSpec acq_spec = doc.read_at("/acquisition", [](const json& j) {
        return io::acquisition_from_json(j);
    });
    PipelineSettings settings = doc.read_at("/pipeline", [](const json& j) {
        return io::pipeline_from_json(j);
    });
    bubbles.seed = opt.seed.value_or(bubbles.seed);
    if (opt.alpha)
    {
        acq_spec.alpha = *opt.alpha;
        settings.alpha = *opt.alpha;
    }
    acq_spec.validate();
    run.seed(bubbles.seed);
    run.snapshot({{"phantom", io::to_json(phantom)},
                  {"bubbles",
                   {{"activation", bubbles.activation},
                    {"mean_lifetime", bubbles.mean_lifetime},
                    {"seed", bubbles.seed}}},
                  {"acquisition",
                   {{"tau", acq_spec.tau},
                    {"duration", acq_spec.duration},
                    {"alpha", acq_spec.alpha}}},
                  {"pipeline",
                   {{"K", settings.K},
                    {"rel_tol", settings.rel_tol},
                    {"alpha", settings.alpha},
                    {"min_bubbles", settings.min_bubbles},
                    {"solver", io::to_json(settings.solver)}}}});

    auto t0                 = std::chrono::steady_clock::now();
    const Acquisition acq   = simulate_acquisition(phantom, bubbles, acq_spec);
    run.time("simulate", seconds_since(t0));
    t0                      = std::chrono::steady_clock::now();
    const PipelineResult pr = run_pipeline(acq.sequence, settings, opt.threads);
    run.time("pipeline", seconds_since(t0));

    run.text("points.csv", io::points_csv(pr.points));
    run.text("bmode.pgm", io::pgm(pr.bmode));
    run.write("bmode.json", io::image_to_json(pr.bmode, acq.sequence.pixels));
    json windows = json::array();
    for (const auto& w : pr.windows)
    {
        windows.push_back({{"window_id", w.window_id},
                           {"first", w.window.first},
                           {"count", w.window.count},
                           {"tv_bound", w.tv_bound},
                           {"skipped", w.skipped},
                           {"spikes", w.reconstruction.particles.size()},
                           {"residual_norm", w.reconstruction.residual_norm}});
    }
    json intervals = json::array();
    for (const auto& i : pr.selection.intervals)
    {
        intervals.push_back({{"first", i.first}, {"count", i.count}});
    }
    run.write("windows.json", {{"intervals", intervals}, {"windows", windows}});
    const PointScore score = score_points(phantom, pr.points);
    run.write("summary.json", {{"frames", acq.sequence.frames.size()},
                               {"windows", pr.windows.size()},
                               {"points", score.count},
                               {"near_fraction", score.near_fraction},
                               {"sign_fraction", score.sign_fraction}});
}

json error_json(const std::string& type, const std::string& message)
{
    return {{"type", type}, {"message", message}};
}

int dispatch(const std::string& command, const Options& opt,
             void (*body)(Run&, const Options&))
{
    Run run(command, opt);
    json err;
    int code = 0;
    try
    {
        body(run, opt);
    }
    catch (const io::ParseError& e)
    {
        err = error_json("config", e.what());
        err["file"]    = e.source();
        err["line"]    = e.line();
        err["column"]  = e.column();
        err["pointer"] = e.pointer();
        code           = exit_config;
    }
    catch (const InvalidArgument& e)
    {
        err  = error_json("config", e.what());
        code = exit_config;
    }
    catch (const json::exception& e)
    {
        err  = error_json("config", e.what());
        code = exit_config;
    }
    catch (const SeparationViolation& e)
    {
        err  = error_json("separation", e.what());
        code = exit_numerical;
    }
    catch (const DomainError& e)
    {
        err  = error_json("domain", e.what());
        code = exit_numerical;
    }
    catch (const std::exception& e)
    {
        err  = error_json("numerical", e.what());
        code = exit_numerical;
    }
    if (code != 0)
    {
        std::cerr << json{{"error", err}}.dump() << "\n";
    }
    run.finish(err);
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dynamic spike super-resolution in phase space"};
    app.set_version_flag("--version", DYNSPIKE_VERSION);
    app.require_subcommand(1);

    Options opt;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "Output directory")->capture_default_str();
        sub->add_option("--seed", opt.seed, "Random seed");
        sub->add_option("--threads", opt.threads, "Worker threads (0: all cores)")
            ->check(CLI::NonNegativeNumber);
        sub->add_option("--alpha", opt.alpha, "Noise level")->check(CLI::NonNegativeNumber);
    };

    auto* sim = app.add_subcommand("simulate", "Synthesize measurements");
    common(sim);
    sim->add_option("--beta", opt.beta, "Trajectory curvature");
    auto* rec = app.add_subcommand("reconstruct", "Run the solver on a measurement file");
    common(rec);
    auto* cert = app.add_subcommand("certify", "Build and verify a dual certificate");
    common(cert);
    auto* exp = app.add_subcommand("experiment", "Monte Carlo success-rate campaign");
    common(exp);
    exp->add_option("--trials", opt.trials, "Number of trials")->check(CLI::PositiveNumber);
    exp->add_option("--beta", opt.beta, "Trajectory curvature");
    auto* us = app.add_subcommand("ultrasound", "Vessel phantom pipeline");
    common(us);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::Success& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        std::cerr << json{{"error", error_json("usage", e.what())}}.dump() << "\n";
        return exit_config;
    }

    if (opt.threads == 0)
    {
        opt.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    }
    if (*sim)
    {
        return dispatch("simulate", opt, simulate);
    }
    if (*rec)
    {
        return dispatch("reconstruct", opt, reconstruct);
    }
    if (*cert)
    {
        return dispatch("certify", opt, certify);
    }
    if (*exp)
    {
        return dispatch("experiment", opt, experiment);
    }
    return dispatch("ultrasound", opt, ultrasound);
}
