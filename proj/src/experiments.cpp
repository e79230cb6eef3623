#include <dynspike/experiments.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

namespace dynspike {

void TrialSpec::validate() const
{
    if (cutoff < 1 || K < 1 || !(tau > 0.0))
    {
        throw InvalidArgument("trial spec needs f_c >= 1, K >= 1, tau > 0");
    }
    if (n_min < 1 || n_max < n_min)
    {
        throw InvalidArgument("trial spec needs 1 <= n_min <= n_max");
    }
    if (!(w_min > 0.0) || w_max < w_min)
    {
        throw InvalidArgument("trial spec needs 0 < w_min <= w_max");
    }
    if (!(srf_x > 0.0) || !(srf_v > 0.0) || !(delta_w > 0.0))
    {
        throw InvalidArgument("trial spec thresholds must be positive");
    }
    if (!(alpha >= 0.0) || !std::isfinite(beta))
    {
        throw InvalidArgument("trial spec needs alpha >= 0 and finite beta");
    }
}

std::mt19937_64 trial_rng(std::uint64_t seed, int trial_id)
{
    const std::uint64_t s = seed ^ static_cast<std::uint64_t>(trial_id);
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
    return std::mt19937_64(seq);
}

namespace {

bool curved_inside(const TrialSpec& spec, const std::vector<Particle>& ps)
{
    const TimeGrid grid = spec.grid();
    for (const auto& p : ps)
    {
        const double a = 2.0 * p.velocity[0] * spec.beta / grid.half_window();
        for (int k = -grid.K(); k <= grid.K(); ++k)
        {
            const double s = k * grid.tau();
            const double x = p.position[0] + p.velocity[0] * s + 0.5 * a * s * s;
            if (x < 0.0 || x > 1.0)
            {
                return false;
            }
        }
    }
    return true;
}

bool well_separated(const TrialSpec& spec, const Configuration& cfg)
{
    if (cfg.size() < 2)
    {
        return true;
    }
    if (dynamic_separation(cfg) < spec.min_dynamic_separation)
    {
        return false;
    }
    return detect_ghosts(cfg, cfg.grid().frames()).empty();
}

} // namespace

Configuration random_configuration(const TrialSpec& spec, std::mt19937_64& rng)
{
    spec.validate();
    const TimeGrid grid = spec.grid();
    const double vb     = PhaseSpaceDomain(grid).velocity_bound();
    std::uniform_int_distribution<int> count(spec.n_min, spec.n_max);
    std::uniform_real_distribution<double> ux(0.0, 1.0);
    std::uniform_real_distribution<double> uv(-vb, vb);
    std::uniform_real_distribution<double> uw(spec.w_min, spec.w_max);

    for (int n_draws = 0; n_draws < 100000; ++n_draws)
    {
        const int n = count(rng);
        for (int attempt = 0; attempt < 1000; ++attempt)
        {
            std::vector<Particle> ps;
            while (static_cast<int>(ps.size()) < n)
            {
                Vector x = Vector::Constant(1, ux(rng));
                Vector v = Vector::Constant(1, uv(rng));
                if (in_domain(x, v, grid))
                {
                    ps.push_back(Particle{std::move(x), std::move(v), 0.0});
                }
            }
            for (auto& p : ps)
            {
                p.weight = uw(rng);
            }
            if (spec.beta != 0.0 && !curved_inside(spec, ps))
            {
                continue;
            }
            Configuration cfg(grid, std::move(ps));
            if (spec.min_dynamic_separation <= 0.0 || well_separated(spec, cfg))
            {
                return cfg;
            }
        }
    }
    throw NumericalFailure("no configuration satisfies the separation requirement");
}

MeasurementTensor synthesize(const TrialSpec& spec, const Configuration& cfg,
                             std::mt19937_64& rng)
{
    const FourierOperator op(spec.cutoff, spec.grid());
    MeasurementTensor y =
        spec.beta == 0.0
            ? apply_fourier(op, cfg)
            : apply_fourier_curved(
                  op, cfg.particles(),
                  CurvedTrajectorySpec::from_curvature(cfg.particles(), spec.beta,
                                                       cfg.grid()));
    return add_noise(std::move(y), spec.alpha, rng);
}

ExperimentRecord run_trial(const TrialSpec& spec, const Configuration& cfg,
                           std::mt19937_64& rng, int trial_id)
{
    spec.validate();
    using clock = std::chrono::steady_clock;
    ExperimentRecord rec{.trial_id = trial_id, .config = cfg, .error = {}};
    rec.dynamic_separation = cfg.size() >= 2 ? dynamic_separation(cfg) : 1.0;

    const MeasurementTensor y = synthesize(spec, cfg, rng);
    const FourierOperator op(spec.cutoff, spec.grid());
    SolverConfig sc = spec.solver;
    sc.tv_bound     = cfg.tv_norm();

    auto t0 = clock::now();
    try
    {
        SolverConfig dyn = sc;
        if (spec.alpha > 0.0)
        {
            dyn.residual_tolerance = noise_floor(spec.alpha, y.size());
        }
        const Reconstruction r = solve_dynamic(y, op, dyn);
        rec.dynamic_ok         = match_reconstruction(cfg, r.particles,
                                                      {spec.delta_x(), spec.delta_v(),
                                                       spec.delta_w})
                             .success;
    }
    catch (const Error& e)
    {
        rec.error = std::string("dynamic: ") + e.what();
    }
    auto t1            = clock::now();
    rec.dynamic_seconds = std::chrono::duration<double>(t1 - t0).count();

    const StaticFourierOperator sop(spec.cutoff);
    for (int k = -spec.K; spec.run_static && k <= spec.K; ++k)
    {
        try
        {
            SolverConfig st = sc;
            if (spec.alpha > 0.0)
            {
                st.residual_tolerance = noise_floor(spec.alpha, sop.measurement_size());
            }
            const StaticReconstruction r = solve_static(y.frame(k), sop, st);
            if (match_static(cfg, k, r, spec.delta_x(), spec.delta_w).success)
            {
                ++rec.static_successes;
            }
        }
        catch (const Error& e)
        {
            if (rec.error.empty())
            {
                rec.error = "static frame " + std::to_string(k) + ": " + e.what();
            }
        }
    }
    rec.static_any     = rec.static_successes >= 1;
    rec.static_3       = rec.static_successes >= 3;
    rec.static_seconds = std::chrono::duration<double>(clock::now() - t1).count();
    return rec;
}

ExperimentRecord run_trial(const TrialSpec& spec, std::mt19937_64& rng, int trial_id)
{
    const Configuration cfg = random_configuration(spec, rng);
    return run_trial(spec, cfg, rng, trial_id);
}

std::vector<CampaignBin> bin_records(const std::vector<ExperimentRecord>& records,
                                     int cutoff, const BinSpec& bins)
{
    if (bins.count < 1 || !(bins.hi > bins.lo))
    {
        throw InvalidArgument("bins need a positive count and hi > lo");
    }
    std::vector<CampaignBin> out(bins.count);
    const double width = (bins.hi - bins.lo) / bins.count;
    for (int b = 0; b < bins.count; ++b)
    {
        out[b].lo = bins.lo + b * width;
        out[b].hi = bins.lo + (b + 1) * width;
    }
    for (const auto& r : records)
    {
        const double s = r.dynamic_separation * cutoff;
        const int b    = std::clamp(static_cast<int>(std::floor((s - bins.lo) / width)),
                                    0, bins.count - 1);
        out[b].n += 1;
        out[b].rate_dynamic += r.dynamic_ok;
        out[b].rate_static += r.static_any;
        out[b].rate_static3 += r.static_3;
    }
    for (auto& b : out)
    {
        if (b.n > 0)
        {
            b.rate_dynamic /= b.n;
            b.rate_static /= b.n;
            b.rate_static3 /= b.n;
        }
    }
    return out;
}

CampaignResult run_campaign(const TrialSpec& spec, int n_trials, const BinSpec& bins,
                            int threads)
{
    spec.validate();
    if (n_trials < 1)
    {
        throw InvalidArgument("a campaign needs at least one trial");
    }
    if (threads <= 0)
    {
        threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    }
    threads = std::min(threads, n_trials);

    std::vector<std::optional<ExperimentRecord>> slots(n_trials);
    std::atomic<int> next{0};
    std::mutex failure_mutex;
    std::exception_ptr failure;
    auto worker = [&] {
        for (int i = next++; i < n_trials; i = next++)
        {
            try
            {
                auto rng = trial_rng(spec.seed, i);
                slots[i] = run_trial(spec, rng, i);
            }
            catch (...)
            {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                {
                    failure = std::current_exception();
                }
                next = n_trials;
            }
        }
    };
    if (threads == 1)
    {
        worker();
    }
    else
    {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t)
        {
            pool.emplace_back(worker);
        }
    }

    if (failure)
    {
        std::rethrow_exception(failure);
    }
    CampaignResult out;
    for (auto& s : slots)
    {
        out.records.push_back(std::move(*s));
    }
    out.bins = bin_records(out.records, spec.cutoff, bins);
    return out;
}

std::string campaign_csv(const std::vector<CampaignBin>& bins)
{
    std::ostringstream os;
    os << "bin_lo,bin_hi,n,rate_dynamic,rate_static,rate_static3\n";
    os << std::setprecision(10);
    for (const auto& b : bins)
    {
        os << b.lo << ',' << b.hi << ',' << b.n << ',' << b.rate_dynamic << ','
           << b.rate_static << ',' << b.rate_static3 << '\n';
    }
    return os.str();
}

Rates overall_rates(const std::vector<ExperimentRecord>& records)
{
    Rates r;
    if (records.empty())
    {
        return r;
    }
    for (const auto& rec : records)
    {
        r.dynamic += rec.dynamic_ok;
        r.static_any += rec.static_any;
        r.static_3 += rec.static_3;
    }
    const double n = static_cast<double>(records.size());
    r.dynamic /= n;
    r.static_any /= n;
    r.static_3 /= n;
    return r;
}

} // namespace dynspike
