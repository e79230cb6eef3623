#pragma once

#include <dynspike/forward_model.hpp>
#include <dynspike/phase_space.hpp>
#include <dynspike/solver.hpp>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dynspike {

///
/// One Monte Carlo setting. The matching thresholds are stored as
/// super-resolution factors; delta_x() and delta_v() derive the widths.
///
struct TrialSpec
{
    int cutoff     = 20;
    int K          = 2;
    double tau     = 0.5;
    int n_min      = 4;
    int n_max      = 10;
    double w_min   = 0.9;
    double w_max   = 1.1;
    double srf_x   = 1000.0;
    double srf_v   = 1000.0;
    double delta_w = 0.01;
    double alpha   = 0.0;
    double beta    = 0.0;
    std::uint64_t seed = 0;
    /// When positive, only configurations with dynamic_separation >= this
    /// (separation reached on at least three frames) and no ghosts are drawn.
    double min_dynamic_separation = 0.0;
    /// Skips the per-frame static solves (their verdicts stay false).
    bool run_static = true;
    SolverConfig solver{};

    TimeGrid grid() const { return TimeGrid(K, tau, 1); }
    double delta_x() const { return 1.0 / (cutoff * srf_x); }
    double delta_v() const { return 1.0 / (cutoff * K * tau * srf_v); }

    /// Throws InvalidArgument on inconsistent ranges.
    void validate() const;
};

struct ExperimentRecord
{
    int trial_id = 0;
    Configuration config;
    double dynamic_separation = 0.0;
    bool dynamic_ok           = false;
    bool static_any           = false;
    bool static_3             = false;
    int static_successes      = 0;
    double dynamic_seconds    = 0.0;
    double static_seconds     = 0.0;
    /// Message of a solver error that was counted as a failure.
    std::string error;
};

/// seed xor trial_id, spread through std::seed_seq.
std::mt19937_64 trial_rng(std::uint64_t seed, int trial_id);

///
/// N uniform in [n_min, n_max], particles uniform on Omega by rejection from
/// its bounding box, weights uniform in [w_min, w_max]. With a separation
/// requirement, N is redrawn after 1000 rejected draws at the same N.
/// With nonzero beta, draws whose curved trajectories leave [0,1] are rejected.
///
Configuration random_configuration(const TrialSpec& spec, std::mt19937_64& rng);

/// Measurements of cfg under the spec's curvature and noise.
MeasurementTensor synthesize(const TrialSpec& spec, const Configuration& cfg,
                             std::mt19937_64& rng);

///
/// Runs the dynamic solve and the per-frame static solves on one
/// configuration. Solver errors become failed verdicts.
///
ExperimentRecord run_trial(const TrialSpec& spec, const Configuration& cfg,
                           std::mt19937_64& rng, int trial_id = 0);

/// Draws a configuration, then runs it.
ExperimentRecord run_trial(const TrialSpec& spec, std::mt19937_64& rng,
                           int trial_id = 0);

struct BinSpec
{
    int count = 20;
    double lo = 0.0;
    double hi = 5.0;
};

struct CampaignBin
{
    double lo           = 0.0;
    double hi           = 0.0;
    int n               = 0;
    double rate_dynamic = 0.0;
    double rate_static  = 0.0;
    double rate_static3 = 0.0;
};

struct CampaignResult
{
    std::vector<ExperimentRecord> records;
    std::vector<CampaignBin> bins;
};

///
/// n_trials independent trials (trial i seeded by trial_rng(spec.seed, i)),
/// run on `threads` workers (0: hardware concurrency), binned by
/// dynamic_separation * f_c. Values outside [lo, hi) fall in the first or
/// last bin so the counts add up to n_trials.
///
CampaignResult run_campaign(const TrialSpec& spec, int n_trials,
                            const BinSpec& bins = {}, int threads = 0);

/// Bins from finished records.
std::vector<CampaignBin> bin_records(const std::vector<ExperimentRecord>& records,
                                     int cutoff, const BinSpec& bins);

/// Columns bin_lo, bin_hi, n, rate_dynamic, rate_static, rate_static3.
std::string campaign_csv(const std::vector<CampaignBin>& bins);

/// Overall success rates (dynamic, static, static3) of a record set.
struct Rates
{
    double dynamic = 0.0;
    double static_any = 0.0;
    double static_3 = 0.0;
};
Rates overall_rates(const std::vector<ExperimentRecord>& records);

} // namespace dynspike
