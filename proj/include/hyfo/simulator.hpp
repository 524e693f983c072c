#pragma once

// Synthetic tournaments: series-backed IFPs, a forecaster pool with skill,
// noise and machine anchoring, daily machine forecasts, slot replays, and
// the sparsity and backcasting experiments built on them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "hyfo/aggregation.hpp"
#include "hyfo/allocation.hpp"
#include "hyfo/core.hpp"
#include "hyfo/parallel.hpp"
#include "hyfo/rng.hpp"
#include "hyfo/scoring.hpp"
#include "hyfo/stats.hpp"
#include "hyfo/tsmodels.hpp"

namespace hyfo::sim {

struct Cohort {
    std::string name = "default";
    double fraction = 1.0;
    double anchor_to_machine = 0.0;  ///< blend weight on the machine vector when it is shown
    double skill_mean = 0.5;         ///< information weight on the true posterior, clamped to [0,1]
    double skill_sd = 0.3;
    double noise_median = 0.35;      ///< per-user log-space noise scale (lognormal)
    double noise_log_sd = 0.8;
    double overconfidence = 1.3;     ///< sharpening of the informative part
};

/// Latent process: level + drift*t + ARMA(1,1) noise.
struct SeriesParams {
    double ar = 0.995;
    double ma = 0.2;
    double drift = 0.0;
    double noise_sd = 1.0;
    double level = 100.0;
};

struct SimConfig {
    std::uint64_t seed = 1;
    std::size_t n_ifps = 60;
    double duration_mean = 87.07;
    double duration_sd = 55.85;
    Day min_duration = 14;
    Day season_start = make_day(2019, 4, 1);
    Day season_days = 245;
    double share_binary = 0.51;
    double share_ordinal = 0.39;  ///< remainder is nominal
    std::size_t n_forecasters = 100;
    double activity_per_week = 5.0;
    double update_preference = 0.6;  ///< chance a forecast revisits an IFP the user already holds
    double shared_bias_sd = 0.6;     ///< per-IFP log-space tilt common to every human (correlated crowd error)
    std::vector<Cohort> cohorts = default_cohorts();
    SeriesParams series;
    std::size_t history_days = 120;
    Day machine_refit_days = 28;
    ts::MachineModel machine_model = ts::MachineModel::phe2;
    bool emit_machine = true;
    bool swift_ordering = false;
    std::size_t threads = 1;

    static std::vector<Cohort> default_cohorts() {
        Cohort models;
        models.name = "models";
        models.fraction = 0.5;
        models.anchor_to_machine = 0.3;
        Cohort control;
        control.name = "control";
        control.fraction = 0.5;
        return {models, control};
    }

    void validate() const {
        const auto fail = [](const std::string& why) { throw ValidationError("simulation config: " + why); };
        if (n_ifps == 0) fail("n_ifps must be > 0");
        if (!(duration_mean > min_duration && duration_sd > 0.0)) fail("duration mean must exceed the minimum, sd > 0");
        if (min_duration < 1 || season_days < min_duration) fail("season shorter than the minimum duration");
        if (!(share_binary >= 0.0 && share_ordinal >= 0.0 && share_binary + share_ordinal <= 1.0))
            fail("kind shares must be non-negative and sum to <= 1");
        if (!(activity_per_week > 0.0)) fail("activity rate must be > 0");
        if (!(update_preference >= 0.0 && update_preference <= 1.0)) fail("update_preference must be in [0,1]");
        if (!(shared_bias_sd >= 0.0)) fail("shared_bias_sd must be >= 0");
        if (cohorts.empty()) fail("need at least one cohort");
        for (const auto& c : cohorts) {
            if (!(c.fraction > 0.0)) fail("cohort fraction must be > 0");
            if (!(c.anchor_to_machine >= 0.0 && c.anchor_to_machine <= 1.0)) fail("anchor must be in [0,1]");
            if (!(c.noise_median >= 0.0 && c.noise_log_sd >= 0.0 && c.overconfidence > 0.0)) fail("bad cohort noise");
        }
        if (!(series.noise_sd >= 0.0)) fail("series noise sd must be >= 0");
        if (history_days < 12) fail("history_days must be >= 12");
        if (machine_refit_days < 1) fail("machine_refit_days must be >= 1");
    }
};

struct Forecaster {
    std::string id;
    std::size_t cohort = 0;
    double skill = 0.7;
    double noise = 0.35;
    double overconfidence = 1.3;
    double anchor = 0.0;
};

struct SimIfp {
    Ifp ifp;                                ///< public record, resolution included
    Day history_start = 0;
    std::vector<double> path;               ///< latent values, history_start..close_date
    std::vector<double> innovations;        ///< ARMA innovations aligned with path
    std::vector<double> bin_thresholds;     ///< hidden cut points (equal to ifp.thresholds unless nominal)
    std::vector<std::size_t> option_of_bin; ///< bin -> public option index
    std::vector<double> shared_bias;        ///< per public option, added to every human's log view
    double realized = 0.0;

    double value_at(Day d) const { return path[static_cast<std::size_t>(d - history_start)]; }
};

struct World {
    SimConfig config;
    std::vector<SimIfp> ifps;
    std::vector<Forecaster> forecasters;
};

// ---------------------------------------------------------------------------
// World generation

namespace detail {

inline std::string format_threshold(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline Day draw_duration(const SimConfig& c, Rng& rng) {
    // min + Gamma matched to the target mean and sd
    const double excess_mean = c.duration_mean - static_cast<double>(c.min_duration);
    const double shape = excess_mean * excess_mean / (c.duration_sd * c.duration_sd);
    const double scale = c.duration_sd * c.duration_sd / excess_mean;
    std::gamma_distribution<double> g(shape, scale);
    const double d = static_cast<double>(c.min_duration) + g(rng);
    return static_cast<Day>(std::clamp(std::lround(d), static_cast<long>(c.min_duration), static_cast<long>(c.season_days)));
}

}  // namespace detail

/// IFPs, latent paths, thresholds, resolutions and the forecaster pool.
/// Every IFP draws from its own stream, every forecaster from its own.
inline World gen_world(const SimConfig& config) {
    config.validate();
    World world;
    world.config = config;
    const auto& sp = config.series;
    const std::size_t burn_in = 50;

    for (std::size_t i = 0; i < config.n_ifps; ++i) {
        Rng rng = substream(config.seed, "ifp", i);
        SimIfp s;
        const Day duration = detail::draw_duration(config, rng);
        const Day latest_open = config.season_days - duration;
        const auto weeks = static_cast<int>(latest_open / 7);
        const Day open_offset = 7 * std::uniform_int_distribution<int>(0, std::max(0, weeks))(rng);
        Ifp& ifp = s.ifp;
        ifp.id = "ifp-" + std::to_string(i + 1);
        ifp.open_date = config.season_start + open_offset;
        ifp.close_date = ifp.open_date + duration - 1;

        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        std::size_t c = 2;
        if (u < config.share_binary) {
            ifp.kind = IfpKind::binary;
        } else {
            ifp.kind = u < config.share_binary + config.share_ordinal ? IfpKind::ordinal : IfpKind::nominal;
            c = static_cast<std::size_t>(std::uniform_int_distribution<int>(3, 5)(rng));
        }

        // latent path
        s.history_start = ifp.open_date - static_cast<Day>(config.history_days);
        const auto n = static_cast<std::size_t>(ifp.close_date - s.history_start + 1);
        std::normal_distribution<double> z(0.0, 1.0);
        double x = 0.0, e_prev = 0.0;
        for (std::size_t t = 0; t < burn_in; ++t) {
            const double e = sp.noise_sd * z(rng);
            x = sp.ar * x + e + sp.ma * e_prev;
            e_prev = e;
        }
        s.path.resize(n);
        s.innovations.resize(n);
        for (std::size_t t = 0; t < n; ++t) {
            const double e = sp.noise_sd * z(rng);
            x = sp.ar * x + e + sp.ma * e_prev;
            e_prev = e;
            s.innovations[t] = e;
            s.path[t] = sp.level + sp.drift * static_cast<double>(t) + x;
        }

        // thresholds at equal-probability quantiles of the pre-open window
        std::vector<double> window(s.path.begin(), s.path.begin() + static_cast<std::ptrdiff_t>(config.history_days));
        for (std::size_t k = 1; k < c; ++k)
            s.bin_thresholds.push_back(stats::quantile(window, static_cast<double>(k) / static_cast<double>(c)));
        for (std::size_t k = 1; k < s.bin_thresholds.size(); ++k)
            if (!(s.bin_thresholds[k] > s.bin_thresholds[k - 1]))
                s.bin_thresholds[k] = s.bin_thresholds[k - 1] + 1e-6 * (1.0 + std::abs(s.bin_thresholds[k - 1]));

        s.option_of_bin.resize(c);
        std::iota(s.option_of_bin.begin(), s.option_of_bin.end(), std::size_t{0});
        if (ifp.kind == IfpKind::nominal) {
            std::shuffle(s.option_of_bin.begin(), s.option_of_bin.end(), rng);
            for (std::size_t k = 0; k < c; ++k) ifp.options.push_back(std::string(1, static_cast<char>('A' + k)));
            ifp.title = "Which category will series " + std::to_string(i + 1) + " fall in?";
        } else {
            ifp.series_ref = "series-" + std::to_string(i + 1);
            ifp.thresholds = s.bin_thresholds;
            for (std::size_t k = 0; k < c; ++k) {
                if (k == 0) ifp.options.push_back("<= " + detail::format_threshold(s.bin_thresholds[0]));
                else if (k + 1 == c) ifp.options.push_back("> " + detail::format_threshold(s.bin_thresholds.back()));
                else
                    ifp.options.push_back("(" + detail::format_threshold(s.bin_thresholds[k - 1]) + ", " +
                                          detail::format_threshold(s.bin_thresholds[k]) + "]");
            }
            ifp.title = "What will series " + std::to_string(i + 1) + " read on " + format_iso_date(ifp.close_date) + "?";
        }
        std::normal_distribution<double> bias(0.0, config.shared_bias_sd);
        for (std::size_t k = 0; k < c; ++k) s.shared_bias.push_back(bias(rng));
        s.realized = s.value_at(ifp.close_date);
        ifp.resolved_option = s.option_of_bin[ts::bin_of(s.realized, s.bin_thresholds)];
        validate_ifp(ifp);
        world.ifps.push_back(std::move(s));
    }

    double total_fraction = 0.0;
    for (const auto& c : config.cohorts) total_fraction += c.fraction;
    for (std::size_t u = 0; u < config.n_forecasters; ++u) {
        Rng rng = substream(config.seed, "forecaster-traits", u);
        Forecaster f;
        f.id = "u" + std::to_string(u + 1);
        // deterministic cohort quotas by index
        const double pos = (static_cast<double>(u) + 0.5) / static_cast<double>(config.n_forecasters) * total_fraction;
        double acc = 0.0;
        for (std::size_t k = 0; k < config.cohorts.size(); ++k) {
            acc += config.cohorts[k].fraction;
            f.cohort = k;
            if (pos < acc) break;
        }
        const Cohort& c = config.cohorts[f.cohort];
        std::normal_distribution<double> z(0.0, 1.0);
        f.skill = std::clamp(c.skill_mean + c.skill_sd * z(rng), 0.0, 1.0);
        f.noise = c.noise_median * std::exp(c.noise_log_sd * z(rng));
        f.overconfidence = c.overconfidence;
        f.anchor = c.anchor_to_machine;
        world.forecasters.push_back(std::move(f));
    }
    return world;
}

/// Probability of each public option given the latent path through day-1,
/// under the exact generating process.
inline Probs true_posterior(const World& world, const SimIfp& s, Day day) {
    const auto& sp = world.config.series;
    const Day last_obs = day - 1;
    const auto h = static_cast<int>(s.ifp.close_date - last_obs);
    const std::size_t c = s.ifp.num_options();
    Probs bins;
    if (h <= 0) {
        bins.assign(c, 0.0);
        bins[ts::bin_of(s.realized, s.bin_thresholds)] = 1.0;
    } else {
        const auto t_last = static_cast<std::size_t>(last_obs - s.history_start);
        const auto trend = [&](std::size_t t) { return sp.level + sp.drift * static_cast<double>(t); };
        ts::FittedModel m;
        m.family = ts::ModelFamily::arima;
        m.order = {1, 0, 1};
        m.ar = {sp.ar};
        m.ma = {sp.ma};
        m.history = {s.path[t_last] - trend(t_last)};
        m.residuals = {s.innovations[t_last]};
        m.residual_variance = sp.noise_sd * sp.noise_sd;
        auto dist = ts::forecast(m, h).back();
        dist.mean += trend(t_last + static_cast<std::size_t>(h));
        dist.variance = std::max(dist.variance, 1e-12 * (1.0 + std::abs(dist.mean)) * (1.0 + std::abs(dist.mean)));
        bins = ts::to_option_probs(dist, s.bin_thresholds);
    }
    Probs out(c);
    for (std::size_t b = 0; b < c; ++b) out[s.option_of_bin[b]] = bins[b];
    return out;
}

/// What the crowd collectively believes: the true posterior tilted by the
/// IFP's shared bias.
inline Probs crowd_view(const World& world, const SimIfp& s, Day day) {
    Probs p = true_posterior(world, s, day);
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::max(p[i], 1e-12) * std::exp(s.shared_bias[i]);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

// ---------------------------------------------------------------------------
// Forecast generation

/// One human forecast: the true posterior sharpened by skill x overconfidence
/// and perturbed in log space, then blended toward the machine vector by the
/// anchor weight when a machine forecast is shown. Noise is always drawn, so
/// machine availability never shifts the forecaster's stream.
inline Probs gen_human_forecast(const Forecaster& f, std::span<const double> truth, const std::optional<Probs>& machine,
                                Rng& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    const std::size_t c = truth.size();
    std::vector<double> logit(c);
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < c; ++i) {
        const double p = std::max(truth[i], 1e-12);
        logit[i] = f.skill * f.overconfidence * std::log(p) + f.noise * z(rng);
        hi = std::max(hi, logit[i]);
    }
    Probs q(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        q[i] = std::exp(logit[i] - hi);
        sum += q[i];
    }
    for (double& v : q) v /= sum;
    if (machine && f.anchor > 0.0) {
        if (f.anchor == 1.0) return *machine;
        for (std::size_t i = 0; i < c; ++i) q[i] = (1.0 - f.anchor) * q[i] + f.anchor * (*machine)[i];
    }
    return validate_forecast(q, c);
}

/// Daily machine vectors per IFP (index = day - open_date); the source id
/// used for each IFP is returned alongside.
struct MachineGrid {
    std::vector<std::vector<Probs>> by_ifp;
    std::vector<std::string> source_id;
};

namespace detail {

inline Probs base_rate_probs(const SimIfp& s, std::span<const double> window) {
    const std::size_t c = s.ifp.num_options();
    std::vector<double> counts(c, 1.0);  // Laplace
    for (double v : window) counts[ts::bin_of(v, s.bin_thresholds)] += 1.0;
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    Probs out(c);
    for (std::size_t b = 0; b < c; ++b) out[s.option_of_bin[b]] = counts[b] / total;
    return out;
}

struct MachineState {
    std::optional<ts::Phe2Models> ensemble;
    std::optional<ts::FittedModel> single;
};

inline MachineState fit_machine(ts::MachineModel model, std::span<const double> y) {
    MachineState st;
    switch (model) {
        case ts::MachineModel::phe2: st.ensemble = ts::fit_phe2(y); break;
        case ts::MachineModel::random_walk: st.single = ts::fit_random_walk(y); break;
        case ts::MachineModel::ets: st.single = ts::fit_ets(y); break;
        case ts::MachineModel::auto_arima: st.single = ts::auto_arima(y); break;
    }
    return st;
}

inline MachineState update_machine(const MachineState& st, std::span<const double> y) {
    MachineState out;
    if (st.ensemble) out.ensemble = ts::update(*st.ensemble, y);
    if (st.single) out.single = ts::update(*st.single, y);
    return out;
}

inline Probs machine_state_probs(const MachineState& st, const Ifp& ifp, int h) {
    if (st.ensemble) return ts::phe2_probs(*st.ensemble, ifp, h);
    return ts::to_option_probs(ts::horizon_distribution(*st.single, h, ifp.horizon_kind), ifp);
}

}  // namespace detail

/// Machine forecasts for every active day: the configured model on
/// series-backed IFPs (refit periodically, re-conditioned daily on the
/// trailing window through the previous day), a base-rate model elsewhere.
inline MachineGrid machine_grid(const World& world) {
    const auto& cfg = world.config;
    MachineGrid grid;
    grid.by_ifp.resize(world.ifps.size());
    grid.source_id.resize(world.ifps.size());
    parallel_for(world.ifps.size(), cfg.threads, [&](std::size_t i) {
        const SimIfp& s = world.ifps[i];
        const Ifp& ifp = s.ifp;
        auto& out = grid.by_ifp[i];
        out.reserve(ifp.active_days());
        const auto window_for = [&](Day day) {
            const auto end = static_cast<std::size_t>(day - s.history_start);  // exclusive: through day-1
            return std::span<const double>(s.path.data() + (end - cfg.history_days), cfg.history_days);
        };
        if (!ifp.is_timeseries()) {
            grid.source_id[i] = "base_rate";
            for (Day d = ifp.open_date; d <= ifp.close_date; ++d) out.push_back(detail::base_rate_probs(s, window_for(d)));
            return;
        }
        grid.source_id[i] = std::string(ts::to_string(cfg.machine_model));
        detail::MachineState state;
        for (Day d = ifp.open_date; d <= ifp.close_date; ++d) {
            const auto y = window_for(d);
            if ((d - ifp.open_date) % cfg.machine_refit_days == 0) state = detail::fit_machine(cfg.machine_model, y);
            else state = detail::update_machine(state, y);
            out.push_back(detail::machine_state_probs(state, ifp, static_cast<int>(ifp.close_date - d + 1)));
        }
    });
    return grid;
}

namespace detail {

inline std::size_t pick_index_geometric(std::size_t n, double ratio, Rng& rng) {
    std::vector<double> w(n);
    double x = 1.0;
    for (auto& v : w) {
        v = x;
        x *= ratio;
    }
    std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
    return dist(rng);
}

}  // namespace detail

/// Human and machine forecasts for a world. Each forecaster files
/// Poisson(activity/7) forecasts a day on open IFPs, revisiting a held IFP
/// with probability update_preference.
inline TournamentLog build_log(const World& world, const MachineGrid& grid) {
    const auto& cfg = world.config;
    TournamentLog::Builder b;
    for (const auto& s : world.ifps) b.add_ifp(s.ifp);
    for (const auto& f : world.forecasters) b.set_condition(f.id, cfg.cohorts[f.cohort].name);

    Day first = world.ifps.front().ifp.open_date, last = world.ifps.front().ifp.close_date;
    for (const auto& s : world.ifps) {
        first = std::min(first, s.ifp.open_date);
        last = std::max(last, s.ifp.close_date);
    }

    std::vector<Rng> streams;
    streams.reserve(world.forecasters.size());
    for (std::size_t u = 0; u < world.forecasters.size(); ++u) streams.push_back(substream(cfg.seed, "forecaster", u));
    std::vector<std::vector<std::size_t>> held(world.forecasters.size());
    std::map<std::string, std::size_t> popularity;
    std::poisson_distribution<int> daily_count(cfg.activity_per_week / 7.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (Day day = first; day <= last; ++day) {
        std::vector<std::size_t> open;
        for (std::size_t i = 0; i < world.ifps.size(); ++i)
            if (world.ifps[i].ifp.is_active(day)) open.push_back(i);
        if (open.empty()) continue;
        std::int32_t ordinal = 0;
        if (cfg.emit_machine)
            for (std::size_t i : open) {
                const auto& ifp = world.ifps[i].ifp;
                b.add_forecast({ifp.id, Source::machine(grid.source_id[i]),
                                grid.by_ifp[i][static_cast<std::size_t>(day - ifp.open_date)], {day, ordinal}});
            }
        ++ordinal;
        std::vector<std::string> swift;
        if (cfg.swift_ordering) {
            std::vector<Ifp> open_ifps;
            for (std::size_t i : open) open_ifps.push_back(world.ifps[i].ifp);
            swift = swift_order(open_ifps, day, popularity);
        }
        for (std::size_t u = 0; u < world.forecasters.size(); ++u) {
            const Forecaster& fc = world.forecasters[u];
            Rng& rng = streams[u];
            const int n = daily_count(rng);
            for (int k = 0; k < n; ++k) {
                std::vector<std::size_t> held_open;
                for (std::size_t i : held[u])
                    if (world.ifps[i].ifp.is_active(day)) held_open.push_back(i);
                const double r = unit(rng);
                std::size_t pick;
                if (!held_open.empty() && r < cfg.update_preference) {
                    pick = held_open[std::uniform_int_distribution<std::size_t>(0, held_open.size() - 1)(rng)];
                } else if (cfg.swift_ordering) {
                    const auto& id = swift[detail::pick_index_geometric(swift.size(), 0.8, rng)];
                    pick = static_cast<std::size_t>(std::stoul(id.substr(4)) - 1);
                } else {
                    pick = open[std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng)];
                }
                const SimIfp& s = world.ifps[pick];
                const Probs truth = crowd_view(world, s, day);
                std::optional<Probs> machine;
                if (cfg.emit_machine && fc.anchor > 0.0)
                    machine = grid.by_ifp[pick][static_cast<std::size_t>(day - s.ifp.open_date)];
                Probs p = gen_human_forecast(fc, truth, machine, rng);
                b.add_forecast({s.ifp.id, Source::human(fc.id), std::move(p), {day, ordinal++}});
                if (std::find(held[u].begin(), held[u].end(), pick) == held[u].end()) held[u].push_back(pick);
                ++popularity[s.ifp.id];
            }
        }
    }
    return std::move(b).build();
}

// ---------------------------------------------------------------------------
// Tournaments and experiments

struct SimResult {
    World world;
    TournamentLog log;           ///< human and machine forecasts
    std::vector<SlotRun> slots;  ///< one per supplied slot config
    std::vector<BudgetReport> budgets;
};

/// Log with every slot's daily forecasts appended.
inline TournamentLog with_slot_forecasts(const TournamentLog& log, std::span<const SlotRun> slots) {
    TournamentLog::Builder b;
    for (const auto& ifp : log.ifps()) b.add_ifp(ifp);
    for (const auto& [user, cond] : log.conditions()) b.set_condition(user, cond);
    for (const auto& f : log.forecasts()) b.add_forecast(f);
    for (const auto& run : slots)
        for (const auto& f : run.forecasts) b.add_forecast(f);
    return std::move(b).build();
}

inline SimResult run_tournament(const SimConfig& config, std::span<const AggregationConfig> slots,
                                std::span<const AllocationPolicy> policies = {}) {
    SimResult result;
    result.world = gen_world(config);
    const MachineGrid grid = machine_grid(result.world);
    result.log = build_log(result.world, grid);
    result.slots.resize(slots.size());
    parallel_for(slots.size(), config.threads, [&](std::size_t i) { result.slots[i] = replay_slot(result.log, slots[i]); });
    if (!policies.empty()) {
        if (slots.empty()) throw ValidationError("policies need at least one slot to evaluate with");
        result.budgets.resize(policies.size());
        parallel_for(policies.size(), config.threads, [&](std::size_t i) {
            result.budgets[i] = apply_policy(result.log, policies[i], slots.front(), config.seed).report;
        });
    }
    return result;
}

struct SparsityPoint {
    double level = 0.0;
    std::size_t rep = 0;
    double brier = 0.0;
};

struct SparsityResult {
    bool with_machine = true;
    std::vector<SparsityPoint> points;
    stats::OlsFit fit;  ///< brier ~ level
};

/// Users removed at one (level, rep): a uniformly random round(level*n) subset.
inline std::unordered_set<std::string> sparsity_deletion(const std::vector<std::string>& users, double level,
                                                         std::uint64_t seed, std::size_t level_index, std::size_t rep) {
    if (!(level >= 0.0 && level < 1.0)) throw ValidationError("sparsity level must be in [0,1)");
    std::vector<std::string> order = users;
    Rng rng = substream(seed, "sparsity", level_index * 100003 + rep);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n = static_cast<std::size_t>(std::llround(level * static_cast<double>(users.size())));
    return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n, order.size()))};
}

/// For each level and replicate, deletes that share of users, re-aggregates
/// with `slot` (machine input on or off) and records the mean Brier; fits
/// OLS Brier ~ level with a 95% interval on the slope. Deletion sets depend
/// only on (seed, level, rep), so with/without-machine runs are paired.
inline SparsityResult sparsity_experiment(const TournamentLog& log, AggregationConfig slot, std::span<const double> levels,
                                          std::size_t reps, bool with_machine, std::uint64_t seed,
                                          std::size_t threads = 1) {
    for (double l : levels)
        if (!(l >= 0.0 && l < 1.0)) throw ValidationError("sparsity level must be in [0,1)");
    if (reps == 0) throw ValidationError("reps must be > 0");
    slot.use_machine = with_machine;
    const auto users = log.human_users();
    SparsityResult result;
    result.with_machine = with_machine;
    result.points.resize(levels.size() * reps);
    std::optional<double> undeleted;
    if (std::find(levels.begin(), levels.end(), 0.0) != levels.end()) undeleted = replay_slot(log, slot).mean_mdb;
    parallel_for(result.points.size(), threads, [&](std::size_t k) {
        const std::size_t li = k / reps, rep = k % reps;
        double brier;
        if (levels[li] == 0.0) {
            brier = *undeleted;
        } else {
            const auto deleted = sparsity_deletion(users, levels[li], seed, li, rep);
            brier = replay_slot(log, slot, &deleted).mean_mdb;
        }
        result.points[k] = {levels[li], rep, brier};
    });
    std::vector<double> x, y;
    for (const auto& p : result.points) {
        x.push_back(p.level);
        y.push_back(p.brier);
    }
    result.fit = stats::ols(x, y);
    return result;
}

struct Pool {
    std::string name;
    std::vector<std::string> conditions;  ///< empty: everyone
};

struct BackcastRow {
    std::string slot;
    std::string pool;
    double mean_mdb = 0.0;
    double delta = 0.0;  ///< mean_mdb minus the first row's
    std::optional<double> cohens_d;
};

/// Applies every slot config to every human pool of one log.
inline std::vector<BackcastRow> backcast_compare(const TournamentLog& log, std::span<const AggregationConfig> slots,
                                                 std::span<const Pool> pools, std::size_t threads = 1) {
    if (slots.size() * pools.size() < 2) throw ValidationError("backcast needs at least two slot/pool cells");
    std::vector<SlotRun> runs(slots.size() * pools.size());
    parallel_for(runs.size(), threads, [&](std::size_t k) {
        AggregationConfig cfg = slots[k / pools.size()];
        cfg.conditions = pools[k % pools.size()].conditions;
        runs[k] = replay_slot(log, cfg);
    });
    const auto per_ifp = [](const SlotRun& r) {
        std::vector<double> v;
        for (const auto& m : r.mdb)
            if (m) v.push_back(*m);
        return v;
    };
    const auto reference = per_ifp(runs.front());
    std::vector<BackcastRow> rows;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        BackcastRow row;
        row.slot = slots[k / pools.size()].name;
        row.pool = pools[k % pools.size()].name;
        row.mean_mdb = runs[k].mean_mdb;
        row.delta = runs[k].mean_mdb - runs.front().mean_mdb;
        try {
            row.cohens_d = cohens_d(per_ifp(runs[k]), reference);
        } catch (const std::invalid_argument&) {
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

struct SourceComparison {
    double mmdb_a = 0.0;
    double mmdb_b = 0.0;
    double delta = 0.0;  ///< a - b
    std::optional<double> cohens_d;
    std::size_t n_ifps = 0;
};

/// MDB gap between two sources already present in a log (e.g. two official
/// slot submissions), over resolved IFPs where both forecast.
inline SourceComparison compare_sources(const TournamentLog& log, const Source& a, const Source& b) {
    std::vector<double> va, vb;
    for (std::size_t i = 0; i < log.ifps().size(); ++i) {
        const Ifp& ifp = log.ifps()[i];
        if (!ifp.is_resolved()) continue;
        if (source_stream(log, i, a).empty() || source_stream(log, i, b).empty()) continue;
        va.push_back(mean_daily_brier(log, ifp.id, a));
        vb.push_back(mean_daily_brier(log, ifp.id, b));
    }
    if (va.empty()) throw ValidationError("no resolved IFP carries both sources");
    SourceComparison out;
    out.n_ifps = va.size();
    out.mmdb_a = stats::mean(va);
    out.mmdb_b = stats::mean(vb);
    out.delta = out.mmdb_a - out.mmdb_b;
    try {
        out.cohens_d = cohens_d(va, vb);
    } catch (const std::invalid_argument&) {
    }
    return out;
}

}  // namespace hyfo::sim
