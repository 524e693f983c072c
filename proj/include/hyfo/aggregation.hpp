#pragma once

// Human forecast aggregation and human-machine combination:
// recency filter -> individual recalibration -> decay x skill weighted mean
// -> aggregate extremization -> combination with a machine forecast weighted
// as a fixed number of average-skill forecasters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hyfo/core.hpp"
#include "hyfo/scoring.hpp"

namespace hyfo {

/// Linear schedule over the season fraction t in [0,1].
struct Schedule {
    double start = 1.0;
    double end = 1.0;
    double at(double t) const { return start + (end - start) * t; }
};

struct MachineEquivalents {
    double timeseries = 8.0;
    double other = 4.0;
};

struct AggregationConfig {
    std::string name = "default";
    double recency_fraction = 0.4;
    double decay_rate = std::log(2.0) / 14.0;  ///< per day
    Schedule skill_exponent{0.5, 2.0};
    double individual_recalibration = 0.85;
    Schedule extremization{0.8, 1.2};
    MachineEquivalents machine_equivalents;
    std::size_t min_forecasts_floor = 5;
    bool use_machine = true;
    std::vector<std::string> machine_sources;  ///< empty: any machine source
    std::vector<std::string> conditions;       ///< human pool filter; empty: everyone
    double update_frequency_coef = 0.0;
    double update_size_coef = 0.0;

    void validate() const {
        const auto fail = [&](const char* why) { throw ValidationError("slot " + name + ": " + why); };
        if (!(recency_fraction > 0.0 && recency_fraction <= 1.0)) fail("recency_fraction must be in (0,1]");
        if (!(decay_rate >= 0.0)) fail("decay_rate must be >= 0");
        if (!(individual_recalibration > 0.0 && individual_recalibration <= 1.0))
            fail("individual_recalibration must be in (0,1]");
        if (!(extremization.start > 0.0 && extremization.end > 0.0)) fail("extremization must be > 0");
        if (!(machine_equivalents.timeseries >= 0.0 && machine_equivalents.other >= 0.0))
            fail("machine equivalents must be >= 0");
    }

    /// Pure unweighted mean of the recency-kept set.
    static AggregationConfig mean_only() {
        AggregationConfig c;
        c.name = "mean";
        c.decay_rate = 0.0;
        c.skill_exponent = {0.0, 0.0};
        c.individual_recalibration = 1.0;
        c.extremization = {1.0, 1.0};
        c.use_machine = false;
        return c;
    }
};

inline double season_fraction(Day day, Day first, Day last) {
    if (last <= first) return 1.0;
    return std::clamp(static_cast<double>(day - first) / static_cast<double>(last - first), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Pipeline stages

/// A human's standing forecast on one IFP.
struct StandingForecast {
    std::string_view user;
    Timestamp timestamp;
    const Probs* probs = nullptr;
};

/// Keeps the max(ceil(fraction*n), min(floor, n)) newest entries, newest
/// first (user id breaks timestamp ties).
inline std::vector<StandingForecast> recency_filter(std::vector<StandingForecast> standing, double fraction,
                                                    std::size_t floor) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("recency fraction must be in (0,1]");
    const std::size_t n = standing.size();
    const auto by_fraction = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    const std::size_t keep = std::max(by_fraction, std::min(floor, n));
    std::sort(standing.begin(), standing.end(), [](const StandingForecast& a, const StandingForecast& b) {
        if (a.timestamp != b.timestamp) return a.timestamp > b.timestamp;
        return a.user < b.user;
    });
    standing.resize(std::min(keep, n));
    return standing;
}

/// exp(-lambda * age in days) per entry.
inline std::vector<double> decay_weights(std::span<const StandingForecast> kept, Day day, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("decay rate must be >= 0");
    std::vector<double> w(kept.size(), 1.0);
    if (lambda == 0.0) return w;
    for (std::size_t i = 0; i < kept.size(); ++i) w[i] = std::exp(-lambda * static_cast<double>(day - kept[i].timestamp.day));
    return w;
}

/// p_i^a / sum_j p_j^a. Zeros stay zero.
inline Probs power_transform(std::span<const double> probs, double a) {
    if (!(a > 0.0)) throw std::invalid_argument("power exponent must be > 0");
    Probs out(probs.begin(), probs.end());
    if (a == 1.0) return out;
    double sum = 0.0;
    for (double& p : out) {
        p = std::pow(p, a);
        sum += p;
    }
    for (double& p : out) p /= sum;
    return out;
}

/// Softens an individual forecast (exponent in (0,1]).
inline Probs recalibrate_individual(std::span<const double> probs, double a_ind) {
    if (!(a_ind > 0.0 && a_ind <= 1.0)) throw std::invalid_argument("individual recalibration must be in (0,1]");
    return power_transform(probs, a_ind);
}

/// Sharpens (a > 1) or blunts (a < 1) an aggregate.
inline Probs extremize_aggregate(std::span<const double> probs, double a) { return power_transform(probs, a); }

// ---------------------------------------------------------------------------
// Skill

struct SkillRecord {
    std::string user;
    double mean_z = 0.0;          ///< mean over resolved IFPs of the mean standardized daily Brier
    std::size_t update_count = 0; ///< forecasts beyond the first, summed over IFPs
    double mean_abs_step = 0.0;   ///< mean L1 size of an update, in [0,2]
    std::size_t attempted = 0;
};

using SkillTable = std::unordered_map<std::string, SkillRecord>;

/// One resolved IFP's contribution to each participant's record.
struct IfpSkillContribution {
    struct Entry {
        double mean_z = 0.0;
        std::size_t forecasts = 0;
        double step_sum = 0.0;
    };
    std::map<std::string, Entry> users;
};

/// Per-user streams on one IFP: user -> time-ordered (day, vector).
using UserStreams = std::map<std::string, std::vector<DatedProbs>>;

/// Standardizes the carried-forward Briers of every participant within each
/// active day (from each user's first forecast on) and averages per user.
inline IfpSkillContribution ifp_skill_contribution(const Ifp& ifp, const UserStreams& streams) {
    IfpSkillContribution out;
    if (streams.empty()) return out;
    std::vector<std::vector<std::optional<double>>> daily;
    std::vector<const std::string*> names;
    daily.reserve(streams.size());
    for (const auto& [user, stream] : streams) {
        daily.push_back(daily_brier_stream(ifp, stream, Fill::none));
        names.push_back(&user);
        auto& e = out.users[user];
        e.forecasts = stream.size();
        for (std::size_t i = 1; i < stream.size(); ++i)
            for (std::size_t c = 0; c < stream[i].second->size(); ++c)
                e.step_sum += std::abs((*stream[i].second)[c] - (*stream[i - 1].second)[c]);
    }
    std::vector<double> z_sum(names.size(), 0.0);
    std::vector<std::size_t> z_n(names.size(), 0);
    std::vector<double> values;
    std::vector<std::size_t> who;
    for (std::size_t d = 0; d < ifp.active_days(); ++d) {
        values.clear();
        who.clear();
        for (std::size_t u = 0; u < daily.size(); ++u)
            if (daily[u][d]) {
                values.push_back(*daily[u][d]);
                who.push_back(u);
            }
        const auto z = zscores(values);
        for (std::size_t k = 0; k < who.size(); ++k) {
            z_sum[who[k]] += z[k];
            ++z_n[who[k]];
        }
    }
    for (std::size_t u = 0; u < names.size(); ++u)
        out.users[*names[u]].mean_z = z_n[u] ? z_sum[u] / static_cast<double>(z_n[u]) : 0.0;
    return out;
}

/// Running totals of contributions; table() yields the current records.
class SkillAccumulator {
public:
    void add(const IfpSkillContribution& c) {
        for (const auto& [user, e] : c.users) {
            auto& t = totals_[user];
            t.z_sum += e.mean_z;
            t.attempted += 1;
            t.updates += e.forecasts > 0 ? e.forecasts - 1 : 0;
            t.step_sum += e.step_sum;
        }
        dirty_ = true;
    }

    const SkillTable& table() const {
        if (dirty_) {
            table_.clear();
            for (const auto& [user, t] : totals_) {
                SkillRecord r;
                r.user = user;
                r.attempted = t.attempted;
                r.mean_z = t.z_sum / static_cast<double>(t.attempted);
                r.update_count = t.updates;
                r.mean_abs_step = t.updates ? t.step_sum / static_cast<double>(t.updates) : 0.0;
                table_.emplace(user, std::move(r));
            }
            dirty_ = false;
        }
        return table_;
    }

private:
    struct Totals {
        double z_sum = 0.0;
        std::size_t attempted = 0;
        std::size_t updates = 0;
        double step_sum = 0.0;
    };
    std::map<std::string, Totals> totals_;
    mutable SkillTable table_;
    mutable bool dirty_ = false;
};

inline bool in_pool(const AggregationConfig& config, const std::string& condition) {
    return config.conditions.empty() ||
           std::find(config.conditions.begin(), config.conditions.end(), condition) != config.conditions.end();
}

/// Records from human forecasts on IFPs resolved strictly before `before_day`.
inline SkillTable compute_skill_records(const TournamentLog& log, Day before_day, const AggregationConfig& config = {}) {
    SkillAccumulator acc;
    const auto all = log.forecasts();
    for (std::size_t idx = 0; idx < log.ifps().size(); ++idx) {
        const Ifp& ifp = log.ifps()[idx];
        if (!ifp.is_resolved() || ifp.close_date >= before_day) continue;
        UserStreams streams;
        for (std::size_t i : log.forecasts_for(idx)) {
            const Forecast& f = all[i];
            if (f.source.is_human() && in_pool(config, log.condition_of(f.source.id)))
                streams[f.source.id].emplace_back(f.timestamp.day, &f.probs);
        }
        acc.add(ifp_skill_contribution(ifp, streams));
    }
    return acc.table();
}

/// Skill score entering the weight: mean z plus optional activity terms.
inline double adjusted_skill_z(const SkillRecord& r, const AggregationConfig& config) {
    const double updates_per_ifp = r.attempted ? static_cast<double>(r.update_count) / static_cast<double>(r.attempted) : 0.0;
    return r.mean_z + config.update_size_coef * r.mean_abs_step - config.update_frequency_coef * updates_per_ifp;
}

/// exp(-z)^gamma per user, renormalized to mean 1; record-free users score
/// as average (base 1).
inline std::vector<double> skill_weights(const SkillTable& records, std::span<const std::string_view> users,
                                         double gamma, const AggregationConfig& config = {}) {
    std::vector<double> w(users.size(), 1.0);
    if (users.empty() || gamma == 0.0) return w;
    double sum = 0.0;
    for (std::size_t i = 0; i < users.size(); ++i) {
        const auto it = records.find(std::string(users[i]));
        const double base = it == records.end() ? 1.0 : std::exp(-adjusted_skill_z(it->second, config));
        w[i] = std::pow(base, gamma);
        sum += w[i];
    }
    const double mean = sum / static_cast<double>(users.size());
    for (double& v : w) v /= mean;
    return w;
}

// ---------------------------------------------------------------------------
// Aggregate and combine

struct HumanAggregate {
    Probs probs;
    double total_weight = 0.0;  ///< sum of decay x skill weights of the kept set
    std::size_t n_kept = 0;
};

/// The human pipeline over a set of standing forecasts at season fraction t.
inline std::optional<HumanAggregate> aggregate_standing(std::vector<StandingForecast> standing, Day day, double t,
                                                        const AggregationConfig& config, const SkillTable& skills) {
    if (standing.empty()) return std::nullopt;
    const auto kept = recency_filter(std::move(standing), config.recency_fraction, config.min_forecasts_floor);
    const auto decay = decay_weights(kept, day, config.decay_rate);
    std::vector<std::string_view> users;
    users.reserve(kept.size());
    for (const auto& k : kept) users.push_back(k.user);
    const auto skill = skill_weights(skills, users, config.skill_exponent.at(t), config);

    const std::size_t c = kept.front().probs->size();
    HumanAggregate out;
    out.n_kept = kept.size();
    out.probs.assign(c, 0.0);
    std::vector<double> weights(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        weights[i] = decay[i] * skill[i];
        out.total_weight += weights[i];
    }
    if (!(out.total_weight > 0.0)) std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(kept.size()));
    const double denom = out.total_weight > 0.0 ? out.total_weight : 1.0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const Probs r = recalibrate_individual(*kept[i].probs, config.individual_recalibration);
        for (std::size_t k = 0; k < c; ++k) out.probs[k] += weights[i] * r[k];
    }
    for (double& v : out.probs) v /= denom;
    out.probs = extremize_aggregate(out.probs, config.extremization.at(t));
    return out;
}

/// Human aggregate straight from a log: latest human forecast per user on
/// `day`, then the pipeline. Season fraction uses the log's calendar.
inline std::optional<HumanAggregate> human_aggregate(const TournamentLog& log, std::string_view ifp_id, Day day,
                                                     const AggregationConfig& config, const SkillTable& skills) {
    const auto latest = latest_per_source(log, ifp_id, day);
    std::vector<StandingForecast> standing;
    for (const auto& [source, f] : latest)
        if (source.is_human() && in_pool(config, log.condition_of(source.id)))
            standing.push_back({source.id, f.timestamp, &f.probs});
    return aggregate_standing(std::move(standing), day, season_fraction(day, log.first_day(), log.last_day()), config,
                              skills);
}

/// Weighted mean of the human aggregate (weight = its total weight) and the
/// machine vector (weight = k forecaster equivalents). No extremization here.
inline Probs combine_with_machine(const std::optional<HumanAggregate>& human, const std::optional<Probs>& machine,
                                  bool ifp_is_timeseries, const AggregationConfig& config) {
    if (!human && !machine) throw std::invalid_argument("combine_with_machine: both inputs absent");
    if (!human) return *machine;
    if (!machine) return human->probs;
    const double k = ifp_is_timeseries ? config.machine_equivalents.timeseries : config.machine_equivalents.other;
    if (k == 0.0) return human->probs;
    const double wh = human->total_weight;
    Probs out(human->probs.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (wh * human->probs[i] + k * (*machine)[i]) / (wh + k);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

// ---------------------------------------------------------------------------
// Incremental replay

/// Day-by-day aggregation state for one slot over a log. Forecasts are fed
/// in timestamp order; skill records advance when IFPs resolve.
class AggregationEngine {
public:
    AggregationEngine(const TournamentLog& log, AggregationConfig config)
        : log_(log), config_(std::move(config)), ifps_(log.ifps().size()) {
        config_.validate();
        closing_order_.resize(log.ifps().size());
        for (std::size_t i = 0; i < closing_order_.size(); ++i) closing_order_[i] = i;
        std::stable_sort(closing_order_.begin(), closing_order_.end(), [&](std::size_t a, std::size_t b) {
            return log.ifps()[a].close_date < log.ifps()[b].close_date;
        });
    }

    const AggregationConfig& config() const { return config_; }
    const SkillTable& skills() const { return skills_.table(); }

    /// Folds every IFP closing before `day` into the skill records. Returns
    /// true if at least one resolved IFP was folded in.
    bool begin_day(Day day) {
        bool any = false;
        while (next_close_ < closing_order_.size() && log_.ifps()[closing_order_[next_close_]].close_date < day) {
            const std::size_t idx = closing_order_[next_close_++];
            const Ifp& ifp = log_.ifps()[idx];
            if (!ifp.is_resolved()) continue;
            UserStreams streams;
            for (const auto& [user, entries] : ifps_[idx].history)
                for (const auto& [d, probs] : entries) streams[user].emplace_back(d, &probs);
            skills_.add(ifp_skill_contribution(ifp, streams));
            any = true;
        }
        return any;
    }

    void observe(const Forecast& f) {
        const auto idx = log_.ifp_index(f.ifp_id);
        if (!idx) throw ValidationError("unknown IFP: " + f.ifp_id);
        auto& state = ifps_[*idx];
        switch (f.source.kind) {
            case SourceKind::human: {
                if (!in_pool(config_, log_.condition_of(f.source.id))) return;
                auto& hist = state.history[f.source.id];
                hist.emplace_back(f.timestamp.day, f.probs);
                auto& entry = state.standing[f.source.id];
                entry.timestamp = f.timestamp;
                entry.probs = f.probs;
                break;
            }
            case SourceKind::machine:
                if (!config_.use_machine) return;
                if (!config_.machine_sources.empty() &&
                    std::find(config_.machine_sources.begin(), config_.machine_sources.end(), f.source.id) ==
                        config_.machine_sources.end())
                    return;
                state.machine[f.source.id] = f.probs;
                break;
            case SourceKind::slot: break;
        }
    }

    std::optional<HumanAggregate> human(std::size_t ifp_index, Day day) const {
        const auto& state = ifps_[ifp_index];
        std::vector<StandingForecast> standing;
        standing.reserve(state.standing.size());
        for (const auto& [user, entry] : state.standing) standing.push_back({user, entry.timestamp, &entry.probs});
        return aggregate_standing(std::move(standing), day, season_fraction(day, log_.first_day(), log_.last_day()),
                                  config_, skills_.table());
    }

    std::optional<Probs> machine(std::size_t ifp_index) const {
        const auto& m = ifps_[ifp_index].machine;
        if (m.empty()) return std::nullopt;
        if (m.size() == 1) return m.begin()->second;
        std::vector<Probs> parts;
        for (const auto& [id, p] : m) parts.push_back(p);
        Probs out(parts.front().size(), 0.0);
        for (const auto& p : parts)
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i] / static_cast<double>(parts.size());
        return out;
    }

    /// The slot's forecast for the IFP on `day`; absent when neither human
    /// nor machine input exists yet.
    std::optional<Probs> slot_forecast(std::size_t ifp_index, Day day) const {
        auto h = human(ifp_index, day);
        auto m = machine(ifp_index);
        if (!h && !m) return std::nullopt;
        return combine_with_machine(h, m, log_.ifps()[ifp_index].is_timeseries(), config_);
    }

    std::size_t distinct_humans(std::size_t ifp_index) const { return ifps_[ifp_index].history.size(); }

private:
    struct Standing {
        Timestamp timestamp;
        Probs probs;
    };
    struct IfpState {
        std::map<std::string, Standing> standing;
        std::map<std::string, std::vector<std::pair<Day, Probs>>> history;
        std::map<std::string, Probs> machine;
    };

    const TournamentLog& log_;
    AggregationConfig config_;
    std::vector<IfpState> ifps_;
    std::vector<std::size_t> closing_order_;
    std::size_t next_close_ = 0;
    SkillAccumulator skills_;
};

/// Daily output of one slot and its scores.
struct SlotRun {
    std::string name;
    std::vector<Forecast> forecasts;         ///< one per IFP-day the slot could forecast
    std::vector<std::optional<double>> mdb;  ///< per IFP index; empty when unresolved
    double mean_mdb = 0.0;                   ///< mean over resolved IFPs
};

inline void score_slot_run(const TournamentLog& log, SlotRun& run) {
    std::vector<std::vector<DatedProbs>> streams(log.ifps().size());
    for (const auto& f : run.forecasts) streams[*log.ifp_index(f.ifp_id)].emplace_back(f.timestamp.day, &f.probs);
    run.mdb.assign(log.ifps().size(), std::nullopt);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < log.ifps().size(); ++i) {
        const Ifp& ifp = log.ifps()[i];
        if (!ifp.is_resolved()) continue;
        const auto daily = daily_brier_stream(ifp, streams[i], Fill::uniform);
        double s = 0.0;
        for (const auto& v : daily) s += *v;
        run.mdb[i] = s / static_cast<double>(daily.size());
        sum += *run.mdb[i];
        ++n;
    }
    run.mean_mdb = n ? sum / static_cast<double>(n) : 0.0;
}

/// Replays the whole log through one slot. Forecasts by users in `excluded`
/// are ignored.
inline SlotRun replay_slot(const TournamentLog& log, const AggregationConfig& config,
                           const std::unordered_set<std::string>* excluded = nullptr) {
    AggregationEngine engine(log, config);
    SlotRun run;
    run.name = config.name;
    const auto all = log.forecasts();
    std::size_t next = 0;
    for (Day day = log.first_day(); day <= log.last_day(); ++day) {
        engine.begin_day(day);
        while (next < all.size() && all[next].timestamp.day <= day) {
            const Forecast& f = all[next++];
            if (excluded && f.source.is_human() && excluded->contains(f.source.id)) continue;
            engine.observe(f);
        }
        for (std::size_t i = 0; i < log.ifps().size(); ++i) {
            const Ifp& ifp = log.ifps()[i];
            if (!ifp.is_active(day)) continue;
            if (auto p = engine.slot_forecast(i, day))
                run.forecasts.push_back({ifp.id, Source::slot(config.name), std::move(*p), {day, 0}});
        }
    }
    score_slot_run(log, run);
    return run;
}

}  // namespace hyfo
