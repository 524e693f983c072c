#pragma once

// Question ordering and forecast-budget policies replayed over a log:
// keep everything, random thinning, greedy exclusion of the worst
// forecasters at each resolution batch, and greedy exclusion plus a cap on
// questions whose aggregate has reached a stable consensus.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "hyfo/aggregation.hpp"
#include "hyfo/core.hpp"
#include "hyfo/rng.hpp"

namespace hyfo {

/// Resolution date first, then the less-forecast question, then id.
inline std::vector<std::string> swift_order(std::span<const Ifp> ifps, Day day,
                                            const std::map<std::string, std::size_t>& popularity) {
    std::vector<const Ifp*> open;
    for (const auto& ifp : ifps)
        if (ifp.is_active(day)) open.push_back(&ifp);
    auto count = [&](const Ifp* f) {
        const auto it = popularity.find(f->id);
        return it == popularity.end() ? std::size_t{0} : it->second;
    };
    std::stable_sort(open.begin(), open.end(), [&](const Ifp* a, const Ifp* b) {
        if (a->close_date != b->close_date) return a->close_date < b->close_date;
        if (count(a) != count(b)) return count(a) < count(b);
        return a->id < b->id;
    });
    std::vector<std::string> out;
    out.reserve(open.size());
    for (const Ifp* f : open) out.push_back(f->id);
    return out;
}

struct ConsensusRule {
    double top_threshold = 0.85;
    std::size_t window_days = 5;
    double max_drift = 0.05;
    std::size_t min_forecasters = 8;
};

/// True when the last `window_days` aggregates all put at least the
/// threshold on their top option, no option moved more than `max_drift`
/// between consecutive days, and enough distinct forecasters contributed.
inline bool consensus_reached(std::span<const Probs> history, std::size_t distinct_forecasters,
                              const ConsensusRule& rule) {
    if (rule.window_days == 0 || history.size() < rule.window_days) return false;
    if (distinct_forecasters < rule.min_forecasters) return false;
    const auto window = history.subspan(history.size() - rule.window_days);
    for (std::size_t i = 0; i < window.size(); ++i) {
        if (*std::max_element(window[i].begin(), window[i].end()) < rule.top_threshold) return false;
        if (i > 0)
            for (std::size_t c = 0; c < window[i].size(); ++c)
                if (std::abs(window[i][c] - window[i - 1][c]) > rule.max_drift) return false;
    }
    return true;
}

enum class PolicyKind { all, random, greedy_ifp, greedy_ifp_pp };

inline std::string_view to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::all: return "all";
        case PolicyKind::random: return "random";
        case PolicyKind::greedy_ifp: return "greedy_ifp";
        case PolicyKind::greedy_ifp_pp: return "greedy_ifp_pp";
    }
    return "?";
}

inline PolicyKind parse_policy_kind(std::string_view s) {
    if (s == "all") return PolicyKind::all;
    if (s == "random") return PolicyKind::random;
    if (s == "greedy_ifp") return PolicyKind::greedy_ifp;
    if (s == "greedy_ifp_pp") return PolicyKind::greedy_ifp_pp;
    throw ValidationError("unknown policy kind: " + std::string(s));
}

inline constexpr std::size_t kNoCap = std::numeric_limits<std::size_t>::max();

struct AllocationPolicy {
    std::string name = "all";
    PolicyKind kind = PolicyKind::all;
    double p_keep = 1.0;        ///< random
    double exclude_frac = 0.4;  ///< greedy: worst share of ranked users excluded per batch
    std::size_t cap = 20;       ///< greedy++: max human forecasts kept on a consensus IFP
    ConsensusRule consensus;

    void validate() const {
        const auto fail = [&](const char* why) { throw ValidationError("policy " + name + ": " + why); };
        if (kind == PolicyKind::random && !(p_keep > 0.0 && p_keep <= 1.0)) fail("p_keep must be in (0,1]");
        if ((kind == PolicyKind::greedy_ifp || kind == PolicyKind::greedy_ifp_pp) &&
            !(exclude_frac >= 0.0 && exclude_frac < 1.0))
            fail("exclude_frac must be in [0,1)");
        if (kind == PolicyKind::greedy_ifp_pp && (consensus.min_forecasters < 1 || cap < consensus.min_forecasters))
            fail("need cap >= min_forecasters >= 1");
    }

    static AllocationPolicy keep_all() { return {}; }
    static AllocationPolicy random(double p_keep) {
        AllocationPolicy p;
        p.name = "random";
        p.kind = PolicyKind::random;
        p.p_keep = p_keep;
        return p;
    }
    static AllocationPolicy greedy(double exclude_frac) {
        AllocationPolicy p;
        p.name = "greedy_ifp";
        p.kind = PolicyKind::greedy_ifp;
        p.exclude_frac = exclude_frac;
        return p;
    }
    static AllocationPolicy greedy_pp(double exclude_frac, std::size_t cap, ConsensusRule rule = {}) {
        AllocationPolicy p;
        p.name = "greedy_ifp_pp";
        p.kind = PolicyKind::greedy_ifp_pp;
        p.exclude_frac = exclude_frac;
        p.cap = cap;
        p.consensus = rule;
        return p;
    }
};

struct BudgetReport {
    std::string policy;
    std::uint64_t seed = 0;
    double brier = 0.0;   ///< mean over resolved IFPs of the slot's MDB
    double budget = 100;  ///< kept human forecasts, % of all human forecasts
    std::size_t kept = 0;
    std::size_t total = 0;
};

struct PolicyOutcome {
    TournamentLog censored;
    BudgetReport report;
    SlotRun run;
};

inline std::string forecast_key(const Forecast& f) {
    return f.ifp_id + '\x1f' + f.source.id + '\x1f' + std::to_string(f.timestamp.day) + '\x1f' +
           std::to_string(f.timestamp.ordinal);
}

/// Smallest p_keep for which the random policy under `seed` keeps at least
/// `target_kept` human forecasts of the log.
inline double matched_keep_probability(const TournamentLog& log, std::size_t target_kept, std::uint64_t seed) {
    std::vector<double> u;
    for (const auto& f : log.forecasts())
        if (f.source.is_human()) u.push_back(hashed_uniform(seed, forecast_key(f)));
    if (target_kept == 0) return std::nextafter(0.0, 1.0);
    if (target_kept >= u.size()) return 1.0;
    std::nth_element(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(target_kept - 1), u.end());
    return std::min(1.0, std::nextafter(u[target_kept - 1], 2.0));
}

/// Users to exclude at a batch: the worst ceil(frac * n) of everyone holding
/// a record (worst = highest adjusted mean z; id breaks ties).
inline std::vector<std::string> worst_performers(const SkillTable& skills, double frac, const AggregationConfig& config) {
    std::vector<std::pair<double, std::string>> ranked;
    ranked.reserve(skills.size());
    for (const auto& [user, r] : skills) ranked.emplace_back(adjusted_skill_z(r, config), user);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    const auto n = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(ranked.size()) - 1e-9));
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n && i < ranked.size(); ++i) out.push_back(ranked[i].second);
    return out;
}

/// Replays the log day by day under a policy, aggregating with `slot`.
/// Only human forecasts are ever dropped; exclusions are permanent and take
/// effect the day after the batch that triggered them.
inline PolicyOutcome apply_policy(const TournamentLog& log, const AllocationPolicy& policy,
                                  const AggregationConfig& slot, std::uint64_t seed = 0) {
    policy.validate();
    if (log.ifps().empty() || log.forecasts().empty()) throw ValidationError("apply_policy: empty log");
    const bool greedy = policy.kind == PolicyKind::greedy_ifp || policy.kind == PolicyKind::greedy_ifp_pp;
    const bool capped = policy.kind == PolicyKind::greedy_ifp_pp;

    AggregationEngine engine(log, slot);
    const auto all = log.forecasts();
    std::vector<char> keep(all.size(), 1);
    std::unordered_set<std::string> excluded;
    const std::size_t n_ifps = log.ifps().size();
    std::vector<std::vector<Probs>> history(n_ifps);
    std::vector<char> consensus(n_ifps, 0);
    std::vector<std::size_t> kept_on_ifp(n_ifps, 0);

    PolicyOutcome out;
    out.run.name = slot.name;
    out.report.policy = policy.name;
    out.report.seed = seed;

    std::size_t next = 0;
    for (Day day = log.first_day(); day <= log.last_day(); ++day) {
        const bool batch = engine.begin_day(day);
        if (batch && greedy && policy.exclude_frac > 0.0)
            for (auto& user : worst_performers(engine.skills(), policy.exclude_frac, slot)) excluded.insert(std::move(user));

        for (; next < all.size() && all[next].timestamp.day <= day; ++next) {
            const Forecast& f = all[next];
            if (!f.source.is_human()) {
                engine.observe(f);
                continue;
            }
            const std::size_t idx = *log.ifp_index(f.ifp_id);
            ++out.report.total;
            bool kept = true;
            if (policy.kind == PolicyKind::random) {
                kept = hashed_uniform(seed, forecast_key(f)) < policy.p_keep;
            }
            if (greedy && excluded.contains(f.source.id)) kept = false;
            if (capped && consensus[idx] && kept_on_ifp[idx] >= policy.cap) kept = false;
            keep[next] = kept ? 1 : 0;
            if (!kept) continue;
            ++out.report.kept;
            ++kept_on_ifp[idx];
            engine.observe(f);
        }

        for (std::size_t i = 0; i < n_ifps; ++i) {
            const Ifp& ifp = log.ifps()[i];
            if (!ifp.is_active(day)) continue;
            auto p = engine.slot_forecast(i, day);
            if (!p) continue;
            if (capped) {
                history[i].push_back(*p);
                if (!consensus[i] && consensus_reached(history[i], engine.distinct_humans(i), policy.consensus))
                    consensus[i] = 1;
            }
            out.run.forecasts.push_back({ifp.id, Source::slot(slot.name), std::move(*p), {day, 0}});
        }
    }
    score_slot_run(log, out.run);
    out.report.brier = out.run.mean_mdb;
    out.report.budget = out.report.total ? 100.0 * static_cast<double>(out.report.kept) /
                                               static_cast<double>(out.report.total)
                                         : 100.0;
    out.censored = log.filtered([&](const Forecast& f) { return keep[static_cast<std::size_t>(&f - all.data())] != 0; });
    return out;
}

}  // namespace hyfo
