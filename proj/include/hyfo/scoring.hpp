#pragma once

// Brier scoring (nominal and ordinal forms), mean daily Brier with
// carry-forward, individual scoring with cohort-median imputation,
// standardization and effect sizes.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hyfo/core.hpp"
#include "hyfo/stats.hpp"

namespace hyfo {

namespace detail {
inline void check_scorable(std::span<const double> probs, std::size_t outcome) {
    if (probs.size() < kMinOptions || probs.size() > kMaxOptions) throw ValidationError("invalid probability vector length");
    if (outcome >= probs.size()) throw ValidationError("outcome index out of range");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0 + kInputSumTolerance)) throw ValidationError("probability outside [0,1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kInputSumTolerance) throw ValidationError("sum deviation");
}
}  // namespace detail

/// Sum-form Brier: squared distance from the one-hot outcome, in [0,2].
inline double brier_nominal(std::span<const double> probs, std::size_t outcome) {
    detail::check_scorable(probs, outcome);
    double s = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        const double o = c == outcome ? 1.0 : 0.0;
        s += (probs[c] - o) * (probs[c] - o);
    }
    return s;
}

/// Ordinal Brier: equal-weight mean, over the C-1 cumulative splits
/// {0..k-1 | k..C-1}, of the two-category Brier on the split's cumulative
/// probability. For C=2 this is the nominal binary Brier.
inline double brier_ordinal(std::span<const double> probs, std::size_t outcome) {
    detail::check_scorable(probs, outcome);
    const std::size_t c = probs.size();
    double cumulative = 0.0;
    double total = 0.0;
    for (std::size_t k = 1; k < c; ++k) {
        cumulative += probs[k - 1];
        const double hit = outcome < k ? 1.0 : 0.0;
        total += 2.0 * (cumulative - hit) * (cumulative - hit);
    }
    return total / static_cast<double>(c - 1);
}

/// Dispatches on IFP kind: ordinal IFPs use the split form, the rest nominal.
inline double brier(const Ifp& ifp, std::span<const double> probs, std::size_t outcome) {
    return ifp.kind == IfpKind::ordinal ? brier_ordinal(probs, outcome) : brier_nominal(probs, outcome);
}

/// Score of the uniform forecast on this IFP, whatever the outcome is.
inline double uniform_brier(const Ifp& ifp) {
    const Probs u = uniform_forecast(ifp.num_options());
    return brier(ifp, u, ifp.resolved_option.value_or(0));
}

// ---------------------------------------------------------------------------
// Daily scoring

struct DailyScore {
    std::string ifp_id;
    Source source;
    Day day = 0;
    double brier = 0.0;
};

/// (day, vector) pairs of one source on one IFP, in time order.
using DatedProbs = std::pair<Day, const Probs*>;

/// Brier for every active day of a resolved IFP given one source's stream.
/// Days before the first forecast score the uniform prior (Fill::uniform) or
/// are left empty (Fill::none).
inline std::vector<std::optional<double>> daily_brier_stream(const Ifp& ifp, std::span<const DatedProbs> stream,
                                                             Fill fill) {
    if (!ifp.resolved_option) throw ValidationError("IFP " + ifp.id + " is not resolved");
    const std::size_t outcome = *ifp.resolved_option;
    std::vector<std::optional<double>> out(ifp.active_days());
    const double prior = uniform_brier(ifp);
    std::size_t next = 0;
    std::optional<double> standing;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Day day = ifp.open_date + static_cast<Day>(i);
        const Probs* latest = nullptr;
        while (next < stream.size() && stream[next].first <= day) latest = stream[next++].second;
        if (latest) standing = brier(ifp, *latest, outcome);
        if (standing) out[i] = standing;
        else if (fill == Fill::uniform) out[i] = prior;
    }
    return out;
}

inline std::vector<DatedProbs> source_stream(const TournamentLog& log, std::size_t ifp_index, const Source& source) {
    std::vector<DatedProbs> stream;
    const auto all = log.forecasts();
    for (std::size_t i : log.forecasts_for(ifp_index))
        if (all[i].source == source) stream.emplace_back(all[i].timestamp.day, &all[i].probs);
    return stream;
}

inline std::vector<DailyScore> score_ifp_daily(const TournamentLog& log, std::string_view ifp_id, const Source& source,
                                               Fill fill = Fill::uniform) {
    const auto idx = log.ifp_index(ifp_id);
    if (!idx) throw ValidationError("unknown IFP: " + std::string(ifp_id));
    const Ifp& ifp = log.ifps()[*idx];
    const auto stream = source_stream(log, *idx, source);
    const auto daily = daily_brier_stream(ifp, stream, fill);
    std::vector<DailyScore> out;
    for (std::size_t i = 0; i < daily.size(); ++i)
        if (daily[i]) out.push_back({ifp.id, source, ifp.open_date + static_cast<Day>(i), *daily[i]});
    return out;
}

/// Mean daily Brier of one source on one resolved IFP (uniform fill).
inline double mean_daily_brier(const TournamentLog& log, std::string_view ifp_id, const Source& source) {
    const auto scores = score_ifp_daily(log, ifp_id, source, Fill::uniform);
    double s = 0.0;
    for (const auto& d : scores) s += d.brier;
    return s / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Individual scoring with cohort-median imputation

/// Per resolved IFP and active day, the median Brier across one cohort's
/// forecasters holding a standing forecast that day (empty when nobody does).
struct CohortMedianTable {
    std::map<std::string, std::vector<std::optional<double>>> by_ifp;
    bool empty() const { return by_ifp.empty(); }
};

inline CohortMedianTable cohort_median_table(const TournamentLog& log, const std::string& condition) {
    CohortMedianTable table;
    const auto all = log.forecasts();
    for (std::size_t idx = 0; idx < log.ifps().size(); ++idx) {
        const Ifp& ifp = log.ifps()[idx];
        if (!ifp.is_resolved()) continue;
        std::map<std::string, std::vector<DatedProbs>> streams;
        for (std::size_t i : log.forecasts_for(idx)) {
            const Forecast& f = all[i];
            if (f.source.is_human() && log.condition_of(f.source.id) == condition)
                streams[f.source.id].emplace_back(f.timestamp.day, &f.probs);
        }
        if (streams.empty()) continue;
        std::vector<std::vector<double>> per_day(ifp.active_days());
        for (const auto& [user, stream] : streams) {
            const auto daily = daily_brier_stream(ifp, stream, Fill::none);
            for (std::size_t d = 0; d < daily.size(); ++d)
                if (daily[d]) per_day[d].push_back(*daily[d]);
        }
        auto& column = table.by_ifp[ifp.id];
        column.resize(per_day.size());
        for (std::size_t d = 0; d < per_day.size(); ++d)
            if (!per_day[d].empty()) column[d] = stats::median(std::move(per_day[d]));
    }
    return table;
}

/// Score of one user on one resolved IFP: own carried-forward Briers from the
/// first forecast on, cohort medians before it. A pre-first-forecast day with
/// no cohort median falls back to the uniform prior. nullopt if the user never
/// forecast the IFP.
inline std::optional<double> individual_ifp_score(const TournamentLog& log, std::size_t ifp_index,
                                                  const std::string& user, const CohortMedianTable& medians) {
    const Ifp& ifp = log.ifps()[ifp_index];
    const auto stream = source_stream(log, ifp_index, Source::human(user));
    if (stream.empty()) return std::nullopt;
    const auto daily = daily_brier_stream(ifp, stream, Fill::none);
    const auto col = medians.by_ifp.find(ifp.id);
    const double prior = uniform_brier(ifp);
    double sum = 0.0;
    for (std::size_t d = 0; d < daily.size(); ++d) {
        if (daily[d]) sum += *daily[d];
        else if (col != medians.by_ifp.end() && d < col->second.size() && col->second[d]) sum += *col->second[d];
        else sum += prior;
    }
    return sum / static_cast<double>(daily.size());
}

/// Mean over attempted resolved IFPs of the user's imputed mean daily Brier.
inline std::optional<double> mmdb_individual(const TournamentLog& log, const std::string& user,
                                             const CohortMedianTable& medians) {
    if (medians.empty()) throw ValidationError("empty cohort median table");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t idx = 0; idx < log.ifps().size(); ++idx) {
        if (!log.ifps()[idx].is_resolved()) continue;
        if (const auto s = individual_ifp_score(log, idx, user, medians)) {
            sum += *s;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Standardization and effect sizes

/// (x - mean) / sample sd within one group; degenerate groups map to zeros.
inline std::vector<double> zscores(std::span<const double> xs) {
    std::vector<double> z(xs.size(), 0.0);
    if (xs.size() < 2) return z;
    const double m = stats::mean(xs);
    const double sd = stats::sample_sd(xs);
    if (!(sd > 0.0)) return z;
    for (std::size_t i = 0; i < xs.size(); ++i) z[i] = (xs[i] - m) / sd;
    return z;
}

enum class StandardizeLevel { ifp_day, ifp };

/// z-scores aligned with `scores`, grouped per (IFP, day) or per IFP.
inline std::vector<double> standardize(std::span<const DailyScore> scores,
                                       StandardizeLevel level = StandardizeLevel::ifp_day) {
    std::map<std::pair<std::string, Day>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const Day key_day = level == StandardizeLevel::ifp_day ? scores[i].day : 0;
        groups[{scores[i].ifp_id, key_day}].push_back(i);
    }
    std::vector<double> out(scores.size(), 0.0);
    std::vector<double> values;
    for (const auto& [key, members] : groups) {
        values.clear();
        for (std::size_t i : members) values.push_back(scores[i].brier);
        const auto z = zscores(values);
        for (std::size_t k = 0; k < members.size(); ++k) out[members[k]] = z[k];
    }
    return out;
}

/// Standardized mean difference (a - b) with the pooled two-sample sd.
inline double cohens_d(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("cohens_d: empty sample");
    if (a.size() + b.size() < 3) throw std::invalid_argument("cohens_d: too few observations");
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double pooled =
        std::sqrt(((na - 1.0) * stats::sample_variance(a) + (nb - 1.0) * stats::sample_variance(b)) / (na + nb - 2.0));
    if (!(pooled > 0.0)) throw std::invalid_argument("cohens_d: zero pooled sd");
    return (stats::mean(a) - stats::mean(b)) / pooled;
}

struct SummaryStats {
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;
    double q25 = 0.0;
    double median = 0.0;
    double q75 = 0.0;
};

inline SummaryStats summarize(std::span<const double> xs) {
    SummaryStats s;
    s.n = xs.size();
    if (xs.empty()) return s;
    const std::vector<double> v(xs.begin(), xs.end());
    s.mean = stats::mean(xs);
    s.sd = stats::sample_sd(xs);
    s.q25 = stats::quantile(v, 0.25);
    s.median = stats::quantile(v, 0.5);
    s.q75 = stats::quantile(v, 0.75);
    return s;
}

// ---------------------------------------------------------------------------
// Reports

struct ReportOptions {
    std::vector<Source> sources;  ///< empty: every source in the log
    std::optional<Source> baseline;
    StandardizeLevel level = StandardizeLevel::ifp_day;
};

struct ScoreReport {
    std::vector<DailyScore> daily;
    std::vector<double> standardized;                          ///< aligned with daily
    std::map<std::pair<Source, std::string>, double> mdb;      ///< (source, ifp) -> MDB
    std::map<Source, double> mmdb;                             ///< mean of MDB over scored IFPs
    std::map<Source, SummaryStats> summary;                    ///< over standardized daily scores
    std::map<std::string, SummaryStats> condition_summary;     ///< humans grouped by condition
    std::map<Source, double> cohens_d_vs_baseline;             ///< on per-IFP MDB
    std::optional<Source> baseline;
};

/// Scores every requested source on every resolved IFP. Machine and slot
/// sources use uniform fill over all active days; humans are scored from
/// their first forecast, and their MDB uses cohort-median imputation.
inline ScoreReport build_score_report(const TournamentLog& log, const ReportOptions& options = {}) {
    ScoreReport report;
    report.baseline = options.baseline;
    const std::vector<Source> sources = options.sources.empty() ? log.sources() : options.sources;

    std::map<std::string, CohortMedianTable> medians;
    for (const auto& s : sources)
        if (s.is_human()) {
            const auto& cond = log.condition_of(s.id);
            if (!medians.contains(cond)) medians.emplace(cond, cohort_median_table(log, cond));
        }

    for (std::size_t idx = 0; idx < log.ifps().size(); ++idx) {
        const Ifp& ifp = log.ifps()[idx];
        if (!ifp.is_resolved()) continue;
        for (const auto& source : sources) {
            const auto stream = source_stream(log, idx, source);
            if (source.is_human()) {
                if (stream.empty()) continue;
                const auto daily = daily_brier_stream(ifp, stream, Fill::none);
                for (std::size_t d = 0; d < daily.size(); ++d)
                    if (daily[d]) report.daily.push_back({ifp.id, source, ifp.open_date + static_cast<Day>(d), *daily[d]});
                const auto& table = medians.at(log.condition_of(source.id));
                report.mdb[{source, ifp.id}] = *individual_ifp_score(log, idx, source.id, table);
            } else {
                const auto daily = daily_brier_stream(ifp, stream, Fill::uniform);
                double sum = 0.0;
                for (std::size_t d = 0; d < daily.size(); ++d) {
                    report.daily.push_back({ifp.id, source, ifp.open_date + static_cast<Day>(d), *daily[d]});
                    sum += *daily[d];
                }
                report.mdb[{source, ifp.id}] = sum / static_cast<double>(daily.size());
            }
        }
    }

    report.standardized = standardize(report.daily, options.level);

    std::map<Source, std::vector<double>> z_by_source;
    std::map<std::string, std::vector<double>> z_by_condition;
    for (std::size_t i = 0; i < report.daily.size(); ++i) {
        const Source& s = report.daily[i].source;
        z_by_source[s].push_back(report.standardized[i]);
        if (s.is_human()) z_by_condition[log.condition_of(s.id)].push_back(report.standardized[i]);
    }
    for (const auto& [s, z] : z_by_source) report.summary[s] = summarize(z);
    for (const auto& [c, z] : z_by_condition) report.condition_summary[c] = summarize(z);

    std::map<Source, std::vector<double>> mdb_by_source;
    for (const auto& [key, value] : report.mdb) mdb_by_source[key.first].push_back(value);
    for (const auto& [s, values] : mdb_by_source) report.mmdb[s] = stats::mean(values);

    if (options.baseline && mdb_by_source.contains(*options.baseline)) {
        const auto& base = mdb_by_source.at(*options.baseline);
        for (const auto& [s, values] : mdb_by_source) {
            if (s == *options.baseline) continue;
            try {
                report.cohens_d_vs_baseline[s] = cohens_d(values, base);
            } catch (const std::invalid_argument&) {
                // zero pooled sd: no effect size to report
            }
        }
    }
    return report;
}

}  // namespace hyfo
