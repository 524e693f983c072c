#pragma once

// Domain types and forecast-stream mechanics shared by every module:
// IFPs, forecasts, the tournament log, validation and carry-forward.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hyfo {

/// Calendar day as a count of days since 1970-01-01.
using Day = std::int32_t;

/// A probability vector over an IFP's options.
using Probs = std::vector<double>;

inline constexpr std::size_t kMinOptions = 2;
inline constexpr std::size_t kMaxOptions = 5;
inline constexpr double kInputSumTolerance = 1e-6;
inline constexpr double kInvariantTolerance = 1e-9;

class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Dates

inline Day make_day(int year, unsigned month, unsigned day) {
    using namespace std::chrono;
    const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
    if (!ymd.ok()) throw ValidationError("invalid calendar date");
    return static_cast<Day>(sys_days{ymd}.time_since_epoch().count());
}

/// Parses YYYY-MM-DD (trailing time-of-day text is ignored).
inline Day parse_iso_date(std::string_view text) {
    int y = 0;
    unsigned m = 0, d = 0;
    const std::string s(text.substr(0, std::min<std::size_t>(text.size(), 10)));
    if (s.size() != 10 || s[4] != '-' || s[7] != '-' || std::sscanf(s.c_str(), "%d-%u-%u", &y, &m, &d) != 3)
        throw ValidationError("bad ISO date: " + std::string(text));
    return make_day(y, m, d);
}

inline std::string format_iso_date(Day day) {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{days{day}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

/// Day plus an intra-day ordinal; later ordinals win ties on the same day.
struct Timestamp {
    Day day = 0;
    std::int32_t ordinal = 0;
    auto operator<=>(const Timestamp&) const = default;
};

// ---------------------------------------------------------------------------
// IFPs

enum class IfpKind { binary, ordinal, nominal };
enum class HorizonKind { value_at_close, sum_over_window };

inline std::string_view to_string(IfpKind k) {
    switch (k) {
        case IfpKind::binary: return "binary";
        case IfpKind::ordinal: return "ordinal";
        case IfpKind::nominal: return "nominal";
    }
    return "?";
}

inline IfpKind parse_ifp_kind(std::string_view s) {
    if (s == "binary") return IfpKind::binary;
    if (s == "ordinal") return IfpKind::ordinal;
    if (s == "nominal") return IfpKind::nominal;
    throw ValidationError("unknown IFP kind: " + std::string(s));
}

inline std::string_view to_string(HorizonKind k) {
    return k == HorizonKind::value_at_close ? "value_at_close" : "sum_over_window";
}

inline HorizonKind parse_horizon_kind(std::string_view s) {
    if (s.empty() || s == "value_at_close") return HorizonKind::value_at_close;
    if (s == "sum_over_window") return HorizonKind::sum_over_window;
    throw ValidationError("unknown horizon kind: " + std::string(s));
}

/// Individual Forecasting Problem: one question with 2..5 exclusive outcomes.
struct Ifp {
    std::string id;
    std::string title;
    std::vector<std::string> options;
    IfpKind kind = IfpKind::binary;
    Day open_date = 0;
    Day close_date = 0;
    std::optional<std::size_t> resolved_option;
    std::optional<std::string> series_ref;
    /// C-1 strictly increasing cut points; option i covers (t[i-1], t[i]].
    std::vector<double> thresholds;
    HorizonKind horizon_kind = HorizonKind::value_at_close;

    std::size_t num_options() const { return options.size(); }
    bool is_resolved() const { return resolved_option.has_value(); }
    bool is_timeseries() const { return series_ref.has_value(); }
    bool is_active(Day d) const { return d >= open_date && d <= close_date; }
    /// Both endpoints count as active days.
    std::size_t active_days() const { return static_cast<std::size_t>(close_date - open_date + 1); }
    bool operator==(const Ifp&) const = default;
};

inline void validate_ifp(const Ifp& ifp) {
    const std::size_t c = ifp.num_options();
    const auto fail = [&](const std::string& why) { throw ValidationError("IFP " + ifp.id + ": " + why); };
    if (ifp.id.empty()) fail("empty id");
    if (c < kMinOptions || c > kMaxOptions) fail("option count must be in 2..5");
    if (ifp.open_date > ifp.close_date) fail("open_date after close_date");
    if ((ifp.kind == IfpKind::binary) != (c == 2)) fail("binary kind requires exactly two options");
    if (!ifp.thresholds.empty()) {
        if (ifp.kind == IfpKind::nominal) fail("thresholds on a nominal IFP");
        if (ifp.thresholds.size() != c - 1) fail("need C-1 thresholds");
        for (std::size_t i = 1; i < ifp.thresholds.size(); ++i)
            if (!(ifp.thresholds[i] > ifp.thresholds[i - 1])) fail("thresholds not strictly increasing");
    }
    if (ifp.resolved_option && *ifp.resolved_option >= c) fail("resolved option out of range");
}

// ---------------------------------------------------------------------------
// Sources and forecasts

enum class SourceKind { human, machine, slot };

struct Source {
    SourceKind kind = SourceKind::human;
    std::string id;

    static Source human(std::string id) { return {SourceKind::human, std::move(id)}; }
    static Source machine(std::string id) { return {SourceKind::machine, std::move(id)}; }
    static Source slot(std::string id) { return {SourceKind::slot, std::move(id)}; }

    bool is_human() const { return kind == SourceKind::human; }

    /// "human:<id>", "machine:<id>" or "slot:<id>".
    std::string str() const {
        switch (kind) {
            case SourceKind::human: return "human:" + id;
            case SourceKind::machine: return "machine:" + id;
            case SourceKind::slot: return "slot:" + id;
        }
        return id;
    }

    static Source parse(std::string_view text) {
        const auto colon = text.find(':');
        if (colon == std::string_view::npos) return human(std::string(text));
        const auto kind = text.substr(0, colon);
        std::string id(text.substr(colon + 1));
        if (id.empty()) throw ValidationError("empty source id");
        if (kind == "human") return human(std::move(id));
        if (kind == "machine") return machine(std::move(id));
        if (kind == "slot") return slot(std::move(id));
        throw ValidationError("unknown source kind: " + std::string(kind));
    }

    auto operator<=>(const Source&) const = default;
    bool operator==(const Source&) const = default;
};

struct Forecast {
    std::string ifp_id;
    Source source;
    Probs probs;
    Timestamp timestamp;
    bool operator==(const Forecast&) const = default;
};

/// Checks a submitted vector and returns it normalized to sum to one.
/// Sums within a few ulps of one are kept bit-for-bit so that re-validating
/// an already normalized vector is the identity.
inline Probs validate_forecast(std::span<const double> probs, std::size_t c) {
    if (c < kMinOptions || c > kMaxOptions) throw ValidationError("option count must be in 2..5");
    if (probs.size() != c) throw ValidationError("wrong length");
    double sum = 0.0;
    for (double p : probs) {
        if (!std::isfinite(p)) throw ValidationError("non-finite probability");
        if (p < 0.0) throw ValidationError("negative probability");
        if (p > 1.0 + kInputSumTolerance) throw ValidationError("probability above 1");
        sum += p;
    }
    const double dev = std::abs(sum - 1.0);
    if (dev > kInputSumTolerance) throw ValidationError("sum deviation");
    Probs out(probs.begin(), probs.end());
    if (dev > 1e-12)
        for (double& p : out) p /= sum;
    return out;
}

inline Probs uniform_forecast(std::size_t c) {
    if (c < kMinOptions || c > kMaxOptions) throw ValidationError("option count must be in 2..5");
    return Probs(c, 1.0 / static_cast<double>(c));
}

// ---------------------------------------------------------------------------
// Tournament log

/// IFPs and their forecasts. Immutable once built; forecasts are held in
/// timestamp order (insertion order breaks exact ties).
class TournamentLog {
public:
    class Builder;

    const std::vector<Ifp>& ifps() const { return ifps_; }
    std::span<const Forecast> forecasts() const { return forecasts_; }

    std::optional<std::size_t> ifp_index(std::string_view id) const {
        const auto it = index_.find(std::string(id));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const Ifp& ifp(std::string_view id) const {
        const auto idx = ifp_index(id);
        if (!idx) throw ValidationError("unknown IFP: " + std::string(id));
        return ifps_[*idx];
    }

    /// Indices into forecasts() for one IFP, in timestamp order.
    const std::vector<std::size_t>& forecasts_for(std::size_t ifp_index) const { return by_ifp_[ifp_index]; }

    /// Cohort/condition tag of a human user ("" when untagged).
    const std::string& condition_of(const std::string& user) const {
        static const std::string empty;
        const auto it = conditions_.find(user);
        return it == conditions_.end() ? empty : it->second;
    }
    const std::map<std::string, std::string>& conditions() const { return conditions_; }

    /// Sorted distinct human user ids.
    std::vector<std::string> human_users() const {
        std::vector<std::string> users;
        for (const auto& f : forecasts_)
            if (f.source.is_human()) users.push_back(f.source.id);
        std::sort(users.begin(), users.end());
        users.erase(std::unique(users.begin(), users.end()), users.end());
        return users;
    }

    /// Sorted distinct sources.
    std::vector<Source> sources() const {
        std::vector<Source> out;
        for (const auto& f : forecasts_) out.push_back(f.source);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    Day first_day() const { return first_day_; }
    Day last_day() const { return last_day_; }

    /// New log holding the forecasts for which keep(f) is true; IFPs and
    /// conditions are carried over unchanged.
    template <typename Pred>
    TournamentLog filtered(Pred&& keep) const {
        TournamentLog out;
        out.ifps_ = ifps_;
        out.index_ = index_;
        out.conditions_ = conditions_;
        out.first_day_ = first_day_;
        out.last_day_ = last_day_;
        for (const auto& f : forecasts_)
            if (keep(f)) out.forecasts_.push_back(f);
        out.reindex();
        return out;
    }

    bool operator==(const TournamentLog& o) const {
        return ifps_ == o.ifps_ && forecasts_ == o.forecasts_ && conditions_ == o.conditions_;
    }

private:
    void reindex() {
        by_ifp_.assign(ifps_.size(), {});
        for (std::size_t i = 0; i < forecasts_.size(); ++i)
            by_ifp_[index_.at(forecasts_[i].ifp_id)].push_back(i);
    }

    std::vector<Ifp> ifps_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Forecast> forecasts_;
    std::vector<std::vector<std::size_t>> by_ifp_;
    std::map<std::string, std::string> conditions_;
    Day first_day_ = 0;
    Day last_day_ = -1;
};

class TournamentLog::Builder {
public:
    Builder& add_ifp(Ifp ifp) {
        validate_ifp(ifp);
        if (log_.index_.contains(ifp.id)) throw ValidationError("duplicate IFP id: " + ifp.id);
        log_.index_.emplace(ifp.id, log_.ifps_.size());
        log_.ifps_.push_back(std::move(ifp));
        return *this;
    }

    /// Validates against the referenced IFP and normalizes the vector.
    Builder& add_forecast(Forecast f) {
        const auto it = log_.index_.find(f.ifp_id);
        if (it == log_.index_.end()) throw ValidationError("unknown IFP: " + f.ifp_id);
        const Ifp& ifp = log_.ifps_[it->second];
        f.probs = validate_forecast(f.probs, ifp.num_options());
        if (!ifp.is_active(f.timestamp.day)) throw ValidationError("outside active window");
        log_.forecasts_.push_back(std::move(f));
        return *this;
    }

    Builder& set_condition(const std::string& user, std::string condition) {
        log_.conditions_[user] = std::move(condition);
        return *this;
    }

    bool has_ifp(std::string_view id) const { return log_.index_.contains(std::string(id)); }
    const Ifp& ifp(std::string_view id) const { return log_.ifps_[log_.index_.at(std::string(id))]; }

    TournamentLog build() && {
        std::stable_sort(log_.forecasts_.begin(), log_.forecasts_.end(),
                         [](const Forecast& a, const Forecast& b) { return a.timestamp < b.timestamp; });
        if (!log_.ifps_.empty()) {
            log_.first_day_ = log_.ifps_.front().open_date;
            log_.last_day_ = log_.ifps_.front().close_date;
            for (const auto& ifp : log_.ifps_) {
                log_.first_day_ = std::min(log_.first_day_, ifp.open_date);
                log_.last_day_ = std::max(log_.last_day_, ifp.close_date);
            }
        }
        log_.reindex();
        return std::move(log_);
    }

private:
    TournamentLog log_;
};

// ---------------------------------------------------------------------------
// Forecast-stream mechanics

/// Most recent forecast at or before `day` for every source on the IFP.
inline std::map<Source, Forecast> latest_per_source(const TournamentLog& log, std::string_view ifp_id, Day day) {
    const auto idx = log.ifp_index(ifp_id);
    if (!idx) throw ValidationError("unknown IFP: " + std::string(ifp_id));
    std::map<Source, Forecast> out;
    const auto all = log.forecasts();
    for (std::size_t i : log.forecasts_for(*idx)) {
        const Forecast& f = all[i];
        if (f.timestamp.day > day) break;
        out.insert_or_assign(f.source, f);
    }
    return out;
}

enum class Fill { uniform, none };

/// Carried-forward standing vector of one source on `day`.
inline std::optional<Probs> active_forecast_on_day(const TournamentLog& log, const Source& source,
                                                   std::string_view ifp_id, Day day, Fill fill) {
    const auto idx = log.ifp_index(ifp_id);
    if (!idx) throw ValidationError("unknown IFP: " + std::string(ifp_id));
    const auto all = log.forecasts();
    const Forecast* latest = nullptr;
    for (std::size_t i : log.forecasts_for(*idx)) {
        const Forecast& f = all[i];
        if (f.timestamp.day > day) break;
        if (f.source == source) latest = &f;
    }
    if (latest) return latest->probs;
    if (fill == Fill::uniform) return uniform_forecast(log.ifps()[*idx].num_options());
    return std::nullopt;
}

}  // namespace hyfo
