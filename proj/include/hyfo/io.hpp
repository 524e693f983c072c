#pragma once

// CSV and JSON plumbing: canonical log files, mapped ingestion of external
// exports with a rejects list, series files, run configs and manifests.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "hyfo/aggregation.hpp"
#include "hyfo/allocation.hpp"
#include "hyfo/core.hpp"
#include "hyfo/rng.hpp"
#include "hyfo/simulator.hpp"
#include "hyfo/tsmodels.hpp"

namespace hyfo::io {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline constexpr std::string_view kVersion = "0.3.0";

// ---------------------------------------------------------------------------
// CSV

using Row = std::vector<std::string>;

/// RFC 4180 fields: quotes, doubled quotes, embedded commas and newlines.
inline std::vector<Row> parse_csv(std::string_view text) {
    std::vector<Row> rows;
    Row row;
    std::string field;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
            case '"': quoted = true; any = true; break;
            case ',':
                row.push_back(std::move(field));
                field.clear();
                any = true;
                break;
            case '\r': break;
            case '\n':
                if (any || !field.empty()) {
                    row.push_back(std::move(field));
                    rows.push_back(std::move(row));
                }
                row.clear();
                field.clear();
                any = false;
                break;
            default: field += c; any = true;
        }
    }
    if (quoted) throw ValidationError("unterminated quote in CSV");
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

class CsvWriter {
public:
    explicit CsvWriter(const Row& header) { row(header); }
    CsvWriter& row(const Row& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ += ',';
            out_ += csv_field(fields[i]);
        }
        out_ += '\n';
        return *this;
    }
    const std::string& str() const { return out_; }

private:
    std::string out_;
};

/// Shortest text that parses back to the same double.
inline std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto* b = s.data();
    if (!s.empty() && s.front() == '+') ++b;
    const auto r = std::from_chars(b, s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) throw ValidationError("bad number: " + std::string(s));
    return v;
}

template <typename Int>
Int parse_int(std::string_view s) {
    Int v{};
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) throw ValidationError("bad integer: " + std::string(s));
    return v;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

/// Header lookup for a parsed table.
class Table {
public:
    Table(std::vector<Row> rows, std::string name) : name_(std::move(name)) {
        if (rows.empty()) throw ValidationError(name_ + ": missing header row");
        header_ = std::move(rows.front());
        rows.erase(rows.begin());
        rows_ = std::move(rows);
        for (std::size_t i = 0; i < header_.size(); ++i) cols_[header_[i]] = i;
    }
    static Table load(const fs::path& path) { return Table(parse_csv(read_file(path)), path.filename().string()); }

    bool has(const std::string& col) const { return cols_.contains(col); }
    std::optional<std::size_t> find(const std::string& col) const {
        std::optional<std::size_t> out;
        if (const auto it = cols_.find(col); it != cols_.end()) out = it->second;
        return out;
    }
    std::size_t col(const std::string& name) const {
        const auto it = cols_.find(name);
        if (it == cols_.end()) throw ValidationError(name_ + ": missing column '" + name + "'");
        return it->second;
    }
    const std::vector<Row>& rows() const { return rows_; }
    const Row& header() const { return header_; }
    const std::string& name() const { return name_; }

    const std::string& at(std::size_t row, std::size_t col) const {
        const Row& r = rows_[row];
        if (col >= r.size()) throw ValidationError(name_ + ": row " + std::to_string(row + 2) + " is short");
        return r[col];
    }

private:
    std::string name_;
    Row header_;
    std::vector<Row> rows_;
    std::map<std::string, std::size_t> cols_;
};

// ---------------------------------------------------------------------------
// Canonical log files

inline const Row kIfpHeader{"ifp_id",  "title",          "kind",       "options",    "open_date",
                            "close_date", "resolved_option", "series_ref", "thresholds", "horizon_kind"};
inline const Row kForecastHeader{"ifp_id", "source", "condition", "date", "ordinal", "option", "probability"};
inline const Row kScoreHeader{"ifp_id", "source", "day", "brier"};

inline std::string ifps_csv(std::span<const Ifp> ifps) {
    CsvWriter w(kIfpHeader);
    for (const auto& ifp : ifps) {
        for (const auto& o : ifp.options)
            if (o.find('|') != std::string::npos) throw ValidationError("option label contains '|': " + o);
        std::vector<std::string> th;
        for (double t : ifp.thresholds) th.push_back(fmt(t));
        w.row({ifp.id, ifp.title, std::string(to_string(ifp.kind)), join(ifp.options, '|'), format_iso_date(ifp.open_date),
               format_iso_date(ifp.close_date), ifp.resolved_option ? std::to_string(*ifp.resolved_option) : "",
               ifp.series_ref.value_or(""), join(th, '|'), std::string(to_string(ifp.horizon_kind))});
    }
    return w.str();
}

inline std::vector<Ifp> read_ifps(const Table& t) {
    std::vector<Ifp> out;
    const auto c_id = t.col("ifp_id"), c_title = t.col("title"), c_kind = t.col("kind"), c_opt = t.col("options"),
               c_open = t.col("open_date"), c_close = t.col("close_date"), c_res = t.col("resolved_option");
    const auto c_series = t.find("series_ref"), c_th = t.find("thresholds"), c_hk = t.find("horizon_kind");
    for (std::size_t r = 0; r < t.rows().size(); ++r) {
        try {
            Ifp ifp;
            ifp.id = t.at(r, c_id);
            ifp.title = t.at(r, c_title);
            ifp.kind = parse_ifp_kind(t.at(r, c_kind));
            ifp.options = split(t.at(r, c_opt), '|');
            ifp.open_date = parse_iso_date(t.at(r, c_open));
            ifp.close_date = parse_iso_date(t.at(r, c_close));
            if (const auto& res = t.at(r, c_res); !res.empty()) ifp.resolved_option = parse_int<std::size_t>(res);
            if (c_series && !t.at(r, *c_series).empty()) ifp.series_ref = t.at(r, *c_series);
            if (c_th)
                for (const auto& s : split(t.at(r, *c_th), '|')) ifp.thresholds.push_back(parse_double(s));
            if (c_hk && !t.at(r, *c_hk).empty()) ifp.horizon_kind = parse_horizon_kind(t.at(r, *c_hk));
            validate_ifp(ifp);
            out.push_back(std::move(ifp));
        } catch (const ValidationError& e) {
            throw ValidationError(t.name() + " row " + std::to_string(r + 2) + ": " + e.what());
        }
    }
    return out;
}

/// Long format: one row per (forecast, option).
inline std::string forecasts_csv(const TournamentLog& log, std::span<const Forecast> extra = {}) {
    CsvWriter w(kForecastHeader);
    const auto emit = [&](const Forecast& f) {
        const std::string cond = f.source.is_human() ? log.condition_of(f.source.id) : std::string();
        const std::string src = f.source.str(), date = format_iso_date(f.timestamp.day),
                          ord = std::to_string(f.timestamp.ordinal);
        for (std::size_t o = 0; o < f.probs.size(); ++o)
            w.row({f.ifp_id, src, cond, date, ord, std::to_string(o), fmt(f.probs[o])});
    };
    for (const auto& f : log.forecasts()) emit(f);
    for (const auto& f : extra) emit(f);
    return w.str();
}

inline std::string conditions_csv(const TournamentLog& log) {
    CsvWriter w({"user_id", "condition"});
    for (const auto& [user, cond] : log.conditions()) w.row({user, cond});
    return w.str();
}

/// Rebuilds a log from canonical tables. Consecutive rows sharing
/// (ifp, source, date, ordinal) form one forecast; options must appear once each.
inline TournamentLog read_canonical(const Table& ifps, const Table& forecasts, const Table* conditions = nullptr) {
    TournamentLog::Builder b;
    for (auto& ifp : read_ifps(ifps)) b.add_ifp(std::move(ifp));
    if (conditions) {
        const auto cu = conditions->col("user_id"), cc = conditions->col("condition");
        for (std::size_t r = 0; r < conditions->rows().size(); ++r)
            b.set_condition(conditions->at(r, cu), conditions->at(r, cc));
    }
    const auto c_ifp = forecasts.col("ifp_id"), c_src = forecasts.col("source"), c_date = forecasts.col("date"),
               c_ord = forecasts.col("ordinal"), c_opt = forecasts.col("option"), c_p = forecasts.col("probability");
    const auto c_cond = forecasts.find("condition");
    std::size_t r = 0;
    const auto n = forecasts.rows().size();
    while (r < n) {
        const std::size_t start = r;
        const auto key = [&](std::size_t i) {
            return std::tie(forecasts.at(i, c_ifp), forecasts.at(i, c_src), forecasts.at(i, c_date), forecasts.at(i, c_ord));
        };
        while (r < n && key(r) == key(start)) ++r;
        try {
            Forecast f;
            f.ifp_id = forecasts.at(start, c_ifp);
            if (!b.has_ifp(f.ifp_id)) throw ValidationError("unknown ifp");
            f.source = Source::parse(forecasts.at(start, c_src));
            f.timestamp = {parse_iso_date(forecasts.at(start, c_date)), parse_int<std::int32_t>(forecasts.at(start, c_ord))};
            const std::size_t c = b.ifp(f.ifp_id).num_options();
            f.probs.assign(c, 0.0);
            std::vector<char> seen(c, 0);
            for (std::size_t i = start; i < r; ++i) {
                const auto o = parse_int<std::size_t>(forecasts.at(i, c_opt));
                if (o >= c) throw ValidationError("unresolvable option");
                if (seen[o]++) throw ValidationError("duplicate option");
                f.probs[o] = parse_double(forecasts.at(i, c_p));
            }
            if (c_cond && f.source.is_human() && !forecasts.at(start, *c_cond).empty())
                b.set_condition(f.source.id, forecasts.at(start, *c_cond));
            b.add_forecast(std::move(f));
        } catch (const ValidationError& e) {
            throw ValidationError(forecasts.name() + " row " + std::to_string(start + 2) + ": " + e.what());
        }
    }
    return std::move(b).build();
}

inline void export_log(const TournamentLog& log, const fs::path& dir) {
    write_file(dir / "ifps.csv", ifps_csv(log.ifps()));
    write_file(dir / "forecasts.csv", forecasts_csv(log));
    write_file(dir / "conditions.csv", conditions_csv(log));
}

inline TournamentLog import_log(const fs::path& dir) {
    const auto ifps = Table::load(dir / "ifps.csv");
    const auto forecasts = Table::load(dir / "forecasts.csv");
    if (fs::exists(dir / "conditions.csv")) {
        const auto conds = Table::load(dir / "conditions.csv");
        return read_canonical(ifps, forecasts, &conds);
    }
    return read_canonical(ifps, forecasts);
}

inline std::string scores_csv(std::span<const DailyScore> scores) {
    CsvWriter w(kScoreHeader);
    for (const auto& s : scores) w.row({s.ifp_id, s.source.str(), format_iso_date(s.day), fmt(s.brier)});
    return w.str();
}

// ---------------------------------------------------------------------------
// Mapped ingestion of external exports

enum class ProbabilityScale { unit, percent };

struct IngestMapping {
    std::string ifp_id = "ifp_id";
    std::string user_id = "user_id";
    std::string option = "option";
    std::string probability = "probability";
    std::string timestamp = "timestamp";
    std::string condition;  ///< optional column
    std::string date_format = "%Y-%m-%d";
    ProbabilityScale scale = ProbabilityScale::unit;
    bool option_by_label = false;

    static IngestMapping from_json(const json& j);
};

struct Reject {
    std::size_t row = 0;  ///< 1-based line number in the source file (header is line 1)
    std::string reason;
};

struct ImportResult {
    TournamentLog log;
    std::vector<Reject> rejects;
    std::size_t rows = 0;
    double reject_rate() const { return rows ? static_cast<double>(rejects.size()) / static_cast<double>(rows) : 0.0; }
};

/// Day and seconds-of-day from a timestamp under a strftime-style format.
inline Timestamp parse_timestamp(const std::string& text, const std::string& format) {
    std::tm tm{};
    std::istringstream in(text);
    in >> std::get_time(&tm, format.c_str());
    if (in.fail()) throw ValidationError("unparseable timestamp '" + text + "'");
    in >> std::ws;
    if (!in.eof()) throw ValidationError("trailing text in timestamp '" + text + "'");
    const Day day = make_day(tm.tm_year + 1900, static_cast<unsigned>(tm.tm_mon + 1), static_cast<unsigned>(tm.tm_mday));
    return {day, tm.tm_hour * 3600 + tm.tm_min * 60 + tm.tm_sec};
}

/// Reads an external forecast export against known IFPs. Rows sharing
/// user x IFP x timestamp form one submission; a submission failing
/// validation rejects all of its rows. Aborts with ValidationError when the
/// reject share exceeds `max_reject_rate`.
inline ImportResult import_mapped(const Table& forecasts, std::span<const Ifp> ifps, const IngestMapping& m,
                                  double max_reject_rate = 0.01) {
    const auto c_ifp = forecasts.col(m.ifp_id), c_user = forecasts.col(m.user_id), c_opt = forecasts.col(m.option),
               c_p = forecasts.col(m.probability), c_ts = forecasts.col(m.timestamp);
    std::optional<std::size_t> c_cond;
    if (!m.condition.empty()) c_cond = forecasts.col(m.condition);

    TournamentLog::Builder b;
    for (const auto& ifp : ifps) b.add_ifp(ifp);

    struct Submission {
        std::string ifp_id, user, condition;
        Timestamp ts;
        std::vector<std::pair<std::size_t, std::string>> cells;  ///< (row, option text)
        std::vector<double> values;
        std::string error;
    };
    std::vector<Submission> subs;
    std::map<std::tuple<std::string, std::string, std::string>, std::size_t> index;
    ImportResult result;
    result.rows = forecasts.rows().size();

    for (std::size_t r = 0; r < forecasts.rows().size(); ++r) {
        const std::size_t line = r + 2;
        try {
            const auto& ifp_id = forecasts.at(r, c_ifp);
            const auto& user = forecasts.at(r, c_user);
            const auto& ts_text = forecasts.at(r, c_ts);
            const auto key = std::make_tuple(ifp_id, user, ts_text);
            auto it = index.find(key);
            if (it == index.end()) {
                Submission s;
                s.ifp_id = ifp_id;
                s.user = user;
                if (c_cond) s.condition = forecasts.at(r, *c_cond);
                try {
                    if (user.empty()) throw ValidationError("empty user id");
                    if (!b.has_ifp(ifp_id)) throw ValidationError("unknown ifp");
                    s.ts = parse_timestamp(ts_text, m.date_format);
                } catch (const ValidationError& e) {
                    s.error = e.what();
                }
                it = index.emplace(key, subs.size()).first;
                subs.push_back(std::move(s));
            }
            auto& s = subs[it->second];
            s.cells.emplace_back(line, forecasts.at(r, c_opt));
            double v = 0.0;
            try {
                v = parse_double(forecasts.at(r, c_p));
                if (m.scale == ProbabilityScale::percent) v /= 100.0;
            } catch (const ValidationError&) {
                if (s.error.empty()) s.error = "bad probability";
            }
            s.values.push_back(v);
        } catch (const ValidationError& e) {
            result.rejects.push_back({line, e.what()});
        }
    }

    for (auto& s : subs) {
        if (s.error.empty()) {
            try {
                const Ifp& ifp = b.ifp(s.ifp_id);
                const std::size_t c = ifp.num_options();
                Probs probs(c, 0.0);
                std::vector<char> seen(c, 0);
                for (std::size_t i = 0; i < s.cells.size(); ++i) {
                    const std::string& text = s.cells[i].second;
                    std::optional<std::size_t> o;
                    if (m.option_by_label) {
                        const auto pos = std::find(ifp.options.begin(), ifp.options.end(), text);
                        if (pos != ifp.options.end()) o = static_cast<std::size_t>(pos - ifp.options.begin());
                    } else {
                        try {
                            o = parse_int<std::size_t>(text);
                        } catch (const ValidationError&) {
                        }
                    }
                    if (!o || *o >= c) throw ValidationError("unresolvable option");
                    if (seen[*o]++) throw ValidationError("duplicate option");
                    probs[*o] = s.values[i];
                }
                b.add_forecast({s.ifp_id, Source::human(s.user), std::move(probs), s.ts});
                if (!s.condition.empty()) b.set_condition(s.user, s.condition);
            } catch (const ValidationError& e) {
                s.error = e.what();
            }
        }
        if (!s.error.empty())
            for (const auto& cell : s.cells) result.rejects.push_back({cell.first, s.error});
    }
    std::sort(result.rejects.begin(), result.rejects.end(), [](const Reject& a, const Reject& b) { return a.row < b.row; });
    result.log = std::move(b).build();
    if (result.reject_rate() > max_reject_rate) {
        std::ostringstream msg;
        msg << "reject rate " << result.reject_rate() * 100.0 << "% exceeds " << max_reject_rate * 100.0 << "% ("
            << result.rejects.size() << " of " << result.rows << " rows)";
        throw ValidationError(msg.str());
    }
    return result;
}

inline std::string rejects_csv(std::span<const Reject> rejects) {
    CsvWriter w({"row", "reason"});
    for (const auto& r : rejects) w.row({std::to_string(r.row), r.reason});
    return w.str();
}

// ---------------------------------------------------------------------------
// Series files

/// `series_id,date,value` (many series) or `date,value` (one series named
/// after `default_id`).
inline std::map<std::string, std::vector<std::pair<Day, double>>> read_series(const Table& t, const std::string& default_id) {
    std::map<std::string, std::vector<std::pair<Day, double>>> out;
    const auto c_date = t.col("date"), c_value = t.col("value");
    const auto c_id = t.find("series_id");
    for (std::size_t r = 0; r < t.rows().size(); ++r) {
        try {
            out[c_id ? t.at(r, *c_id) : default_id].emplace_back(parse_iso_date(t.at(r, c_date)),
                                                                  parse_double(t.at(r, c_value)));
        } catch (const ValidationError& e) {
            throw ValidationError(t.name() + " row " + std::to_string(r + 2) + ": " + e.what());
        }
    }
    for (auto& [id, obs] : out) std::sort(obs.begin(), obs.end());
    return out;
}

inline std::string series_csv(const sim::World& world) {
    CsvWriter w({"series_id", "date", "value"});
    for (const auto& s : world.ifps) {
        const std::string id = s.ifp.series_ref.value_or("hidden-" + s.ifp.id);
        for (std::size_t t = 0; t < s.path.size(); ++t)
            w.row({id, format_iso_date(s.history_start + static_cast<Day>(t)), fmt(s.path[t])});
    }
    return w.str();
}

// ---------------------------------------------------------------------------
// JSON configuration

namespace detail {

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected an object");
    for (const auto& [k, v] : j.items())
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw ValidationError(where + ": unknown key '" + k + "'");
}

template <typename T>
void get_to(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception&) {
        throw ValidationError(where + "." + key + ": wrong type");
    }
}

inline Schedule schedule(const json& j, const std::string& where) {
    if (j.is_number()) return {j.get<double>(), j.get<double>()};
    check_keys(j, {"start", "end"}, where);
    Schedule s;
    get_to(j, "start", s.start, where);
    get_to(j, "end", s.end, where);
    return s;
}

}  // namespace detail

inline IngestMapping IngestMapping::from_json(const json& j) {
    const std::string where = "mapping";
    detail::check_keys(j, {"columns", "date_format", "probability_scale", "option_by"}, where);
    IngestMapping m;
    if (j.contains("columns")) {
        const auto& c = j.at("columns");
        detail::check_keys(c, {"ifp_id", "user_id", "option", "probability", "timestamp", "condition"}, where + ".columns");
        detail::get_to(c, "ifp_id", m.ifp_id, where);
        detail::get_to(c, "user_id", m.user_id, where);
        detail::get_to(c, "option", m.option, where);
        detail::get_to(c, "probability", m.probability, where);
        detail::get_to(c, "timestamp", m.timestamp, where);
        detail::get_to(c, "condition", m.condition, where);
    }
    detail::get_to(j, "date_format", m.date_format, where);
    std::string scale = "unit", by = "index";
    detail::get_to(j, "probability_scale", scale, where);
    detail::get_to(j, "option_by", by, where);
    if (scale == "unit" || scale == "0-1") m.scale = ProbabilityScale::unit;
    else if (scale == "percent" || scale == "0-100") m.scale = ProbabilityScale::percent;
    else throw ValidationError("mapping.probability_scale must be unit or percent");
    if (by != "index" && by != "label") throw ValidationError("mapping.option_by must be index or label");
    m.option_by_label = by == "label";
    return m;
}

inline AggregationConfig slot_from_json(const json& j, std::size_t i) {
    const std::string where = "slots[" + std::to_string(i) + "]";
    detail::check_keys(j,
                       {"name", "recency_fraction", "decay_rate", "skill_exponent", "individual_recalibration",
                        "extremization", "machine_equivalents", "min_forecasts_floor", "use_machine", "machine_sources",
                        "conditions", "update_frequency_coef", "update_size_coef", "mean_only"},
                       where);
    AggregationConfig c;
    bool mean_only = false;
    detail::get_to(j, "mean_only", mean_only, where);
    if (mean_only) c = AggregationConfig::mean_only();
    detail::get_to(j, "name", c.name, where);
    detail::get_to(j, "recency_fraction", c.recency_fraction, where);
    detail::get_to(j, "decay_rate", c.decay_rate, where);
    if (j.contains("skill_exponent")) c.skill_exponent = detail::schedule(j["skill_exponent"], where + ".skill_exponent");
    detail::get_to(j, "individual_recalibration", c.individual_recalibration, where);
    if (j.contains("extremization")) c.extremization = detail::schedule(j["extremization"], where + ".extremization");
    if (j.contains("machine_equivalents")) {
        const auto& k = j["machine_equivalents"];
        detail::check_keys(k, {"timeseries", "other"}, where + ".machine_equivalents");
        detail::get_to(k, "timeseries", c.machine_equivalents.timeseries, where);
        detail::get_to(k, "other", c.machine_equivalents.other, where);
    }
    detail::get_to(j, "min_forecasts_floor", c.min_forecasts_floor, where);
    detail::get_to(j, "use_machine", c.use_machine, where);
    detail::get_to(j, "machine_sources", c.machine_sources, where);
    detail::get_to(j, "conditions", c.conditions, where);
    detail::get_to(j, "update_frequency_coef", c.update_frequency_coef, where);
    detail::get_to(j, "update_size_coef", c.update_size_coef, where);
    c.validate();
    return c;
}

inline json slot_to_json(const AggregationConfig& c) {
    return {{"name", c.name},
            {"recency_fraction", c.recency_fraction},
            {"decay_rate", c.decay_rate},
            {"skill_exponent", {{"start", c.skill_exponent.start}, {"end", c.skill_exponent.end}}},
            {"individual_recalibration", c.individual_recalibration},
            {"extremization", {{"start", c.extremization.start}, {"end", c.extremization.end}}},
            {"machine_equivalents", {{"timeseries", c.machine_equivalents.timeseries}, {"other", c.machine_equivalents.other}}},
            {"min_forecasts_floor", c.min_forecasts_floor},
            {"use_machine", c.use_machine},
            {"machine_sources", c.machine_sources},
            {"conditions", c.conditions},
            {"update_frequency_coef", c.update_frequency_coef},
            {"update_size_coef", c.update_size_coef}};
}

inline AllocationPolicy policy_from_json(const json& j, std::size_t i) {
    const std::string where = "policies[" + std::to_string(i) + "]";
    detail::check_keys(j, {"name", "kind", "p_keep", "exclude_frac", "cap", "consensus"}, where);
    AllocationPolicy p;
    std::string kind = "all";
    detail::get_to(j, "kind", kind, where);
    p.kind = parse_policy_kind(kind);
    p.name = kind;
    detail::get_to(j, "name", p.name, where);
    detail::get_to(j, "p_keep", p.p_keep, where);
    detail::get_to(j, "exclude_frac", p.exclude_frac, where);
    if (j.contains("cap")) {
        if (j["cap"].is_null()) p.cap = kNoCap;
        else detail::get_to(j, "cap", p.cap, where);
    }
    if (j.contains("consensus")) {
        const auto& c = j["consensus"];
        detail::check_keys(c, {"top_threshold", "window_days", "max_drift", "min_forecasters"}, where + ".consensus");
        detail::get_to(c, "top_threshold", p.consensus.top_threshold, where);
        detail::get_to(c, "window_days", p.consensus.window_days, where);
        detail::get_to(c, "max_drift", p.consensus.max_drift, where);
        detail::get_to(c, "min_forecasters", p.consensus.min_forecasters, where);
    }
    p.validate();
    return p;
}

inline sim::SimConfig sim_from_json(const json& j) {
    const std::string where = "simulation";
    detail::check_keys(j,
                       {"n_ifps", "duration_mean", "duration_sd", "min_duration", "season_start", "season_days",
                        "share_binary", "share_ordinal", "n_forecasters", "activity_per_week", "update_preference",
                        "shared_bias_sd", "cohorts", "series", "history_days", "machine_refit_days", "machine_model",
                        "emit_machine", "swift_ordering"},
                       where);
    sim::SimConfig c;
    detail::get_to(j, "n_ifps", c.n_ifps, where);
    detail::get_to(j, "duration_mean", c.duration_mean, where);
    detail::get_to(j, "duration_sd", c.duration_sd, where);
    detail::get_to(j, "min_duration", c.min_duration, where);
    if (j.contains("season_start")) c.season_start = parse_iso_date(j["season_start"].get<std::string>());
    detail::get_to(j, "season_days", c.season_days, where);
    detail::get_to(j, "share_binary", c.share_binary, where);
    detail::get_to(j, "share_ordinal", c.share_ordinal, where);
    detail::get_to(j, "n_forecasters", c.n_forecasters, where);
    detail::get_to(j, "activity_per_week", c.activity_per_week, where);
    detail::get_to(j, "update_preference", c.update_preference, where);
    detail::get_to(j, "shared_bias_sd", c.shared_bias_sd, where);
    detail::get_to(j, "history_days", c.history_days, where);
    detail::get_to(j, "machine_refit_days", c.machine_refit_days, where);
    if (j.contains("machine_model")) c.machine_model = ts::parse_machine_model(j["machine_model"].get<std::string>());
    detail::get_to(j, "emit_machine", c.emit_machine, where);
    detail::get_to(j, "swift_ordering", c.swift_ordering, where);
    if (j.contains("series")) {
        const auto& s = j["series"];
        detail::check_keys(s, {"ar", "ma", "drift", "noise_sd", "level"}, where + ".series");
        detail::get_to(s, "ar", c.series.ar, where);
        detail::get_to(s, "ma", c.series.ma, where);
        detail::get_to(s, "drift", c.series.drift, where);
        detail::get_to(s, "noise_sd", c.series.noise_sd, where);
        detail::get_to(s, "level", c.series.level, where);
    }
    if (j.contains("cohorts")) {
        c.cohorts.clear();
        for (const auto& cj : j["cohorts"]) {
            detail::check_keys(cj,
                               {"name", "fraction", "anchor_to_machine", "skill_mean", "skill_sd", "noise_median",
                                "noise_log_sd", "overconfidence"},
                               where + ".cohorts");
            sim::Cohort k;
            detail::get_to(cj, "name", k.name, where);
            detail::get_to(cj, "fraction", k.fraction, where);
            detail::get_to(cj, "anchor_to_machine", k.anchor_to_machine, where);
            detail::get_to(cj, "skill_mean", k.skill_mean, where);
            detail::get_to(cj, "skill_sd", k.skill_sd, where);
            detail::get_to(cj, "noise_median", k.noise_median, where);
            detail::get_to(cj, "noise_log_sd", k.noise_log_sd, where);
            detail::get_to(cj, "overconfidence", k.overconfidence, where);
            c.cohorts.push_back(std::move(k));
        }
    }
    return c;
}

struct SparsitySettings {
    std::vector<double> levels{0.0, 0.2, 0.4, 0.6, 0.8};
    std::size_t reps = 20;
    std::string slot;  ///< empty: first slot
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::vector<AggregationConfig> slots;
    sim::SimConfig simulation;
    std::vector<AllocationPolicy> policies;
    SparsitySettings sparsity;
    std::vector<sim::Pool> pools;
    double max_reject_rate = 0.01;
    StandardizeLevel standardize = StandardizeLevel::ifp_day;
    std::optional<std::string> baseline;  ///< source string for Cohen's d in score summaries
    ts::MachineModel ts_model = ts::MachineModel::phe2;
    std::size_t ts_history = 120;
    std::size_t threads = 1;
    std::string canonical;  ///< normalized JSON text that the config hash covers

    const AggregationConfig& slot(const std::string& name) const {
        if (name.empty()) return slots.front();
        for (const auto& s : slots)
            if (s.name == name) return s;
        throw ValidationError("no slot named " + name);
    }
};

inline std::vector<AggregationConfig> default_slots() {
    AggregationConfig hybrid;
    hybrid.name = "hybrid";
    AggregationConfig human = hybrid;
    human.name = "human_only";
    human.use_machine = false;
    return {hybrid, human};
}

inline std::vector<AllocationPolicy> default_policies() {
    return {AllocationPolicy::keep_all(), AllocationPolicy::greedy(0.4), AllocationPolicy::greedy_pp(0.4, 20)};
}

inline RunConfig config_from_json(const json& j) {
    detail::check_keys(j,
                       {"seed", "slots", "simulation", "policies", "sparsity", "pools", "max_reject_rate", "standardize",
                        "baseline", "ts", "threads"},
                       "config");
    RunConfig c;
    detail::get_to(j, "seed", c.seed, "config");
    if (j.contains("slots")) {
        for (std::size_t i = 0; i < j["slots"].size(); ++i) c.slots.push_back(slot_from_json(j["slots"][i], i));
        for (std::size_t i = 0; i < c.slots.size(); ++i)
            for (std::size_t k = 0; k < i; ++k)
                if (c.slots[i].name == c.slots[k].name) throw ValidationError("duplicate slot name " + c.slots[i].name);
    }
    if (c.slots.empty()) c.slots = default_slots();
    if (j.contains("simulation")) c.simulation = sim_from_json(j["simulation"]);
    if (j.contains("policies"))
        for (std::size_t i = 0; i < j["policies"].size(); ++i) c.policies.push_back(policy_from_json(j["policies"][i], i));
    else
        c.policies = default_policies();
    if (j.contains("sparsity")) {
        const auto& s = j["sparsity"];
        detail::check_keys(s, {"levels", "reps", "slot"}, "sparsity");
        detail::get_to(s, "levels", c.sparsity.levels, "sparsity");
        detail::get_to(s, "reps", c.sparsity.reps, "sparsity");
        detail::get_to(s, "slot", c.sparsity.slot, "sparsity");
        for (double l : c.sparsity.levels)
            if (!(l >= 0.0 && l < 1.0)) throw ValidationError("sparsity.levels must lie in [0,1)");
        if (c.sparsity.reps == 0) throw ValidationError("sparsity.reps must be > 0");
    }
    if (j.contains("pools")) {
        for (const auto& pj : j["pools"]) {
            detail::check_keys(pj, {"name", "conditions"}, "pools");
            sim::Pool p;
            detail::get_to(pj, "name", p.name, "pools");
            detail::get_to(pj, "conditions", p.conditions, "pools");
            c.pools.push_back(std::move(p));
        }
    }
    detail::get_to(j, "max_reject_rate", c.max_reject_rate, "config");
    if (!(c.max_reject_rate >= 0.0 && c.max_reject_rate <= 1.0)) throw ValidationError("max_reject_rate must be in [0,1]");
    if (j.contains("standardize")) {
        const auto s = j["standardize"].get<std::string>();
        if (s == "ifp_day") c.standardize = StandardizeLevel::ifp_day;
        else if (s == "ifp") c.standardize = StandardizeLevel::ifp;
        else throw ValidationError("standardize must be ifp_day or ifp");
    }
    if (j.contains("baseline")) c.baseline = j["baseline"].get<std::string>();
    if (j.contains("ts")) {
        const auto& t = j["ts"];
        detail::check_keys(t, {"model", "history_days"}, "ts");
        if (t.contains("model")) c.ts_model = ts::parse_machine_model(t["model"].get<std::string>());
        detail::get_to(t, "history_days", c.ts_history, "ts");
    }
    detail::get_to(j, "threads", c.threads, "config");
    c.simulation.seed = c.seed;
    c.simulation.threads = c.threads;
    c.simulation.validate();
    c.canonical = j.dump();
    return c;
}

inline RunConfig load_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
}

inline IngestMapping load_mapping(const fs::path& path) {
    try {
        return IngestMapping::from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw ValidationError("mapping " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Manifest

inline std::string hex64(std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << v;
    return ss.str();
}

inline std::string file_digest(const fs::path& path) { return "fnv1a64:" + hex64(fnv1a64(read_file(path))); }

struct RunManifest {
    std::string command;
    std::string config_hash;
    std::vector<std::pair<std::string, std::string>> inputs;  ///< path, digest
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string version{kVersion};
    std::vector<std::string> outputs;

    json to_json() const {
        json in = json::array();
        for (const auto& [p, d] : inputs) in.push_back({{"path", p}, {"digest", d}});
        // thread count is recorded but never changes outputs
        return {{"command", command}, {"config_hash", config_hash}, {"inputs", in},          {"seed", seed},
                {"threads", threads}, {"version", version},         {"outputs", outputs}};
    }
};

}  // namespace hyfo::io
