// hyfo command-line front end: score, aggregate, ts-forecast, simulate,
// sparsity, allocate, backcast. Every command writes CSVs, summary.json and
// manifest.json into --out-dir.

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hyfo/io.hpp"

namespace fs = std::filesystem;
using namespace hyfo;
using io::json;

namespace {

struct Options {
    std::string config;
    std::string out_dir = "out";
    std::string mapping;
    std::string input;  // canonical directory
    std::string ifps;
    std::string forecasts;
    std::string series;
    std::string date;
    std::vector<std::string> compare;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    bool strict = false;
};

class Run {
public:
    Run(std::string command, const Options& opt) : opt_(opt), out_(opt.out_dir) {
        manifest_.command = std::move(command);
        json raw = json::object();
        if (!opt.config.empty()) {
            manifest_.inputs.emplace_back(opt.config, io::file_digest(opt.config));
            try {
                raw = json::parse(io::read_file(opt.config));
            } catch (const json::parse_error& e) {
                throw ValidationError("config " + opt.config + ": " + e.what());
            }
        }
        if (opt.seed) raw["seed"] = *opt.seed;
        if (opt.threads) raw["threads"] = *opt.threads;
        try {
            cfg = io::config_from_json(raw);
        } catch (const json::exception& e) {
            throw ValidationError(std::string("config: ") + e.what());
        }
        if (opt.strict) cfg.max_reject_rate = 0.0;
        json hashed = raw;
        hashed.erase("threads");
        manifest_.config_hash = "fnv1a64:" + io::hex64(fnv1a64(hashed.dump()));
        manifest_.seed = cfg.seed;
        manifest_.threads = cfg.threads;
        fs::create_directories(out_);
    }

    io::RunConfig cfg;
    json summary = json::object();

    void input(const std::string& path) { manifest_.inputs.emplace_back(path, io::file_digest(path)); }

    void write(const std::string& name, std::string_view bytes) {
        io::write_file(out_ / name, bytes);
        manifest_.outputs.push_back(name);
    }

    bool has_log_input() const { return !opt_.input.empty() || !opt_.forecasts.empty(); }

    /// Log from --input, --ifps/--forecasts (optionally mapped), or else a
    /// fresh simulation under the config.
    TournamentLog log() {
        if (!opt_.input.empty()) {
            const fs::path dir(opt_.input);
            for (const char* f : {"ifps.csv", "forecasts.csv", "conditions.csv"})
                if (fs::exists(dir / f)) input((dir / f).string());
            return io::import_log(dir);
        }
        if (!opt_.forecasts.empty()) {
            if (opt_.ifps.empty()) throw ValidationError("--forecasts needs --ifps");
            input(opt_.ifps);
            input(opt_.forecasts);
            const auto ifps = io::Table::load(opt_.ifps);
            const auto forecasts = io::Table::load(opt_.forecasts);
            if (opt_.mapping.empty()) return io::read_canonical(ifps, forecasts);
            input(opt_.mapping);
            const auto mapping = io::load_mapping(opt_.mapping);
            const auto known = io::read_ifps(ifps);
            try {
                auto result = io::import_mapped(forecasts, known, mapping, cfg.max_reject_rate);
                write("rejects.csv", io::rejects_csv(result.rejects));
                summary["import"] = {{"rows", result.rows},
                                     {"rejected", result.rejects.size()},
                                     {"forecasts", result.log.forecasts().size()}};
                return std::move(result.log);
            } catch (const ValidationError&) {
                // rejects are still useful when the import aborts
                try {
                    auto partial = io::import_mapped(forecasts, known, mapping, 1.0);
                    write("rejects.csv", io::rejects_csv(partial.rejects));
                } catch (const ValidationError&) {
                }
                throw;
            }
        }
        const auto world = sim::gen_world(cfg.simulation);
        return sim::build_log(world, sim::machine_grid(world));
    }

    void finish() {
        manifest_.outputs.push_back("summary.json");
        manifest_.outputs.push_back("manifest.json");
        io::write_file(out_ / "summary.json", summary.dump(2) + "\n");
        io::write_file(out_ / "manifest.json", manifest_.to_json().dump(2) + "\n");
    }

    const Options& options() const { return opt_; }

private:
    const Options& opt_;
    fs::path out_;
    io::RunManifest manifest_;
};

json stats_json(const SummaryStats& s) {
    return {{"n", s.n}, {"mean", s.mean}, {"sd", s.sd}, {"q25", s.q25}, {"median", s.median}, {"q75", s.q75}};
}

std::string slot_mdb_csv(const TournamentLog& log, std::span<const SlotRun> runs) {
    io::CsvWriter w({"slot", "ifp_id", "mdb"});
    for (const auto& r : runs)
        for (std::size_t i = 0; i < r.mdb.size(); ++i)
            if (r.mdb[i]) w.row({r.name, log.ifps()[i].id, io::fmt(*r.mdb[i])});
    return w.str();
}

std::string budgets_csv(std::span<const BudgetReport> reports) {
    io::CsvWriter w({"policy", "seed", "brier", "budget", "kept", "total"});
    for (const auto& b : reports)
        w.row({b.policy, std::to_string(b.seed), io::fmt(b.brier), io::fmt(b.budget), std::to_string(b.kept),
               std::to_string(b.total)});
    return w.str();
}

json budgets_json(std::span<const BudgetReport> reports) {
    json out = json::array();
    for (const auto& b : reports)
        out.push_back({{"policy", b.policy}, {"brier", b.brier}, {"budget", b.budget}, {"kept", b.kept}, {"total", b.total}});
    return out;
}

void cmd_score(Run& run) {
    const auto log = run.log();
    ReportOptions ro;
    ro.level = run.cfg.standardize;
    if (run.cfg.baseline) ro.baseline = Source::parse(*run.cfg.baseline);
    const auto report = build_score_report(log, ro);
    run.write("scores.csv", io::scores_csv(report.daily));

    io::CsvWriter z({"ifp_id", "source", "day", "z"});
    for (std::size_t i = 0; i < report.daily.size(); ++i) {
        const auto& s = report.daily[i];
        z.row({s.ifp_id, s.source.str(), format_iso_date(s.day), io::fmt(report.standardized[i])});
    }
    run.write("standardized.csv", z.str());

    io::CsvWriter m({"source", "ifp_id", "mdb"});
    for (const auto& [key, v] : report.mdb) m.row({key.first.str(), key.second, io::fmt(v)});
    run.write("mdb.csv", m.str());

    json sources = json::object();
    for (const auto& [s, v] : report.mmdb) {
        json entry = {{"mmdb", v}};
        if (report.summary.contains(s)) entry["standardized"] = stats_json(report.summary.at(s));
        if (report.cohens_d_vs_baseline.contains(s)) entry["cohens_d_vs_baseline"] = report.cohens_d_vs_baseline.at(s);
        sources[s.str()] = entry;
    }
    json conditions = json::object();
    for (const auto& [c, s] : report.condition_summary) conditions[c.empty() ? "(none)" : c] = stats_json(s);
    run.summary["standardize"] = run.cfg.standardize == StandardizeLevel::ifp_day ? "ifp_day" : "ifp";
    run.summary["daily_scores"] = report.daily.size();
    run.summary["sources"] = sources;
    run.summary["conditions"] = conditions;
    if (report.baseline) run.summary["baseline"] = report.baseline->str();
}

void cmd_aggregate(Run& run) {
    const auto log = run.log();
    std::vector<SlotRun> runs(run.cfg.slots.size());
    parallel_for(runs.size(), run.cfg.threads, [&](std::size_t i) { runs[i] = replay_slot(log, run.cfg.slots[i]); });
    std::vector<Forecast> all;
    for (const auto& r : runs) all.insert(all.end(), r.forecasts.begin(), r.forecasts.end());
    const auto empty = log.filtered([](const Forecast&) { return false; });
    run.write("slot_forecasts.csv", io::forecasts_csv(empty, all));
    run.write("slot_mdb.csv", slot_mdb_csv(log, runs));
    json slots = json::object();
    for (const auto& r : runs) slots[r.name] = {{"mean_mdb", r.mean_mdb}, {"forecasts", r.forecasts.size()}};
    run.summary["slots"] = slots;
}

json model_json(const ts::FittedModel& m) {
    json j = {{"family", std::string(ts::to_string(m.family))},
              {"parameters", m.parameters()},
              {"residual_variance", m.residual_variance},
              {"aic", m.aic},
              {"training_n", m.training_n}};
    if (m.family == ts::ModelFamily::arima) j["order"] = {m.order.p, m.order.d, m.order.q};
    return j;
}

void cmd_ts_forecast(Run& run) {
    const auto& opt = run.options();
    if (opt.series.empty() || opt.ifps.empty()) throw ValidationError("ts-forecast needs --series and --ifps");
    run.input(opt.series);
    run.input(opt.ifps);
    const auto series = io::read_series(io::Table::load(opt.series), "series");
    const auto ifps = io::read_ifps(io::Table::load(opt.ifps));
    std::optional<Day> as_of;
    if (!opt.date.empty()) as_of = parse_iso_date(opt.date);

    TournamentLog::Builder b;
    for (const auto& ifp : ifps) b.add_ifp(ifp);
    json models = json::array();
    std::size_t skipped = 0;
    const std::string model_id(ts::to_string(run.cfg.ts_model));
    for (const auto& ifp : ifps) {
        if (!ifp.series_ref || ifp.thresholds.empty()) continue;
        const Day day = as_of.value_or(ifp.open_date);
        const auto it = series.find(*ifp.series_ref);
        if (!ifp.is_active(day) || it == series.end()) {
            ++skipped;
            continue;
        }
        std::vector<std::pair<Day, double>> obs;
        for (const auto& o : it->second)
            if (o.first < day) obs.push_back(o);
        if (obs.size() < 12) {
            ++skipped;
            continue;
        }
        std::vector<Day> days;
        for (const auto& o : obs) days.push_back(o.first);
        const auto freq = ts::infer_frequency(days);
        auto s = ts::resample(*ifp.series_ref, obs, freq);
        if (s.values.size() > run.cfg.ts_history)
            s.values.erase(s.values.begin(), s.values.end() - static_cast<std::ptrdiff_t>(run.cfg.ts_history));
        int h = 0;
        for (Day d = s.days.back(); d < ifp.close_date; d = ts::advance(d, freq)) ++h;
        h = std::max(h, 1);
        Probs probs;
        json entry = {{"ifp_id", ifp.id}, {"date", format_iso_date(day)}, {"horizon", h}, {"model", model_id}};
        if (run.cfg.ts_model == ts::MachineModel::phe2) {
            const auto m = ts::fit_phe2(s.values);
            probs = ts::phe2_probs(m, ifp, h);
            json parts = json::object();
            if (m.arima) parts["auto_arima"] = model_json(*m.arima);
            if (m.ets) parts["ets"] = model_json(*m.ets);
            if (!m.arima && !m.ets) parts["random_walk"] = model_json(m.fallback);
            entry["components"] = parts;
        } else {
            probs = ts::machine_probs(run.cfg.ts_model, s.values, ifp, h);
        }
        entry["probs"] = probs;
        models.push_back(entry);
        b.add_forecast({ifp.id, Source::machine(model_id), std::move(probs), {day, 0}});
    }
    const auto log = std::move(b).build();
    run.write("machine_forecasts.csv", io::forecasts_csv(log));
    run.write("models.json", models.dump(2) + "\n");
    run.summary["forecasts"] = log.forecasts().size();
    run.summary["skipped"] = skipped;
    run.summary["model"] = model_id;
}

void cmd_simulate(Run& run) {
    const auto result = sim::run_tournament(run.cfg.simulation, run.cfg.slots, run.cfg.policies);
    run.write("ifps.csv", io::ifps_csv(result.log.ifps()));
    std::vector<Forecast> slot_rows;
    for (const auto& r : result.slots) slot_rows.insert(slot_rows.end(), r.forecasts.begin(), r.forecasts.end());
    run.write("forecasts.csv", io::forecasts_csv(sim::with_slot_forecasts(result.log, result.slots)));
    run.write("conditions.csv", io::conditions_csv(result.log));
    run.write("series.csv", io::series_csv(result.world));
    run.write("slot_mdb.csv", slot_mdb_csv(result.log, result.slots));
    run.write("budgets.csv", budgets_csv(result.budgets));
    json slots = json::object();
    for (const auto& r : result.slots) slots[r.name] = {{"mean_mdb", r.mean_mdb}};
    double duration = 0.0;
    for (const auto& ifp : result.log.ifps()) duration += static_cast<double>(ifp.active_days());
    run.summary["ifps"] = result.log.ifps().size();
    run.summary["mean_duration_days"] = duration / static_cast<double>(result.log.ifps().size());
    run.summary["forecasts"] = result.log.forecasts().size();
    run.summary["human_users"] = result.log.human_users().size();
    run.summary["slots"] = slots;
    run.summary["policies"] = budgets_json(result.budgets);
}

void cmd_sparsity(Run& run) {
    const auto log = run.log();
    const auto& slot = run.cfg.slot(run.cfg.sparsity.slot);
    io::CsvWriter points({"with_machine", "level", "rep", "brier"});
    io::CsvWriter fits({"with_machine", "slope", "intercept", "slope_se", "slope_ci_low", "slope_ci_high", "n"});
    json rows = json::array();
    for (bool with_machine : {true, false}) {
        const auto r = sim::sparsity_experiment(log, slot, run.cfg.sparsity.levels, run.cfg.sparsity.reps, with_machine,
                                                run.cfg.seed, run.cfg.threads);
        const std::string flag = with_machine ? "true" : "false";
        for (const auto& p : r.points) points.row({flag, io::fmt(p.level), std::to_string(p.rep), io::fmt(p.brier)});
        fits.row({flag, io::fmt(r.fit.slope), io::fmt(r.fit.intercept), io::fmt(r.fit.slope_se),
                  io::fmt(r.fit.slope_ci_low), io::fmt(r.fit.slope_ci_high), std::to_string(r.fit.n)});
        rows.push_back({{"with_machine", with_machine},
                        {"slope", r.fit.slope},
                        {"intercept", r.fit.intercept},
                        {"slope_ci", {r.fit.slope_ci_low, r.fit.slope_ci_high}}});
    }
    run.write("sparsity_points.csv", points.str());
    run.write("sparsity_fit.csv", fits.str());
    run.summary["slot"] = slot.name;
    run.summary["levels"] = run.cfg.sparsity.levels;
    run.summary["reps"] = run.cfg.sparsity.reps;
    run.summary["regressions"] = rows;
}

void cmd_allocate(Run& run) {
    const auto log = run.log();
    const auto& slot = run.cfg.slots.front();
    std::vector<BudgetReport> reports(run.cfg.policies.size());
    parallel_for(reports.size(), run.cfg.threads, [&](std::size_t i) {
        reports[i] = apply_policy(log, run.cfg.policies[i], slot, run.cfg.seed).report;
    });
    run.write("budgets.csv", budgets_csv(reports));
    run.summary["slot"] = slot.name;
    run.summary["policies"] = budgets_json(reports);
}

void cmd_backcast(Run& run) {
    const auto log = run.log();
    std::vector<sim::Pool> pools = run.cfg.pools;
    if (pools.empty()) {
        pools.push_back({"all", {}});
        std::vector<std::string> conds;
        for (const auto& [user, c] : log.conditions())
            if (!c.empty() && std::find(conds.begin(), conds.end(), c) == conds.end()) conds.push_back(c);
        std::sort(conds.begin(), conds.end());
        for (const auto& c : conds) pools.push_back({c, {c}});
    }
    const auto& opt = run.options();
    if (!opt.compare.empty()) {
        if (opt.compare.size() != 2) throw ValidationError("--compare takes two sources");
        const auto c = sim::compare_sources(log, Source::parse(opt.compare[0]), Source::parse(opt.compare[1]));
        run.summary["comparison"] = {{"a", opt.compare[0]},   {"b", opt.compare[1]}, {"mmdb_a", c.mmdb_a},
                                     {"mmdb_b", c.mmdb_b},    {"delta", c.delta},    {"n_ifps", c.n_ifps}};
        if (c.cohens_d) run.summary["comparison"]["cohens_d"] = *c.cohens_d;
    }
    if (run.cfg.slots.size() * pools.size() < 2) {
        if (opt.compare.empty()) throw ValidationError("backcast needs at least two slot/pool cells");
        return;
    }
    const auto rows = sim::backcast_compare(log, run.cfg.slots, pools, run.cfg.threads);
    io::CsvWriter w({"slot", "pool", "mean_mdb", "delta", "cohens_d"});
    json table = json::array();
    for (const auto& r : rows) {
        w.row({r.slot, r.pool, io::fmt(r.mean_mdb), io::fmt(r.delta), r.cohens_d ? io::fmt(*r.cohens_d) : ""});
        table.push_back({{"slot", r.slot}, {"pool", r.pool}, {"mean_mdb", r.mean_mdb}, {"delta", r.delta}});
    }
    run.write("backcast.csv", w.str());
    run.summary["cells"] = table;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hyfo: hybrid human-machine forecasting engine"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(io::kVersion));
    Options opt;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--seed", opt.seed, "override the config seed");
        sub->add_option("--out-dir", opt.out_dir, "output directory");
        sub->add_option("--threads", opt.threads, "worker threads (results do not depend on it)");
        sub->add_flag("--strict", opt.strict, "abort on any rejected input row");
    };
    const auto log_inputs = [&](CLI::App* sub) {
        sub->add_option("--input", opt.input, "directory with canonical ifps.csv / forecasts.csv")->check(CLI::ExistingDirectory);
        sub->add_option("--ifps", opt.ifps, "IFP table")->check(CLI::ExistingFile);
        sub->add_option("--forecasts", opt.forecasts, "forecast table")->check(CLI::ExistingFile);
        sub->add_option("--mapping", opt.mapping, "JSON column mapping for external exports")->check(CLI::ExistingFile);
    };

    struct Command {
        const char* name;
        const char* help;
        void (*fn)(Run&);
        bool takes_log;
    };
    const Command commands[] = {
        {"score", "daily Brier, MDB, standardized scores", cmd_score, true},
        {"aggregate", "replay aggregation slots over a log", cmd_aggregate, true},
        {"ts-forecast", "machine forecasts for series-backed IFPs", cmd_ts_forecast, false},
        {"simulate", "run a synthetic tournament", cmd_simulate, false},
        {"sparsity", "forecaster-deletion experiment", cmd_sparsity, true},
        {"allocate", "forecast-budget policies", cmd_allocate, true},
        {"backcast", "cross-apply slots to forecast pools", cmd_backcast, true},
    };
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        common(sub);
        if (c.takes_log) log_inputs(sub);
        if (std::string_view(c.name) == "ts-forecast") {
            sub->add_option("--series", opt.series, "series CSV (series_id,date,value or date,value)")->check(CLI::ExistingFile);
            sub->add_option("--ifps", opt.ifps, "IFP table")->check(CLI::ExistingFile);
            sub->add_option("--date", opt.date, "forecast date (default: each IFP's open date)");
        }
        if (std::string_view(c.name) == "backcast")
            sub->add_option("--compare", opt.compare, "two sources already in the log, e.g. slot:a slot:b")->expected(2);
        subs.emplace_back(sub, &c);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        for (const auto& [sub, cmd] : subs) {
            if (!sub->parsed()) continue;
            Run run(cmd->name, opt);
            cmd->fn(run);
            run.finish();
        }
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const ts::FitError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
