#include <gtest/gtest.h>

#include "hyfo/simulator.hpp"

using namespace hyfo;
using namespace hyfo::sim;

namespace {

SimConfig quick(std::uint64_t seed) {
    SimConfig c;
    c.seed = seed;
    c.n_ifps = 16;
    c.n_forecasters = 40;
    c.machine_model = ts::MachineModel::random_walk;
    return c;
}

std::map<std::pair<std::string, Day>, Probs> slot_by_day(const SlotRun& run) {
    std::map<std::pair<std::string, Day>, Probs> out;
    for (const auto& f : run.forecasts) out[{f.ifp_id, f.timestamp.day}] = f.probs;
    return out;
}

Ifp resolved_binary(const std::string& id, Day open, Day close) {
    Ifp ifp;
    ifp.id = id;
    ifp.options = {"y", "n"};
    ifp.open_date = open;
    ifp.close_date = close;
    ifp.resolved_option = 0;
    return ifp;
}

}  // namespace

TEST(World, DeterministicUnderSeed) {
    const auto a = gen_world(quick(3));
    const auto b = gen_world(quick(3));
    ASSERT_EQ(a.ifps.size(), b.ifps.size());
    for (std::size_t i = 0; i < a.ifps.size(); ++i) {
        EXPECT_EQ(a.ifps[i].ifp, b.ifps[i].ifp);
        EXPECT_EQ(a.ifps[i].path, b.ifps[i].path);
    }
    EXPECT_EQ(build_log(a, machine_grid(a)), build_log(b, machine_grid(b)));
    const auto c = gen_world(quick(4));
    EXPECT_NE(a.ifps[0].path, c.ifps[0].path);
}

TEST(World, ThreadCountDoesNotChangeOutput) {
    auto cfg = quick(8);
    cfg.machine_model = ts::MachineModel::phe2;
    cfg.n_ifps = 6;
    const auto w1 = gen_world(cfg);
    cfg.threads = 4;
    const auto w4 = gen_world(cfg);
    const auto g1 = machine_grid(w1);
    const auto g4 = machine_grid(w4);
    EXPECT_EQ(g1.by_ifp, g4.by_ifp);
    EXPECT_EQ(build_log(w1, g1), build_log(w4, g4));
}

TEST(World, ResolutionsMatchRealizedSeries) {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto w = gen_world(quick(seed));
        for (const auto& s : w.ifps) {
            EXPECT_EQ(s.realized, s.value_at(s.ifp.close_date));
            EXPECT_EQ(*s.ifp.resolved_option, s.option_of_bin[ts::bin_of(s.realized, s.bin_thresholds)]);
            EXPECT_NO_THROW(validate_ifp(s.ifp));
            EXPECT_GE(s.ifp.active_days(), 14u);
        }
    }
}

TEST(World, ZeroNoiseDriftResolvesDeterministically) {
    auto cfg = quick(5);
    cfg.series.noise_sd = 0.0;
    cfg.series.drift = 0.5;
    cfg.shared_bias_sd = 0.0;
    const auto w = gen_world(cfg);
    for (const auto& s : w.ifps) {
        const double t = static_cast<double>(s.ifp.close_date - s.history_start);
        const double expect = cfg.series.level + cfg.series.drift * t;
        EXPECT_DOUBLE_EQ(s.realized, expect);
        // a rising series ends above every historical quantile
        EXPECT_EQ(ts::bin_of(expect, s.bin_thresholds), s.bin_thresholds.size());
        EXPECT_EQ(*s.ifp.resolved_option, s.option_of_bin.back());
        const auto post = true_posterior(w, s, s.ifp.open_date + 1);
        EXPECT_GT(post[*s.ifp.resolved_option], 0.9);
    }
}

TEST(World, DurationMatchesTarget) {
    // pooled over seeds: one seed's mean has sd near 2.8 days
    double sum = 0.0;
    std::size_t binary = 0, n = 0;
    for (std::uint64_t seed = 11; seed < 21; ++seed) {
        SimConfig c;
        c.seed = seed;
        c.n_ifps = 398;
        c.n_forecasters = 1;
        const auto w = gen_world(c);
        for (const auto& s : w.ifps) {
            sum += static_cast<double>(s.ifp.active_days());
            binary += s.ifp.kind == IfpKind::binary;
            ++n;
            EXPECT_GE(s.ifp.active_days(), 14u);
            EXPECT_LE(s.ifp.active_days(), 245u);
        }
    }
    EXPECT_NEAR(sum / static_cast<double>(n), 87.07, 3.0);
    EXPECT_NEAR(static_cast<double>(binary) / static_cast<double>(n), 0.51, 0.03);
}

TEST(HumanForecast, AnchorEndpoints) {
    Forecaster f;
    f.skill = 0.8;
    f.noise = 0.4;
    const Probs truth{0.7, 0.2, 0.1};
    const Probs machine{0.1, 0.3, 0.6};
    f.anchor = 1.0;
    Rng r1 = substream(1, "t");
    EXPECT_EQ(gen_human_forecast(f, truth, machine, r1), machine);
    f.anchor = 0.0;
    Rng r2 = substream(1, "t"), r3 = substream(1, "t");
    EXPECT_EQ(gen_human_forecast(f, truth, machine, r2), gen_human_forecast(f, truth, std::nullopt, r3));
    EXPECT_EQ(r2(), r3());
}

TEST(HumanForecast, SkillZeroPopulationIsNoBetterThanUniform) {
    double gap_sum = 0.0;
    const int seeds = 4;
    for (int s = 0; s < seeds; ++s) {
        auto cfg = quick(100 + s);
        Cohort noise;
        noise.name = "noise";
        noise.skill_mean = 0.0;
        noise.skill_sd = 0.0;
        cfg.cohorts = {noise};
        cfg.emit_machine = false;
        const auto w = gen_world(cfg);
        const auto log = build_log(w, machine_grid(w));
        const auto report = build_score_report(log);
        double humans = 0.0;
        std::size_t n = 0;
        for (const auto& [src, v] : report.mmdb)
            if (src.is_human()) {
                humans += v;
                ++n;
            }
        double uniform = 0.0;
        for (const auto& ifp : log.ifps()) uniform += uniform_brier(ifp);
        uniform /= static_cast<double>(log.ifps().size());
        gap_sum += humans / static_cast<double>(n) - uniform;
    }
    EXPECT_NEAR(gap_sum / seeds, 0.0, 0.05);
}

TEST(Tournament, NoForecastersMeansMachineOnly) {
    auto cfg = quick(21);
    cfg.n_forecasters = 0;
    const std::vector<AggregationConfig> slots{AggregationConfig{}};
    const auto r = run_tournament(cfg, slots);
    const auto slot = slot_by_day(r.slots[0]);
    std::size_t machine_rows = 0;
    for (const auto& f : r.log.forecasts()) {
        ASSERT_FALSE(f.source.is_human());
        EXPECT_EQ(slot.at({f.ifp_id, f.timestamp.day}), f.probs);
        ++machine_rows;
    }
    EXPECT_EQ(machine_rows, slot.size());
}

TEST(Tournament, MeanOnlySlotMatchesIndependentOracle) {
    const auto cfg = quick(31);
    const auto slot_cfg = AggregationConfig::mean_only();
    const std::vector<AggregationConfig> slots{slot_cfg};
    const auto r = run_tournament(cfg, slots);
    std::size_t compared = 0;
    for (const auto& f : r.slots[0].forecasts) {
        std::vector<std::pair<Timestamp, std::pair<std::string, Probs>>> standing;
        for (const auto& [src, g] : latest_per_source(r.log, f.ifp_id, f.timestamp.day))
            if (src.is_human()) standing.push_back({g.timestamp, {src.id, g.probs}});
        std::sort(standing.begin(), standing.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second.first < b.second.first;
        });
        const std::size_t n = standing.size();
        const std::size_t keep = std::max<std::size_t>(static_cast<std::size_t>(std::ceil(0.4 * n - 1e-9)), std::min<std::size_t>(5, n));
        Probs mean(f.probs.size(), 0.0);
        for (std::size_t i = 0; i < keep; ++i)
            for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += standing[i].second.second[k];
        for (double& v : mean) v /= static_cast<double>(keep);
        ASSERT_GT(keep, 0u);
        EXPECT_EQ(f.probs, mean);
        ++compared;
    }
    EXPECT_GT(compared, 100u);
}

TEST(Sparsity, LevelZeroIsNoOpAndHighLevelsApproachMachine) {
    const auto cfg = quick(41);
    const std::vector<AggregationConfig> slots{AggregationConfig{}};
    const auto r = run_tournament(cfg, slots);
    const std::vector<double> levels{0.0, 0.5, 0.99};
    const auto with = sparsity_experiment(r.log, slots[0], levels, 3, true, 41);
    EXPECT_EQ(with.points[0].brier, r.slots[0].mean_mdb);
    const std::unordered_set<std::string> none;
    EXPECT_EQ(replay_slot(r.log, slots[0], &none).forecasts, r.slots[0].forecasts);

    AggregationConfig machine_only = slots[0];
    const auto users = r.log.human_users();
    const std::unordered_set<std::string> everyone(users.begin(), users.end());
    const double machine_brier = replay_slot(r.log, machine_only, &everyone).mean_mdb;
    double high = 0.0;
    for (const auto& p : with.points)
        if (p.level == 0.99) high += p.brier / 3.0;
    EXPECT_NEAR(high, machine_brier, 0.01);

    EXPECT_THROW(sparsity_experiment(r.log, slots[0], std::vector<double>{1.0}, 2, true, 1), ValidationError);
    const auto d1 = sparsity_deletion(users, 0.5, 7, 1, 0);
    EXPECT_EQ(d1, sparsity_deletion(users, 0.5, 7, 1, 0));
    EXPECT_EQ(d1.size(), static_cast<std::size_t>(std::llround(0.5 * users.size())));
}

TEST(Backcast, IdenticalCellsHaveZeroDelta) {
    const auto cfg = quick(51);
    const auto r = run_tournament(cfg, std::vector<AggregationConfig>{});
    const std::vector<AggregationConfig> slots{AggregationConfig{}, AggregationConfig{}};
    const std::vector<Pool> pools{{"all", {}}};
    const auto rows = backcast_compare(r.log, slots, pools);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].delta, 0.0);

    const std::vector<AggregationConfig> one{AggregationConfig{}};
    const std::vector<Pool> two{{"control", {"control"}}, {"both", {"control", "models"}}};
    const auto a = backcast_compare(r.log, one, two);
    const auto b = backcast_compare(r.log, one, two, 3);
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a[1].mean_mdb, b[1].mean_mdb);
    EXPECT_EQ(a[0].delta, 0.0);
    EXPECT_THROW(backcast_compare(r.log, one, std::vector<Pool>{{"x", {}}}), ValidationError);
}

TEST(CompareSources, ReportsSuppliedSlotGap) {
    // two submitted slots on binary IFPs resolving to option 0; Brier = 2(1-p)^2
    TournamentLog::Builder b;
    const auto p_for = [](double brier) { return 1.0 - std::sqrt(brier / 2.0); };
    for (int i = 0; i < 6; ++i) {
        const std::string id = "q" + std::to_string(i);
        b.add_ifp(resolved_binary(id, 0, 9));
        const double pa = p_for(0.2), pb = p_for(0.2333);
        b.add_forecast({id, Source::slot("best_sage"), {pa, 1 - pa}, {0, 0}});
        b.add_forecast({id, Source::slot("best_control"), {pb, 1 - pb}, {0, 0}});
    }
    const auto log = std::move(b).build();
    const auto cmp = compare_sources(log, Source::slot("best_control"), Source::slot("best_sage"));
    EXPECT_EQ(cmp.n_ifps, 6u);
    EXPECT_NEAR(cmp.delta, 0.0333, 1e-9);
    EXPECT_THROW(compare_sources(log, Source::slot("x"), Source::slot("best_sage")), ValidationError);
}

TEST(MachineBenchmark, EnsembleCloseToBestComponent) {
    SimConfig cfg;
    cfg.seed = 2024;
    cfg.n_ifps = 30;
    cfg.n_forecasters = 0;
    cfg.threads = 4;
    const auto world = gen_world(cfg);
    std::vector<MachineGrid> grids;
    for (auto m : {ts::MachineModel::phe2, ts::MachineModel::auto_arima, ts::MachineModel::ets}) {
        World w = world;
        w.config.machine_model = m;
        grids.push_back(machine_grid(w));
    }
    const auto mdb = [&](const MachineGrid& g, std::size_t i) {
        const Ifp& ifp = world.ifps[i].ifp;
        double s = 0.0;
        for (const auto& p : g.by_ifp[i]) s += brier(ifp, p, *ifp.resolved_option);
        return s / static_cast<double>(g.by_ifp[i].size());
    };
    std::size_t n = 0, ok = 0;
    for (std::size_t i = 0; i < world.ifps.size(); ++i) {
        if (!world.ifps[i].ifp.is_timeseries()) continue;
        ++n;
        if (mdb(grids[0], i) <= std::min(mdb(grids[1], i), mdb(grids[2], i)) + 0.02) ++ok;
    }
    ASSERT_GT(n, 10u);
    EXPECT_GE(static_cast<double>(ok), 0.6 * static_cast<double>(n));
}
