#include <gtest/gtest.h>

#include "hyfo/core.hpp"

using namespace hyfo;

namespace {

Ifp binary_ifp(const std::string& id, Day open, Day close) {
    Ifp ifp;
    ifp.id = id;
    ifp.title = "Will it happen?";
    ifp.options = {"Yes", "No"};
    ifp.kind = IfpKind::binary;
    ifp.open_date = open;
    ifp.close_date = close;
    ifp.resolved_option = 0;
    return ifp;
}

Ifp ternary_ifp(const std::string& id, Day open, Day close) {
    Ifp ifp = binary_ifp(id, open, close);
    ifp.options = {"low", "mid", "high"};
    ifp.kind = IfpKind::ordinal;
    return ifp;
}

}  // namespace

TEST(Dates, EpochAndRoundTrip) {
    EXPECT_EQ(make_day(1970, 1, 1), 0);
    EXPECT_EQ(make_day(1970, 1, 2), 1);
    EXPECT_EQ(make_day(2019, 4, 1) - make_day(2019, 3, 1), 31);
    EXPECT_EQ(format_iso_date(make_day(2020, 2, 29)), "2020-02-29");
    EXPECT_EQ(parse_iso_date("2021-12-31"), make_day(2021, 12, 31));
    EXPECT_THROW(parse_iso_date("2021-02-30"), ValidationError);
    EXPECT_THROW(parse_iso_date("20211231"), ValidationError);
}

TEST(ValidateForecast, SpecExamples) {
    const std::vector<double> half{0.5, 0.5};
    EXPECT_EQ(validate_forecast(half, 2), half);
    const std::vector<double> short_sum{0.3, 0.3, 0.3};
    EXPECT_THROW(validate_forecast(short_sum, 3), ValidationError);
    const std::vector<double> near{0.2500003, 0.7499997};
    const auto out = validate_forecast(near, 2);
    EXPECT_NEAR(out[0], 0.2500003, 1e-15);
    EXPECT_NEAR(out[1], 0.7499997, 1e-15);
}

TEST(ValidateForecast, Errors) {
    EXPECT_THROW(validate_forecast(std::vector<double>{0.5, 0.5}, 3), ValidationError);
    EXPECT_THROW(validate_forecast(std::vector<double>{1.2, -0.2}, 2), ValidationError);
    EXPECT_THROW(validate_forecast(std::vector<double>{1.0}, 1), ValidationError);
    EXPECT_THROW(validate_forecast(std::vector<double>(6, 1.0 / 6), 6), ValidationError);
    EXPECT_THROW(validate_forecast(std::vector<double>{0.5, 0.5000011}, 2), ValidationError);
}

TEST(ValidateForecast, RenormalizesSmallDeviation) {
    const auto out = validate_forecast(std::vector<double>{0.5000004, 0.5}, 2);
    EXPECT_NEAR(out[0] + out[1], 1.0, 1e-15);
    EXPECT_GT(out[0], out[1]);
}

TEST(ValidateForecast, IdempotentOnNormalizedInput) {
    const std::vector<double> p{0.1, 0.2, 0.7};
    const auto once = validate_forecast(p, 3);
    EXPECT_EQ(validate_forecast(once, 3), once);
}

TEST(UniformForecast, Values) {
    EXPECT_EQ(uniform_forecast(2), (Probs{0.5, 0.5}));
    EXPECT_EQ(uniform_forecast(4), (Probs{0.25, 0.25, 0.25, 0.25}));
    for (double p : uniform_forecast(5)) EXPECT_DOUBLE_EQ(p, 0.2);
    EXPECT_THROW(uniform_forecast(1), ValidationError);
    EXPECT_THROW(uniform_forecast(6), ValidationError);
}

TEST(Ifp, Invariants) {
    Ifp ok = ternary_ifp("q", 10, 20);
    EXPECT_NO_THROW(validate_ifp(ok));
    EXPECT_EQ(ok.active_days(), 11u);

    Ifp bad = ok;
    bad.options = {"only"};
    EXPECT_THROW(validate_ifp(bad), ValidationError);
    bad = ok;
    bad.close_date = 9;
    EXPECT_THROW(validate_ifp(bad), ValidationError);
    bad = ok;
    bad.kind = IfpKind::binary;
    EXPECT_THROW(validate_ifp(bad), ValidationError);
    bad = ok;
    bad.resolved_option = 3;
    EXPECT_THROW(validate_ifp(bad), ValidationError);
    bad = ok;
    bad.thresholds = {2.0, 1.0};
    EXPECT_THROW(validate_ifp(bad), ValidationError);
    bad = ok;
    bad.thresholds = {1.0};
    EXPECT_THROW(validate_ifp(bad), ValidationError);
    bad = ok;
    bad.kind = IfpKind::nominal;
    bad.thresholds = {1.0, 2.0};
    EXPECT_THROW(validate_ifp(bad), ValidationError);
    ok.thresholds = {1.0, 2.0};
    EXPECT_NO_THROW(validate_ifp(ok));
}

TEST(Source, ParseAndPrint) {
    EXPECT_EQ(Source::parse("human:u1"), Source::human("u1"));
    EXPECT_EQ(Source::parse("machine:phe2"), Source::machine("phe2"));
    EXPECT_EQ(Source::parse("slot:best"), Source::slot("best"));
    EXPECT_EQ(Source::parse("bare"), Source::human("bare"));
    EXPECT_EQ(Source::slot("x").str(), "slot:x");
    EXPECT_THROW(Source::parse("robot:x"), ValidationError);
    EXPECT_THROW(Source::parse("human:"), ValidationError);
}

TEST(Builder, RejectsBadForecasts) {
    TournamentLog::Builder b;
    b.add_ifp(binary_ifp("a", 10, 20));
    EXPECT_THROW(b.add_ifp(binary_ifp("a", 10, 20)), ValidationError);
    EXPECT_THROW(b.add_forecast({"zz", Source::human("u"), {0.5, 0.5}, {12, 0}}), ValidationError);
    EXPECT_THROW(b.add_forecast({"a", Source::human("u"), {0.5, 0.5}, {9, 0}}), ValidationError);
    EXPECT_THROW(b.add_forecast({"a", Source::human("u"), {0.5, 0.5}, {21, 0}}), ValidationError);
    EXPECT_THROW(b.add_forecast({"a", Source::human("u"), {0.4, 0.5}, {12, 0}}), ValidationError);
    EXPECT_NO_THROW(b.add_forecast({"a", Source::human("u"), {0.5, 0.5}, {20, 0}}));
}

TEST(Builder, OrdersByTimestamp) {
    TournamentLog::Builder b;
    b.add_ifp(binary_ifp("a", 0, 30));
    b.add_forecast({"a", Source::human("u"), {0.1, 0.9}, {5, 2}});
    b.add_forecast({"a", Source::human("v"), {0.2, 0.8}, {3, 0}});
    b.add_forecast({"a", Source::human("w"), {0.3, 0.7}, {5, 1}});
    const auto log = std::move(b).build();
    ASSERT_EQ(log.forecasts().size(), 3u);
    EXPECT_EQ(log.forecasts()[0].source.id, "v");
    EXPECT_EQ(log.forecasts()[1].source.id, "w");
    EXPECT_EQ(log.forecasts()[2].source.id, "u");
    EXPECT_EQ(log.first_day(), 0);
    EXPECT_EQ(log.last_day(), 30);
    EXPECT_EQ(log.human_users(), (std::vector<std::string>{"u", "v", "w"}));
}

TEST(LatestPerSource, SpecExamples) {
    TournamentLog::Builder b;
    b.add_ifp(binary_ifp("a", 1, 10));
    b.add_ifp(binary_ifp("empty", 1, 10));
    b.add_forecast({"a", Source::human("once"), {0.7, 0.3}, {3, 0}});
    b.add_forecast({"a", Source::human("twice"), {0.6, 0.4}, {2, 0}});
    b.add_forecast({"a", Source::human("twice"), {0.8, 0.2}, {4, 0}});
    const auto log = std::move(b).build();

    EXPECT_TRUE(latest_per_source(log, "empty", 5).empty());

    const auto at7 = latest_per_source(log, "a", 7);
    ASSERT_TRUE(at7.contains(Source::human("once")));
    EXPECT_EQ(at7.at(Source::human("once")).probs, (Probs{0.7, 0.3}));

    const auto at5 = latest_per_source(log, "a", 5);
    EXPECT_EQ(at5.at(Source::human("twice")).timestamp.day, 4);
    EXPECT_EQ(at5.at(Source::human("twice")).probs, (Probs{0.8, 0.2}));

    const auto at3 = latest_per_source(log, "a", 3);
    EXPECT_EQ(at3.at(Source::human("twice")).timestamp.day, 2);
    EXPECT_THROW(latest_per_source(log, "nope", 3), ValidationError);
}

TEST(LatestPerSource, IntraDayOrdinalLastWriteWins) {
    TournamentLog::Builder b;
    b.add_ifp(binary_ifp("a", 1, 10));
    b.add_forecast({"a", Source::human("u"), {0.9, 0.1}, {4, 7}});
    b.add_forecast({"a", Source::human("u"), {0.2, 0.8}, {4, 3}});
    const auto log = std::move(b).build();
    EXPECT_EQ(latest_per_source(log, "a", 4).at(Source::human("u")).probs, (Probs{0.9, 0.1}));
}

TEST(LatestPerSource, NeverReturnsFutureForecasts) {
    TournamentLog::Builder b;
    b.add_ifp(ternary_ifp("a", 0, 40));
    for (int d = 0; d <= 40; d += 3)
        b.add_forecast({"a", Source::human("u" + std::to_string(d % 4)), {0.2, 0.3, 0.5}, {d, d}});
    const auto log = std::move(b).build();
    for (Day q = 0; q <= 40; ++q)
        for (const auto& [s, f] : latest_per_source(log, "a", q)) EXPECT_LE(f.timestamp.day, q);
}

TEST(ActiveForecastOnDay, SpecExamples) {
    TournamentLog::Builder b;
    b.add_ifp(ternary_ifp("t", 1, 20));
    b.add_ifp(binary_ifp("b", 1, 20));
    b.add_forecast({"b", Source::human("u"), {0.9, 0.1}, {1, 0}});
    const auto log = std::move(b).build();

    const auto fill = active_forecast_on_day(log, Source::human("ghost"), "t", 5, Fill::uniform);
    ASSERT_TRUE(fill);
    for (double p : *fill) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);

    EXPECT_EQ(*active_forecast_on_day(log, Source::human("u"), "b", 10, Fill::uniform), (Probs{0.9, 0.1}));
    EXPECT_FALSE(active_forecast_on_day(log, Source::human("ghost"), "b", 10, Fill::none));
}

TEST(ActiveForecastOnDay, CarryForwardIdempotentAndComplete) {
    TournamentLog::Builder b;
    b.add_ifp(ternary_ifp("t", 5, 25));
    b.add_forecast({"t", Source::human("u"), {0.1, 0.2, 0.7}, {8, 0}});
    b.add_forecast({"t", Source::human("u"), {0.3, 0.3, 0.4}, {15, 0}});
    const auto log = std::move(b).build();
    const Ifp& ifp = log.ifp("t");
    std::size_t produced = 0;
    std::optional<Probs> prev;
    for (Day d = ifp.open_date; d <= ifp.close_date; ++d) {
        const auto p = active_forecast_on_day(log, Source::human("u"), "t", d, Fill::uniform);
        ASSERT_TRUE(p);
        ++produced;
        if (prev && d != 8 && d != 15) {
            EXPECT_EQ(*p, *prev);
        }
        prev = p;
    }
    EXPECT_EQ(produced, static_cast<std::size_t>(ifp.close_date - ifp.open_date + 1));
}

TEST(TournamentLog, FilteredKeepsCalendarAndConditions) {
    TournamentLog::Builder b;
    b.add_ifp(binary_ifp("a", 1, 10));
    b.set_condition("u", "control");
    b.add_forecast({"a", Source::human("u"), {0.9, 0.1}, {2, 0}});
    b.add_forecast({"a", Source::human("v"), {0.4, 0.6}, {3, 0}});
    const auto log = std::move(b).build();
    const auto only_v = log.filtered([](const Forecast& f) { return f.source.id == "v"; });
    EXPECT_EQ(only_v.forecasts().size(), 1u);
    EXPECT_EQ(only_v.condition_of("u"), "control");
    EXPECT_EQ(only_v.first_day(), log.first_day());
    EXPECT_EQ(only_v.forecasts_for(0).size(), 1u);
    EXPECT_EQ(log.filtered([](const Forecast&) { return true; }), log);
}
