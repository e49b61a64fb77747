#include "fixtures.hpp"

#include "leafbench/rng.hpp"
#include "leafbench/tpe.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

using namespace leafbench;
using namespace leafbench::tpe;
using leafbench::testing::TempDir;

namespace {

TrialRecord complete_record(int id, double objective, Params params = {})
{
    TrialRecord r;
    r.trial_id = id;
    r.objective = objective;
    r.params = std::move(params);
    r.state = TrialState::complete;
    return r;
}

TrialRecord with_curve(int id, std::vector<double> curve, TrialState state = TrialState::complete)
{
    TrialRecord r;
    r.trial_id = id;
    r.intermediate = std::move(curve);
    r.state = state;
    if (state == TrialState::complete) {
        r.objective = r.intermediate.back();
    }
    return r;
}

double median_of(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

double best_of(const Objective& f, const SearchSpace& space, std::uint64_t seed, int n_trials, bool random)
{
    StudyOptions options;
    options.n_trials = n_trials;
    options.seed = seed;
    if (random) {
        options.tpe.n_startup = n_trials + 1;
    }
    return *run_study(f, space, options).best.objective;
}

} // namespace

TEST_CASE("default search space")
{
    const auto space = SearchSpace::default_space();
    REQUIRE(space.params().size() == 3);
    CHECK(space.at("epochs").kind == ParamKind::int_uniform);
    CHECK(space.at("epochs").low == 3);
    CHECK(space.at("epochs").high == 15);
    CHECK(space.at("batch_size").choices == std::vector<double>{8, 16, 32});
    CHECK(space.at("learning_rate").kind == ParamKind::log_uniform);
    CHECK(space.contains({{"epochs", 10}, {"batch_size", 16}, {"learning_rate", 1e-3}}));
    CHECK_FALSE(space.contains({{"epochs", 10.5}, {"batch_size", 16}, {"learning_rate", 1e-3}}));
    CHECK_FALSE(space.contains({{"epochs", 10}, {"batch_size", 12}, {"learning_rate", 1e-3}}));
    CHECK_THROWS_AS(space.at("momentum"), TpeError);
}

TEST_CASE("search space validation")
{
    CHECK_THROWS_AS(SearchSpace({ParamSpec::uniform("x", 1, 1)}), TpeError);
    CHECK_THROWS_AS(SearchSpace({ParamSpec::log_uniform("x", 0, 1)}), TpeError);
    CHECK_THROWS_AS(SearchSpace({ParamSpec::categorical("x", {})}), TpeError);
    CHECK_THROWS_AS(SearchSpace({ParamSpec::uniform("x", 0, 1), ParamSpec::uniform("x", 0, 2)}), TpeError);
}

TEST_CASE("prior sampling stays in the domain and respects the log scale")
{
    const auto space = SearchSpace::default_space();
    std::vector<double> lrs;
    std::set<double> epochs;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        const auto p = sample_prior(space, seed);
        REQUIRE(space.contains(p));
        lrs.push_back(p.at("learning_rate"));
        epochs.insert(p.at("epochs"));
    }
    const double geometric_mid = std::sqrt(1e-5 * 1e-2);
    const double med = median_of(lrs);
    CHECK(med > geometric_mid / 3);
    CHECK(med < geometric_mid * 3);
    CHECK(epochs.size() == 13);

    const auto single = SearchSpace({ParamSpec::categorical("b", {16})});
    CHECK(sample_prior(single, 5).at("b") == 16);
}

TEST_CASE("good count and split")
{
    CHECK(good_count(0.25, 20) == 5);
    CHECK(good_count(0.25, 1) == 1);
    CHECK(good_count(0.25, 4) == 1);
    CHECK(good_count(0.25, 5) == 2);
    CHECK(good_count(1.0, 7) == 7);

    TrialHistory h(0.25);
    for (int i = 0; i < 20; ++i) {
        h.add(complete_record(i, static_cast<double>(i % 7)));
    }
    const auto gb = split_good_bad(h);
    CHECK(gb.good.size() == 5);
    CHECK(gb.bad.size() == 15);
    std::vector<int> good_ids;
    for (const auto& r : gb.good) {
        good_ids.push_back(r.trial_id);
    }
    std::sort(good_ids.begin(), good_ids.end());
    // Values 6 at ids 6, 13; values 5 at ids 5, 12, 19 -> ties keep all three.
    CHECK(good_ids == std::vector<int>{5, 6, 12, 13, 19});

    CHECK_THROWS_AS(split_good_bad(TrialHistory(0.25)), TpeError);
}

TEST_CASE("split_good_bad agrees with a sort oracle")
{
    Rng rng(7);
    for (int round = 0; round < 1000; ++round) {
        TrialHistory h(0.25);
        std::vector<std::pair<double, int>> oracle;
        const int n = 1 + static_cast<int>(rng.below(120));
        for (int i = 0; i < n; ++i) {
            const double y = static_cast<double>(rng.below(50)) / 50.0;
            if (rng.below(10) == 0) {
                h.add(with_curve(i, {0.1}, TrialState::pruned));
                continue;
            }
            h.add(complete_record(i, y));
            oracle.emplace_back(-y, i);
        }
        if (oracle.empty()) {
            continue;
        }
        std::sort(oracle.begin(), oracle.end());
        const auto k = static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(oracle.size()) - 1e-9));
        std::set<int> expected;
        for (std::size_t i = 0; i < std::max<std::size_t>(k, 1); ++i) {
            expected.insert(oracle[i].second);
        }
        std::set<int> got;
        for (const auto& r : split_good_bad(h).good) {
            got.insert(r.trial_id);
        }
        CHECK(got == expected);
    }
}

TEST_CASE("history rejects inconsistent records")
{
    TrialHistory h;
    TrialRecord no_objective;
    no_objective.state = TrialState::complete;
    CHECK_THROWS_AS(h.add(no_objective), TpeError);
    TrialRecord empty_pruned;
    empty_pruned.state = TrialState::pruned;
    CHECK_THROWS_AS(h.add(empty_pruned), TpeError);
    h.add(complete_record(0, 0.4));
    h.add(complete_record(1, 0.7));
    CHECK(h.y_best() == 0.7);
}

TEST_CASE("parzen fit")
{
    const auto space = SearchSpace({ParamSpec::uniform("x", 0, 1), ParamSpec::categorical("c", {1, 2})});

    SUBCASE("no observations leaves only the prior")
    {
        const auto d = fit_parzen({}, space);
        const auto& x = std::get<NumericDensity>(d.per_param.at("x"));
        CHECK(x.centers == std::vector<double>{0.5});
        CHECK(x.bandwidths == std::vector<double>{1.0});
        const auto& c = std::get<CategoricalDensity>(d.per_param.at("c"));
        CHECK(c.weights == std::vector<double>{0.5, 0.5});
    }
    SUBCASE("single observation dominates the density")
    {
        const auto d = fit_parzen({complete_record(0, 1, {{"x", 0.5}, {"c", 1}})}, space);
        const auto& x = std::get<NumericDensity>(d.per_param.at("x"));
        double best_x = 0, best_pdf = -1;
        for (int i = 0; i <= 1000; ++i) {
            const double v = i / 1000.0;
            if (x.pdf(v) > best_pdf) {
                best_pdf = x.pdf(v);
                best_x = v;
            }
        }
        CHECK(std::abs(best_x - 0.5) <= x.bandwidths[0]);
        CHECK(x.pdf(0.5) > x.pdf(0.1));
        // Density integrates to one over the domain.
        double mass = 0;
        for (int i = 0; i < 10000; ++i) {
            mass += x.pdf((i + 0.5) / 10000.0) / 10000.0;
        }
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
    }
    SUBCASE("categorical weights are smoothed counts")
    {
        std::vector<TrialRecord> rs;
        for (int i = 0; i < 4; ++i) {
            rs.push_back(complete_record(i, 1, {{"x", 0.1 * i}, {"c", i < 3 ? 1.0 : 2.0}}));
        }
        const auto d = fit_parzen(rs, space);
        const auto& c = std::get<CategoricalDensity>(d.per_param.at("c"));
        CHECK(c.weights[0] == doctest::Approx(4.0 / 6.0));
        CHECK(c.weights[1] == doctest::Approx(2.0 / 6.0));
    }
    SUBCASE("bandwidth is the nearest gap with a shrinking floor")
    {
        std::vector<TrialRecord> rs;
        for (int i = 0; i < 3; ++i) {
            rs.push_back(complete_record(i, 1, {{"x", 0.5}, {"c", 1}}));
        }
        const auto few = fit_parzen(rs, space);
        const auto& x = std::get<NumericDensity>(few.per_param.at("x"));
        CHECK(x.bandwidths[0] == doctest::Approx(0.25));
        CHECK(x.bandwidths.back() == 1.0);

        rs.clear();
        for (int i = 0; i < 200; ++i) {
            rs.push_back(complete_record(i, 1, {{"x", i < 100 ? 0.3 : 0.3 + 0.002 * (i - 99)}, {"c", 1}}));
        }
        const auto many = fit_parzen(rs, space);
        const auto& dense = std::get<NumericDensity>(many.per_param.at("x"));
        for (std::size_t i = 0; i < 200; ++i) {
            CHECK(dense.bandwidths[i] == doctest::Approx(0.01));
        }
    }
}

TEST_CASE("suggest concentrates near a strong good cluster")
{
    const auto space = SearchSpace::default_space();
    TrialHistory h;
    int id = 0;
    for (double lr : {1e-3, 1.2e-3, 0.9e-3}) {
        h.add(complete_record(id++, 0.95, {{"epochs", 10}, {"batch_size", 16}, {"learning_rate", lr}}));
    }
    for (int e : {3, 4, 5, 3, 4, 5, 3, 4, 5}) {
        h.add(complete_record(id++, 0.3, {{"epochs", double(e)}, {"batch_size", 8}, {"learning_rate", 1e-5 * (e + 1)}}));
    }
    int near = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto s = suggest(h, space, TpeSettings{}, seed);
        REQUIRE(space.contains(s.params));
        CHECK_FALSE(s.from_prior);
        if (s.params.at("epochs") >= 8 && s.params.at("epochs") <= 12) {
            ++near;
        }
    }
    CHECK(near >= 950);
}

TEST_CASE("suggest startup, single candidate and no-bad cases")
{
    const auto space = SearchSpace::default_space();
    TrialHistory h;
    for (int i = 0; i < 4; ++i) {
        h.add(complete_record(i, 0.5, sample_prior(space, i)));
    }
    const auto startup = suggest(h, space, TpeSettings{}, 11);
    CHECK(startup.from_prior);
    CHECK(startup.params == sample_prior(space, 11));

    h.add(complete_record(4, 0.9, sample_prior(space, 4)));
    TpeSettings one;
    one.n_candidates = 1;
    const auto a = suggest(h, space, one, 3);
    const auto b = suggest(h, space, one, 3);
    CHECK(a.params == b.params);
    CHECK_FALSE(a.from_prior);

    TpeSettings all_good;
    all_good.gamma = 1.0;
    TrialHistory g(1.0);
    for (int i = 0; i < 6; ++i) {
        g.add(complete_record(i, 0.5, {{"epochs", 4.0 + i % 3 * 4}, {"batch_size", 16}, {"learning_rate", 1e-3}}));
    }
    // Every record is good: suggestions follow the all-observation density.
    const auto density = fit_parzen(g.records(), space);
    std::map<double, double> suggested, direct;
    const int n = 4000;
    Rng rng(77);
    for (int i = 0; i < n; ++i) {
        suggested[suggest(g, space, all_good, static_cast<std::uint64_t>(i)).params.at("epochs")] += 1.0 / n;
        direct[density.sample(space, rng).at("epochs")] += 1.0 / n;
    }
    for (int e = 3; e <= 15; ++e) {
        CAPTURE(e);
        CHECK(std::abs(suggested[e] - direct[e]) < 0.025);
    }
}

TEST_CASE("suggest never leaves the domain")
{
    const auto space = SearchSpace({ParamSpec::uniform("u", -2, 3), ParamSpec::log_uniform("l", 1e-6, 1),
                                    ParamSpec::int_uniform("i", 0, 4), ParamSpec::categorical("c", {0.5, 7})});
    Rng rng(5);
    TrialHistory h;
    for (int i = 0; i < 60; ++i) {
        const auto s = suggest(h, space, TpeSettings{}, static_cast<std::uint64_t>(i));
        REQUIRE(space.contains(s.params));
        h.add(complete_record(i, rng.uniform(), s.params));
    }
}

TEST_CASE("median pruning rule")
{
    TpeSettings settings;
    TrialHistory h;
    h.add(with_curve(0, {0.5, 0.6, 0.7}));
    h.add(with_curve(1, {0.4, 0.5, 0.6}));
    h.add(with_curve(2, {0.6, 0.7, 0.8}));

    struct Case {
        std::vector<double> curve;
        int epoch;
        bool expected;
    };
    const std::vector<Case> cases{
        {{0.1}, 1, false},            // before warmup
        {{0.1, 0.2}, 2, true},        // below median 0.6
        {{0.1, 0.6}, 2, false},       // equal to median
        {{0.1, 0.65}, 2, false},      // above median
        {{0.9, 0.9, 0.69}, 3, true},  // median 0.7
    };
    for (const auto& c : cases) {
        CAPTURE(c.epoch);
        CHECK(should_prune(with_curve(9, c.curve, TrialState::pruned), h, c.epoch, settings) == c.expected);
    }

    TrialHistory few;
    few.add(with_curve(0, {0.5, 0.6}));
    few.add(with_curve(1, {0.5, 0.6}));
    few.add(with_curve(2, {0.5, 0.6}, TrialState::pruned));
    CHECK_FALSE(should_prune(with_curve(9, {0.1, 0.1}, TrialState::pruned), few, 2, settings));

    CHECK_THROWS_AS(should_prune(with_curve(9, {0.1}, TrialState::pruned), h, 2, settings), TpeError);
}

TEST_CASE("trial handle")
{
    TrialHistory h;
    TpeSettings s;
    Trial t(3, {{"x", 1.5}}, h, s);
    CHECK(t.param("x") == 1.5);
    CHECK_THROWS_AS(t.param("y"), TpeError);
    t.report(1, 0.2);
    CHECK_THROWS_AS(t.report(3, 0.2), TpeError);
    CHECK_FALSE(t.should_prune());
}

TEST_CASE("constant objective records every trial")
{
    const auto result = run_study([](Trial&) { return 0.5; }, SearchSpace::default_space(), StudyOptions{});
    CHECK(result.history.records().size() == 30);
    CHECK(result.best.trial_id == 0);
    for (const auto& r : result.history.records()) {
        CHECK(r.state == TrialState::complete);
    }
}

TEST_CASE("studies are deterministic for a seed")
{
    const auto space = SearchSpace::default_space();
    auto f = [](Trial& t) { return -std::pow(std::log10(t.param("learning_rate")) + 3, 2) + t.param("epochs") / 100; };
    StudyOptions o;
    o.n_trials = 15;
    const auto a = run_study(f, space, o);
    const auto b = run_study(f, space, o);
    for (std::size_t i = 0; i < 15; ++i) {
        CHECK(a.history.records()[i].params == b.history.records()[i].params);
    }
    o.seed = 43;
    const auto c = run_study(f, space, o);
    CHECK(c.history.records()[0].params != a.history.records()[0].params);
}

TEST_CASE("study finds the optimum of a 1-D quadratic")
{
    const auto space = SearchSpace({ParamSpec::uniform("x", 0, 1)});
    auto f = [](Trial& t) { return -std::pow(t.param("x") - 0.7, 2); };
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        StudyOptions o;
        o.seed = seed;
        const auto best = run_study(f, space, o).best;
        hits += std::abs(best.params.at("x") - 0.7) <= 0.1;
    }
    CHECK(hits >= 16);
}

TEST_CASE("TPE beats random search on median best value")
{
    const auto quad_space = SearchSpace({ParamSpec::uniform("x", 0, 1)});
    auto quad = [](Trial& t) { return -std::pow(t.param("x") - 0.7, 2); };

    const auto two_space = SearchSpace({ParamSpec::uniform("x", 0, 1), ParamSpec::uniform("y", 0, 1)});
    auto two_basin = [](Trial& t) {
        const double x = t.param("x"), y = t.param("y");
        return std::exp(-40 * (std::pow(x - 0.2, 2) + std::pow(y - 0.7, 2))) +
               0.8 * std::exp(-40 * (std::pow(x - 0.75, 2) + std::pow(y - 0.25, 2)));
    };

    for (const auto& [f, space] : {std::pair<Objective, SearchSpace>{quad, quad_space}, {two_basin, two_space}}) {
        std::vector<double> tpe_best, random_best;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            tpe_best.push_back(best_of(f, space, seed, 30, false));
            random_best.push_back(best_of(f, space, seed, 30, true));
        }
        CHECK(median_of(tpe_best) >= median_of(random_best));
    }
}

TEST_CASE("pruned and failed trials")
{
    auto f = [](Trial& t) -> double {
        const double quality = t.param("x");
        for (int e = 1; e <= 4; ++e) {
            t.report(e, quality * e / 4);
            if (t.should_prune()) {
                throw TrialPruned{};
            }
        }
        if (t.id() == 7) {
            throw std::runtime_error("out of memory");
        }
        return quality;
    };
    StudyOptions o;
    o.n_trials = 25;
    const auto r = run_study(f, SearchSpace({ParamSpec::uniform("x", 0, 1)}), o);
    int pruned = 0;
    for (const auto& rec : r.history.records()) {
        pruned += rec.state == TrialState::pruned;
        if (rec.state == TrialState::pruned) {
            CHECK_FALSE(rec.objective.has_value());
            CHECK(rec.intermediate.size() >= 2);
        }
    }
    CHECK(pruned > 0);
    CHECK(r.history.records()[7].state == TrialState::failed);
    CHECK(r.history.records()[7].message == "out of memory");

    CHECK_THROWS_AS(run_study([](Trial&) -> double { throw std::runtime_error("boom"); },
                              SearchSpace::default_space(), o),
                    StudyError);
}

TEST_CASE("ledger resume reproduces an uninterrupted study")
{
    TempDir dir;
    const auto space = SearchSpace::default_space();
    auto f = [](Trial& t) { return -std::abs(t.param("epochs") - 9) - std::abs(std::log10(t.param("learning_rate")) + 4); };

    StudyOptions full;
    full.n_trials = 12;
    full.ledger = dir / "full.jsonl";
    const auto whole = run_study(f, space, full);

    StudyOptions part = full;
    part.ledger = dir / "part.jsonl";
    part.n_trials = 5;
    run_study(f, space, part);
    // Torn trailing line from a crash mid-write.
    std::ofstream(*part.ledger, std::ios::app) << "{\"trial_id\": 5, \"par";
    part.n_trials = 12;
    const auto resumed = run_study(f, space, part);

    REQUIRE(resumed.history.records().size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(resumed.history.records()[i].params == whole.history.records()[i].params);
    }
    CHECK(resumed.best.trial_id == whole.best.trial_id);
}

TEST_CASE("summary CSV and JSON helpers")
{
    TempDir dir;
    const auto space = SearchSpace::default_space();
    StudyOptions o;
    o.n_trials = 6;
    const auto r = run_study([](Trial& t) { return t.param("epochs") == 10 && t.param("batch_size") == 16 ? 1.0 : 0.0; },
                             space, o);
    write_study_summary(r, space, dir / "s.csv");
    const auto text = testing::read_file(dir / "s.csv");
    CHECK(text.rfind("trial_id,state,objective,epochs,batch_size,learning_rate\n", 0) == 0);

    const Params table_point{{"epochs", 10}, {"batch_size", 16}, {"learning_rate", 1e-4}};
    CHECK(space.contains(table_point));
    CHECK(params_from_json(params_to_json(table_point)) == table_point);

    const auto rec = r.history.records()[2];
    const auto back = TrialRecord::from_json(rec.to_json());
    CHECK(back.params == rec.params);
    CHECK(back.objective == rec.objective);
    CHECK(back.state == rec.state);
}
