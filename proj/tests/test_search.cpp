#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "fondue/datagen.hpp"
#include "fondue/search.hpp"

using namespace fondue;
namespace fs = std::filesystem;

namespace {

// Gap is within the threshold exactly for p <= cutoff.
FunctionOracle step_oracle(int cutoff, double threshold, std::uint64_t seed = 0) {
  return FunctionOracle(
      [=](int p, int) {
        const double gap = p <= cutoff ? 0.0 : 10.0 * threshold;
        return IdePair{5.0 + gap, 5.0};
      },
      seed);
}

int linear_scan(int max_dim, const std::function<double(int)>& diff, double threshold) {
  int best = 0;
  for (int p = 1; p <= max_dim; ++p)
    if (diff(p) <= threshold) best = p;
  return best;
}

fs::path temp_file(const std::string& name) {
  const auto p = fs::temp_directory_path() / name;
  fs::remove(p);
  return p;
}

}  // namespace

TEST_CASE("get_mem queries each p once") {
  MemCache cache;
  auto oracle = step_oracle(5, 1.0);
  const auto a = get_mem(cache, 8, 1, oracle);
  const auto b = get_mem(cache, 8, 1, oracle);
  CHECK(oracle.calls() == 1);
  CHECK_FALSE(a.cached);
  CHECK(b.cached);
  CHECK(a.ide.ide_z == b.ide.ide_z);

  get_mem(cache, 3, 1, oracle);
  CHECK(oracle.calls() == 2);
  CHECK(cache.size() == 2);
  CHECK(cache.find(0, 1, 3)->ide_z == 5.0);
  CHECK(cache.find(0, 1, 8)->ide_z == 15.0);
  // A different budget is a different entry.
  get_mem(cache, 8, 2, oracle);
  CHECK(oracle.calls() == 3);
  CHECK_THROWS_AS(get_mem(cache, 0, 1, oracle), ConfigError);
}

TEST_CASE("get_mem with a preloaded cache never calls the oracle") {
  const auto path = temp_file("fondue_test_preload.jsonl");
  {
    MemCache cache = MemCache::open(path);
    auto oracle = step_oracle(5, 1.0);
    for (int p = 1; p <= 6; ++p) get_mem(cache, p, 2, oracle);
  }
  MemCache reloaded = MemCache::open(path);
  auto fresh = step_oracle(5, 1.0);
  for (int p = 1; p <= 6; ++p) CHECK(get_mem(reloaded, p, 2, fresh).cached);
  CHECK(fresh.calls() == 0);
  fs::remove(path);
}

TEST_CASE("oracle failures carry p") {
  MemCache cache;
  FunctionOracle bad([](int, int) -> IdePair { throw EstimationFailed("boom"); });
  try {
    get_mem(cache, 6, 1, bad);
    FAIL("expected OracleError");
  } catch (const OracleError& e) {
    CHECK(e.p() == 6);
    bool nested = false;
    try {
      std::rethrow_if_nested(e);
    } catch (const EstimationFailed&) {
      nested = true;
    }
    CHECK(nested);
  }
  CHECK(cache.size() == 0);
}

TEST_CASE("fondue on the step oracle with cutoff 7") {
  FondueConfig cfg;
  cfg.ide_data = 4.0;
  cfg.epochs = 1;
  auto oracle = step_oracle(7, cfg.threshold());
  MemCache cache;
  const auto r = run_fondue(cfg, oracle, cache);
  CHECK(r.p == 7);
  CHECK(r.threshold == doctest::Approx(0.8));
  std::vector<int> probed;
  for (const auto& s : r.steps) probed.push_back(s.p);
  CHECK(probed == std::vector<int>{4, 8, 6, 8, 7, 8});
  CHECK(r.oracle_calls == 4);
  CHECK(r.final_u == 8);
  CHECK_FALSE(r.non_monotone);
}

TEST_CASE("fondue below the initial guess") {
  FondueConfig cfg;
  cfg.ide_data = 4.0;
  MemCache cache;
  auto two = step_oracle(2, cfg.threshold());
  CHECK(run_fondue(cfg, two, cache).p == 2);

  MemCache empty;
  auto never = step_oracle(0, cfg.threshold());
  CHECK_THROWS_AS(run_fondue(cfg, never, empty), NoFeasibleDimension);
}

TEST_CASE("fondue hits the cap when nothing exceeds the threshold") {
  FondueConfig cfg;
  cfg.ide_data = 4.0;
  cfg.max_dim = 40;
  auto always = step_oracle(1000, cfg.threshold());
  MemCache cache;
  try {
    run_fondue(cfg, always, cache);
    FAIL("expected SearchCapped");
  } catch (const SearchCapped& e) {
    CHECK(e.max_dim() == 40);
  }
  CHECK(cache.find(0, 1, 40) != nullptr);

  FondueConfig dflt;
  dflt.ide_data = 3.2;
  CHECK(dflt.resolved_max_dim() == 64);
}

TEST_CASE("fondue config validation") {
  FondueConfig cfg;
  cfg.ide_data = 4.0;
  cfg.t_percent = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.t_percent = 20.0;
  cfg.max_dim = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.max_dim.reset();
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.epochs = 1;
  cfg.ide_data = 0.2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("fondue on random monotone instances") {
  Rng rng(2024);
  for (int instance = 0; instance < 200; ++instance) {
    const int c = static_cast<int>(1 + rng.below(128));
    FondueConfig cfg;
    cfg.ide_data = rng.uniform(1.0, 32.0);
    cfg.t_percent = rng.uniform(1.0, 100.0);
    cfg.max_dim = std::max(c + 1, static_cast<int>(std::ceil(cfg.ide_data))) + static_cast<int>(rng.below(200));
    const double thr = cfg.threshold();
    const double slope = rng.uniform(0.1, 3.0);
    const auto diff = [=](int p) {
      return p <= c ? thr * (1.0 - 1e-9) * (static_cast<double>(p) / c) : thr + 1e-9 + slope * (p - c);
    };
    FunctionOracle oracle([&](int p, int) { return IdePair{7.0 + diff(p), 7.0}; });
    MemCache cache;
    const auto r = run_fondue(cfg, oracle, cache);

    CHECK(r.p == linear_scan(*cfg.max_dim, diff, thr));
    CHECK(r.p == c);
    CHECK(oracle.calls() <= 2 * static_cast<int>(std::ceil(std::log2(c + 2.0))) + 2);
    CHECK(oracle.calls() == r.oracle_calls);
    REQUIRE(r.final_u.has_value());
    CHECK(*r.final_u == r.p + 1);
    CHECK_FALSE(r.non_monotone);
    for (const auto& s : r.steps) {
      CHECK(s.l <= s.p);
      if (s.u) CHECK(s.p <= *s.u);
      if (s.l > 0) CHECK(diff(s.l) <= thr);
      if (s.u) CHECK(diff(*s.u) > thr);
      CHECK(s.within == (diff(s.p) <= thr));
    }
  }
}

TEST_CASE("non-monotone oracles still terminate and are flagged") {
  FunctionOracle bumpy([&](int p, int) {
    const double gap = (p == 3 || p >= 10) ? 100.0 : 0.0;
    return IdePair{gap, 0.0};
  });
  MemCache cache;
  FondueConfig low;
  low.ide_data = 3.0;
  const auto first = run_fondue(low, bumpy, cache);
  CHECK(first.p == 2);
  CHECK_FALSE(first.non_monotone);

  FondueConfig high;
  high.ide_data = 8.0;
  const auto second = run_fondue(high, bumpy, cache);
  CHECK(second.p == 9);
  CHECK(second.non_monotone);
}

TEST_CASE("fondue_stable") {
  FondueConfig cfg;
  cfg.ide_data = 10.0;
  auto run = [&](std::map<int, int> cutoff_by_epochs, std::vector<int> schedule) {
    std::map<int, FunctionOracle> oracles;
    for (auto [e, c] : cutoff_by_epochs) oracles.emplace(e, step_oracle(c, cfg.threshold()));
    MemCache cache;
    return fondue_stable(cfg, [&](int e) -> IdeOracle& { return oracles.at(e); }, schedule, cache);
  };

  const auto a = run({{1, 12}, {2, 12}}, {1, 2});
  CHECK(a.p == 12);
  CHECK(a.epochs_used == 1);

  const auto b = run({{1, 11}, {2, 12}, {4, 12}}, {1, 2, 4});
  CHECK(b.p == 12);
  CHECK(b.epochs_used == 2);
  CHECK(b.predictions == std::vector<int>{11, 12, 12});

  try {
    run({{1, 3}, {2, 5}, {4, 7}}, {1, 2, 4});
    FAIL("expected Unstable");
  } catch (const Unstable& e) {
    CHECK(e.predictions() == std::vector<int>{3, 5, 7});
  }

  CHECK_THROWS_AS(run({{1, 3}}, {1}), ConfigError);
  CHECK_THROWS_AS(run({{1, 3}, {2, 3}}, {2, 1}), ConfigError);
}

TEST_CASE("fondue_var") {
  auto fixed = [](int av, int mv, int pv) {
    return [=](int) {
      VariableTypeReport r;
      r.active = av;
      r.mixed = mv;
      r.passive = pv;
      return r;
    };
  };
  auto trainer = [](int dims, int) { return dims; };

  CHECK(fondue_var(6.0, 1, true, trainer, fixed(9, 2, 5)).n == 11);
  CHECK(fondue_var(6.0, 1, false, trainer, fixed(9, 2, 0)).n == 9);

  // Keeps doubling while nothing is passive.
  int calls = 0;
  const auto grows = fondue_var(3.0, 1, true, trainer, [&](int dims) {
    ++calls;
    VariableTypeReport r;
    r.active = std::min(dims, 10);
    r.passive = dims - r.active;
    return r;
  });
  CHECK(grows.trained_dims == std::vector<int>{6, 12});
  CHECK(grows.n == 10);
  CHECK(calls == 2);

  CHECK_THROWS_AS(fondue_var(4.0, 1, true, trainer, [](int dims) {
                    VariableTypeReport r;
                    r.active = dims;
                    return r;
                  }),
                  SearchCapped);
  CHECK_THROWS_AS(fondue_var(0.5, 1, true, trainer, fixed(1, 0, 1)), ConfigError);
}

TEST_CASE("cache lines reload bit-exactly") {
  Rng rng(5);
  const auto path = temp_file("fondue_test_cache.jsonl");
  MemCache cache = MemCache::open(path);
  for (int p = 1; p <= 50; ++p) {
    CacheEntry e{p, 1 + static_cast<int>(rng.below(4)), rng.below(5), rng.normal() * 1e3, rng.uniform() / 7.0,
                 "mle", p % 3 == 0 ? std::nullopt : std::optional<int>(20)};
    cache.insert(e);
  }
  const MemCache back = MemCache::load(path);
  REQUIRE(back.size() == cache.size());
  for (const auto& [key, e] : cache.entries()) {
    const CacheEntry* got = back.find(e.seed, e.epochs, e.p);
    REQUIRE(got != nullptr);
    CHECK(std::memcmp(&got->ide_z, &e.ide_z, sizeof(double)) == 0);
    CHECK(std::memcmp(&got->ide_mu, &e.ide_mu, sizeof(double)) == 0);
    CHECK(*got == e);
  }

  const auto line = to_json_line(cache.entries().begin()->second);
  CHECK(cache_entry_from_json_line(line) == cache.entries().begin()->second);

  CHECK_THROWS_AS(cache.insert(cache.entries().begin()->second), ConfigError);
  {
    std::ofstream f(path, std::ios::app);
    f << "{not json\n";
  }
  CHECK_THROWS_AS(MemCache::load(path), FormatError);
  fs::remove(path);
}

TEST_CASE("cache merge") {
  MemCache a, b;
  a.insert({1, 1, 0, 2.0, 1.0, "mle", 20});
  b.insert({2, 1, 0, 3.0, 1.0, "mle", 20});
  a.merge(b);
  CHECK(a.size() == 2);
  MemCache c;
  c.insert({2, 1, 0, 9.0, 1.0, "mle", 20});
  CHECK_THROWS_AS(a.merge(c), ConfigError);
}

TEST_CASE("a reloaded cache reproduces the search without queries") {
  const auto path = temp_file("fondue_test_rerun.jsonl");
  FondueConfig cfg;
  cfg.ide_data = 5.0;
  cfg.epochs = 2;
  int first_p = 0;
  {
    MemCache cache = MemCache::open(path);
    auto oracle = step_oracle(13, cfg.threshold());
    first_p = run_fondue(cfg, oracle, cache).p;
  }
  MemCache cache = MemCache::open(path);
  auto oracle = step_oracle(13, cfg.threshold());
  const auto again = run_fondue(cfg, oracle, cache);
  CHECK(again.p == first_p);
  CHECK(oracle.calls() == 0);
  CHECK(again.oracle_calls == 0);
  fs::remove(path);
}

TEST_CASE("trained oracle is deterministic") {
  const Dataset sprites = gen_mini_sprites();
  TrainedOracleConfig oc;
  oc.vae.seed = 3;
  const auto dir = fs::temp_directory_path() / "fondue_test_oracle";
  fs::remove_all(dir);
  oc.checkpoint_dir = dir;
  TrainedVaeOracle a(sprites.data, oc);
  TrainedVaeOracle b(sprites.data, oc);
  const auto x = a.query(4, 1);
  const auto y = b.query(4, 1);
  CHECK(x.ide_z == y.ide_z);
  CHECK(x.ide_mu == y.ide_mu);
  CHECK(x.ide_z > 0.0);
  CHECK(a.trainings() == 1);
  CHECK(a.checkpoints().count({4, 1}) == 1);
  CHECK(fs::exists(a.checkpoints().at({4, 1})));
  CHECK(a.estimator_k() == 20);
  fs::remove_all(dir);

  TrainedOracleConfig small = oc;
  small.probe_rows = 10;
  CHECK_THROWS_AS(TrainedVaeOracle(sprites.data, small), ConfigError);
}
