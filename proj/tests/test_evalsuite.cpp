#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "steerlab/evalsuite.hpp"
#include "steerlab/synthetic.hpp"

using namespace steerlab;
using namespace steerlab::evalsuite;

namespace {

PredictionRecord pred(const std::string& id, std::optional<int> parsed, int gold,
                      const std::string& method = "m", const std::string& cot = "") {
  prompting::ParsedAnswer pa;
  pa.option = parsed;
  return make_prediction(id, method, cot, pa, gold);
}

std::vector<PredictionRecord> records_from(const std::vector<int>& golds,
                                           const std::vector<int>& preds) {
  std::vector<PredictionRecord> out;
  for (size_t i = 0; i < golds.size(); ++i) {
    std::optional<int> p;
    if (preds[i] >= 0) p = preds[i];
    out.push_back(pred("id" + std::to_string(i), p, golds[i]));
  }
  return out;
}

// Independent counting oracle: per-class tallies computed by re-scanning the
// records for every class, no shared accumulators with the implementation.
struct OracleResult {
  double acc, bacc, maf;
};

OracleResult oracle_metrics(const std::vector<PredictionRecord>& records, int n_classes) {
  int correct = 0;
  for (const auto& r : records) {
    if (r.parsed.option && *r.parsed.option == r.gold) ++correct;
  }
  double recall_sum = 0, f1_sum = 0;
  int present = 0;
  for (int k = 0; k < n_classes; ++k) {
    int gold_k = 0, pred_k = 0, hit_k = 0;
    for (const auto& r : records) {
      if (r.gold == k) ++gold_k;
      if (r.parsed.option && *r.parsed.option == k) {
        ++pred_k;
        if (r.gold == k) ++hit_k;
      }
    }
    if (gold_k == 0) continue;
    ++present;
    double recall = static_cast<double>(hit_k) / gold_k;
    double precision = pred_k > 0 ? static_cast<double>(hit_k) / pred_k : 0.0;
    double f1 = (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    recall_sum += recall;
    f1_sum += f1;
  }
  return {static_cast<double>(correct) / records.size(), recall_sum / present, f1_sum / present};
}

// Exact-integer binomial oracle for b + c <= 30.
double binomial_oracle(long long b, long long c) {
  long long n = b + c;
  if (n == 0) return 1.0;
  long long m = std::min(b, c);
  auto choose = [](long long n_, long long k_) {
    unsigned long long r = 1;
    for (long long i = 1; i <= k_; ++i) r = r * (n_ - k_ + i) / i;
    return r;
  };
  unsigned long long tail = 0;
  for (long long k = 0; k <= m; ++k) tail += choose(n, k);
  double p = 2.0 * static_cast<double>(tail) / std::pow(2.0, static_cast<double>(n));
  return std::min(1.0, p);
}

}  // namespace

TEST_SUITE_BEGIN("evalsuite");

TEST_CASE("make_prediction maintains the correctness invariant") {
  CHECK(pred("a", 1, 1).correct);
  CHECK(!pred("a", 0, 1).correct);
  CHECK(!pred("a", std::nullopt, 1).correct);  // Unparseable is wrong
}

TEST_CASE("worked metrics example: golds [A,A,B], preds [A,B,B]") {
  auto records = records_from({0, 0, 1}, {0, 1, 1});
  auto report = compute_metrics(records, 2, MetricsVariant::Original);
  CHECK(report.accuracy == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(report.balanced_accuracy == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(report.macro_f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(report.n == 3);
}

TEST_CASE("perfect predictions score 1.0 on every metric") {
  auto records = records_from({0, 1, 2, 1}, {0, 1, 2, 1});
  auto report = compute_metrics(records, 3, MetricsVariant::Original);
  CHECK(report.accuracy == 1.0);
  CHECK(report.balanced_accuracy == 1.0);
  CHECK(report.macro_f1 == 1.0);
}

TEST_CASE("metrics equal the brute-force oracle on 1000 randomized sets") {
  Rng rng(60);
  for (int trial = 0; trial < 1000; ++trial) {
    int n_classes = 2 + static_cast<int>(rng.index(4));
    int n = 1 + static_cast<int>(rng.index(50));
    std::vector<int> golds(n), preds(n);
    bool any_gold = false;
    for (int i = 0; i < n; ++i) {
      golds[i] = static_cast<int>(rng.index(n_classes));
      // ~12% unparseable
      preds[i] = rng.uniform() < 0.12 ? -1 : static_cast<int>(rng.index(n_classes));
    }
    (void)any_gold;
    auto records = records_from(golds, preds);
    auto report = compute_metrics(records, n_classes, MetricsVariant::Original);
    auto oracle = oracle_metrics(records, n_classes);
    CHECK(report.accuracy == oracle.acc);
    CHECK(report.balanced_accuracy == oracle.bacc);
    CHECK(report.macro_f1 == oracle.maf);
  }
}

TEST_CASE("unparseable predictions count as predicting no class") {
  auto records = records_from({0, 1}, {-1, -1});
  auto report = compute_metrics(records, 2, MetricsVariant::Original);
  CHECK(report.accuracy == 0.0);
  for (const auto& c : report.per_class) {
    CHECK(c.predicted == 0);
    CHECK(c.precision == 0.0);
  }
}

TEST_CASE("BAcc equals Acc on uniformly distributed golds") {
  Rng rng(61);
  std::vector<int> golds, preds;
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < 10; ++i) {
      golds.push_back(k);
      preds.push_back(static_cast<int>(rng.index(3)));
    }
  }
  auto report = compute_metrics(records_from(golds, preds), 3, MetricsVariant::Original);
  CHECK(report.balanced_accuracy == doctest::Approx(report.accuracy).epsilon(1e-12));
}

TEST_CASE("metrics error paths") {
  CHECK_THROWS_AS(compute_metrics({}, 3, MetricsVariant::Original), EvalError);
  // binary variant refuses an Either gold
  auto records = records_from({0, 2}, {0, 2});
  CHECK_THROWS_WITH_AS(compute_metrics(records, 3, MetricsVariant::Binary),
                       doctest::Contains("Either"), EvalError);
  CHECK_NOTHROW(compute_metrics(records_from({0, 1}, {0, 1}), 3, MetricsVariant::Binary));
}

TEST_CASE("mcnemar matches the binomial-sum oracle on the full b+c<=30 grid") {
  for (long long b = 0; b <= 30; ++b) {
    for (long long c = 0; b + c <= 30; ++c) {
      // synthesize aligned records with exactly b and c discordant pairs
      std::vector<PredictionRecord> m1, m2;
      int id = 0;
      auto push = [&](bool correct1, bool correct2) {
        std::string key = "i" + std::to_string(id++);
        m1.push_back(pred(key, correct1 ? 1 : 0, 1));
        m2.push_back(pred(key, correct2 ? 1 : 0, 1));
      };
      for (long long i = 0; i < b; ++i) push(true, false);
      for (long long i = 0; i < c; ++i) push(false, true);
      push(true, true);  // concordant pair, must not affect the test
      auto result = mcnemar(m1, m2);
      CHECK(result.b == b);
      CHECK(result.c == c);
      CHECK(result.variant == McNemarResult::Variant::ExactBinomial);
      CHECK(result.p_value == doctest::Approx(binomial_oracle(b, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("mcnemar worked example and degenerate cases") {
  CHECK(binomial_oracle(2, 8) == 0.109375);  // pin the oracle itself
  std::vector<PredictionRecord> m1, m2;
  int id = 0;
  auto push = [&](bool c1, bool c2) {
    std::string key = "i" + std::to_string(id++);
    m1.push_back(pred(key, c1 ? 1 : 0, 1));
    m2.push_back(pred(key, c2 ? 1 : 0, 1));
  };
  for (int i = 0; i < 2; ++i) push(true, false);
  for (int i = 0; i < 8; ++i) push(false, true);
  auto result = mcnemar(m1, m2);
  CHECK(result.p_value == doctest::Approx(0.109375).epsilon(1e-12));

  // b = c: the doubled tail caps at 1
  m1.clear(); m2.clear(); id = 0;
  for (int i = 0; i < 3; ++i) push(true, false);
  for (int i = 0; i < 3; ++i) push(false, true);
  CHECK(mcnemar(m1, m2).p_value == 1.0);

  // b = c = 0
  m1.clear(); m2.clear(); id = 0;
  push(true, true);
  push(false, false);
  auto degenerate = mcnemar(m1, m2);
  CHECK(degenerate.b == 0);
  CHECK(degenerate.c == 0);
  CHECK(degenerate.p_value == 1.0);
}

TEST_CASE("mcnemar is symmetric and alignment is by id, not order") {
  Rng rng(62);
  std::vector<PredictionRecord> m1, m2;
  for (int i = 0; i < 200; ++i) {
    std::string key = "k" + std::to_string(i);
    m1.push_back(pred(key, static_cast<int>(rng.index(3)), static_cast<int>(rng.index(3))));
    m2.push_back(pred(key, static_cast<int>(rng.index(3)), static_cast<int>(rng.index(3))));
  }
  auto forward = mcnemar(m1, m2);
  auto backward = mcnemar(m2, m1);
  CHECK(forward.p_value == backward.p_value);
  CHECK(forward.b == backward.c);

  // shuffle m2: alignment must not change
  auto shuffled = m2;
  Rng shuffle_rng(63);
  shuffle_rng.shuffle(shuffled);
  auto after = mcnemar(m1, shuffled);
  CHECK(after.b == forward.b);
  CHECK(after.c == forward.c);
}

TEST_CASE("mcnemar rejects mismatched instance sets") {
  auto m1 = records_from({0, 1}, {0, 1});
  auto m2 = records_from({0, 1}, {0, 1});
  m2.pop_back();
  CHECK_THROWS_AS(mcnemar(m1, m2), EvalError);
  m2 = records_from({0, 1}, {0, 1});
  m2[1].instance_id = "other";
  CHECK_THROWS_AS(mcnemar(m1, m2), EvalError);
}

TEST_CASE("mcnemar switches to corrected chi-square past 1000 discordant pairs") {
  std::vector<PredictionRecord> m1, m2;
  int id = 0;
  auto push = [&](bool c1, bool c2) {
    std::string key = "i" + std::to_string(id++);
    m1.push_back(pred(key, c1 ? 1 : 0, 1));
    m2.push_back(pred(key, c2 ? 1 : 0, 1));
  };
  for (int i = 0; i < 600; ++i) push(true, false);
  for (int i = 0; i < 500; ++i) push(false, true);
  auto result = mcnemar(m1, m2);
  CHECK(result.variant == McNemarResult::Variant::Chi2Corrected);
  // (|600-500|-1)^2 / 1100 = 8.91; survival of chi-square(1dof)
  CHECK(result.p_value == doctest::Approx(0.0028361326556547).epsilon(1e-9));
}

namespace {

std::map<std::string, corpus::TaskInstance> task_index(const corpus::TaskSet& tasks) {
  std::map<std::string, corpus::TaskInstance> index;
  for (const auto& inst : tasks.instances) index[inst.id] = inst;
  return index;
}

std::unique_ptr<gateway::MockTransport> judge_mock(
    std::function<std::string(const gateway::ChatRequest&)> fn) {
  return std::make_unique<gateway::MockTransport>(std::move(fn), nullptr);
}

gateway::GatewayConfig quiet_config() {
  gateway::GatewayConfig cfg;
  cfg.backoff_ms = 1;
  return cfg;
}

}  // namespace

TEST_CASE("faithfulness: a judge that echoes the record's answer scores 1.0") {
  auto tasks = synthetic::generate_task({.n_scenarios = 20});
  auto index = task_index(tasks);
  std::vector<PredictionRecord> records;
  for (const auto& inst : tasks.instances) {
    records.push_back(pred(inst.id, inst.gold, inst.gold, "m",
                           "reasoning that points to option " +
                               std::string(1, static_cast<char>('A' + inst.gold))));
  }
  // echo judge: reads the conclusion out of the rationale
  gateway::Gateway gw(judge_mock([](const gateway::ChatRequest& req) {
                        size_t pos = req.prompt.rfind("option ");
                        char letter = req.prompt[pos + 7];
                        return std::string("Answer: ") + letter;
                      }),
                      quiet_config());
  FaithfulnessOptions options;
  options.sample_size = 40;
  options.seed = 3;
  auto report = run_faithfulness(records, index, gw, options);
  CHECK(report.n_sampled == 40);
  CHECK(report.faithful_fraction == 1.0);
  CHECK(report.stance_histogram_over_unfaithful.empty());
  CHECK(report.judge_unparseable == 0);
}

TEST_CASE("faithfulness: judge always answering C against A-records scores 0.0") {
  auto tasks = synthetic::generate_task({.n_scenarios = 12});
  auto index = task_index(tasks);
  std::vector<PredictionRecord> records;
  for (const auto& inst : tasks.instances) {
    records.push_back(pred(inst.id, 0, inst.gold, "m", "some rationale"));  // all answer A
  }
  gateway::Gateway gw(judge_mock([](const gateway::ChatRequest&) { return "Answer: C"; }),
                      quiet_config());
  FaithfulnessOptions options;
  options.sample_size = 1000;  // more than available: take all
  auto report = run_faithfulness(records, index, gw, options);
  CHECK(report.n_sampled == static_cast<int>(records.size()));
  CHECK(report.faithful_fraction == 0.0);
  REQUIRE(report.stance_histogram_over_unfaithful.count(0) == 1);
  CHECK(report.stance_histogram_over_unfaithful.at(0) == 1.0);
}

TEST_CASE("faithfulness: unparseable judge replies count as unfaithful, tallied") {
  auto tasks = synthetic::generate_task({.n_scenarios = 10});
  auto index = task_index(tasks);
  std::vector<PredictionRecord> records;
  for (const auto& inst : tasks.instances) {
    records.push_back(pred(inst.id, inst.gold, inst.gold, "m", "rationale"));
  }
  gateway::Gateway gw(judge_mock([](const gateway::ChatRequest&) { return "no idea"; }),
                      quiet_config());
  FaithfulnessOptions options;
  options.sample_size = 10;
  auto report = run_faithfulness(records, index, gw, options);
  CHECK(report.faithful_fraction == 0.0);
  CHECK(report.judge_unparseable == 10);
  // histogram fractions still sum to 1 over the unfaithful
  double sum = 0.0;
  for (const auto& [k, v] : report.stance_histogram_over_unfaithful) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("faithfulness sampling is seeded and reproducible") {
  auto tasks = synthetic::generate_task({.n_scenarios = 30});
  auto index = task_index(tasks);
  std::vector<PredictionRecord> records;
  for (const auto& inst : tasks.instances) {
    records.push_back(pred(inst.id, inst.gold, inst.gold, "m",
                           "points to option " + std::string(1, static_cast<char>('A' + inst.gold))));
  }
  auto run_once = [&]() {
    gateway::Gateway gw(judge_mock([](const gateway::ChatRequest& req) {
                          size_t pos = req.prompt.rfind("option ");
                          return std::string("Answer: ") + req.prompt[pos + 7];
                        }),
                        quiet_config());
    FaithfulnessOptions options;
    options.sample_size = 25;
    options.seed = 77;
    return run_faithfulness(records, index, gw, options);
  };
  auto a = run_once();
  auto b = run_once();
  CHECK(faithfulness_to_json(a) == faithfulness_to_json(b));
}

TEST_CASE("moderation report matches hand-counted mock flags") {
  // 10 records; the mock flags exactly the three whose text says "flagme"
  std::vector<PredictionRecord> records;
  for (int i = 0; i < 10; ++i) {
    std::string cot = (i == 1 || i == 4 || i == 7) ? "flagme text " + std::to_string(i)
                                                   : "clean text " + std::to_string(i);
    records.push_back(pred("id" + std::to_string(i), 0, 0, "m", cot));
  }
  auto mock = std::make_unique<gateway::MockTransport>(
      nullptr, [](const std::string& input) {
        gateway::ModerationVerdict v;
        bool flag = contains(input, "flagme");
        v.categories["violence"] = {flag, flag ? 0.9 : 0.0};
        v.flagged = flag;
        return v;
      });
  gateway::Gateway gw(std::move(mock), quiet_config());
  ModerationOptions options;
  options.sample_size = 10;
  auto report = run_moderation(records, gw, options);
  CHECK(report.n_sampled == 10);
  CHECK(report.overall_pct == doctest::Approx(30.0).epsilon(1e-12));
  CHECK(report.category_pct.at("violence") == doctest::Approx(30.0).epsilon(1e-12));
  CHECK(report.category_pct.at("sexual") == 0.0);
  CHECK(report.category_pct.at("harassment") == 0.0);
}

TEST_CASE("all-clear moderation yields zeros") {
  std::vector<PredictionRecord> records;
  for (int i = 0; i < 5; ++i) records.push_back(pred("id" + std::to_string(i), 0, 0, "m", "text"));
  auto mock = std::make_unique<gateway::MockTransport>(
      nullptr, [](const std::string&) { return gateway::ModerationVerdict{}; });
  gateway::Gateway gw(std::move(mock), quiet_config());
  auto report = run_moderation(records, gw, ModerationOptions{.sample_size = 5});
  CHECK(report.overall_pct == 0.0);
  for (const auto& [name, pct] : report.category_pct) CHECK(pct == 0.0);
}

TEST_CASE("moderation aborts past the skip threshold") {
  struct FailingTransport : gateway::Transport {
    gateway::TransportReply chat(const gateway::ChatRequest&) override { return {400, "no"}; }
    gateway::TransportReply moderate(const std::string&, const std::string& input) override {
      if (contains(input, "bad")) return {400, "refused"};
      json body = {{"results", json::array({{{"flagged", false},
                                             {"categories", json::object()},
                                             {"category_scores", json::object()}}})}};
      return {200, body.dump()};
    }
  };
  std::vector<PredictionRecord> records;
  for (int i = 0; i < 50; ++i) {
    records.push_back(pred("id" + std::to_string(i), 0, 0, "m",
                           i < 2 ? "bad text" : "fine " + std::to_string(i)));
  }
  gateway::Gateway gw(std::make_unique<FailingTransport>(), quiet_config());
  ModerationOptions options;
  options.sample_size = 50;
  CHECK_THROWS_WITH_AS(run_moderation(records, gw, options), doctest::Contains("skip rate"),
                       EvalError);
  options.skip_abort_fraction = 0.10;
  auto report = run_moderation(records, gw, options);
  CHECK(report.skipped == 2);
  CHECK(report.n_sampled == 48);
}

TEST_CASE("nested subsets are scenario-disjoint prefixes of each other") {
  auto tasks = synthetic::generate_task({.n_scenarios = 50});
  auto subsets = make_nested_subsets(tasks.instances, {0.1, 0.25, 1.0}, 9);
  REQUIRE(subsets.size() == 3);
  CHECK(subsets[2].size() == tasks.instances.size());
  CHECK(subsets[0].size() >= tasks.instances.size() / 10);
  CHECK(subsets[0].size() < subsets[1].size());

  // id containment: smaller subsets nest inside larger ones
  auto ids = [](const std::vector<corpus::TaskInstance>& v) {
    std::set<std::string> s;
    for (const auto& inst : v) s.insert(inst.id);
    return s;
  };
  auto s0 = ids(subsets[0]), s1 = ids(subsets[1]), s2 = ids(subsets[2]);
  for (const auto& id : s0) CHECK(s1.count(id) == 1);
  for (const auto& id : s1) CHECK(s2.count(id) == 1);

  // whole scenarios only
  std::map<std::string, size_t> scenario_sizes;
  for (const auto& inst : tasks.instances) scenario_sizes[inst.scenario_key]++;
  std::map<std::string, size_t> taken;
  for (const auto& inst : subsets[0]) taken[inst.scenario_key]++;
  for (const auto& [key, count] : taken) CHECK(count == scenario_sizes.at(key));

  CHECK_THROWS_AS(make_nested_subsets(tasks.instances, {0.0}, 9), EvalError);
  CHECK_THROWS_AS(make_nested_subsets(tasks.instances, {1.2}, 9), EvalError);
}

TEST_CASE("sample_efficiency_sweep trains once per fraction on nested subsets") {
  auto tasks = synthetic::generate_task({.n_scenarios = 40});
  std::vector<int> sizes;
  auto curve = sample_efficiency_sweep(tasks, {0.25, 1.0}, 4, [&](const corpus::TaskSet& subset) {
    sizes.push_back(static_cast<int>(subset.size()));
    return 0.9 + 0.01 * static_cast<double>(sizes.size());
  });
  REQUIRE(curve.size() == 2);
  CHECK(curve[0].fraction == 0.25);
  CHECK(curve[1].fraction == 1.0);
  CHECK(curve[0].n_instances == sizes[0]);
  CHECK(curve[1].n_instances == static_cast<int>(tasks.instances.size()));
  CHECK(curve[0].val_accuracy == doctest::Approx(0.91));

  std::string path = "/tmp/steerlab_sweep.csv";
  save_sweep_csv(path, curve);
  CHECK(contains(read_file(path), "fraction,n_instances,val_accuracy"));
}

TEST_CASE("full-scale reference constants are pinned") {
  auto find = [](const char* metric) {
    for (const auto& ref : kFullScaleReference) {
      if (std::string(ref.metric) == metric) return ref.value;
    }
    return -1.0;
  };
  CHECK(find("accuracy") == 81.1);
  CHECK(find("macro_f1") == 72.5);
  CHECK(find("moderation_overall_pct") == 10.05);
  CHECK(find("moderation_violence_pct") == 9.80);
  CHECK(find("unfaithful_neither_pct") == 58.6);
}

TEST_CASE("prediction records round-trip through the line format") {
  std::vector<PredictionRecord> records = {
      pred("a", 1, 1, "rlvr", "cot text"),
      pred("b", std::nullopt, 0, "rlvr", ""),
  };
  std::string path = "/tmp/steerlab_predictions.jsonl";
  write_predictions(path, records);
  auto loaded = read_predictions(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].instance_id == "a");
  CHECK(loaded[0].parsed.option == 1);
  CHECK(loaded[0].correct);
  CHECK(!loaded[1].parsed.option.has_value());
  CHECK(!loaded[1].correct);
}

TEST_SUITE_END();
