#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "esma/config.hpp"
#include "esma/csvio.hpp"
#include "esma/data.hpp"
#include "esma/errors.hpp"
#include "esma/experiments.hpp"
#include "esma/report.hpp"
#include "esma/stats.hpp"
#include "helpers.hpp"

using namespace esma;
using namespace esma::testing;
namespace fs = std::filesystem;

namespace {

GaussianMixtureSpec skewed_spec() {
  GaussianMixtureSpec s;
  s.classes = {{{0.0, 1.0}, Tensor2(2, 2, {1.0, 0.3, 0.3, 0.5}), 0.5},
               {{2.0, -1.0}, Tensor2(2, 2, {0.4, -0.1, -0.1, 2.0}), 0.3},
               {{-1.5, 0.5}, Tensor2(2, 2, {2.0, 0.0, 0.0, 2.0}), 0.2}};
  return s;
}

double gauss2(const std::vector<double>& x, const GaussianComponent& c) {
  const auto& S = c.covariance;
  const double det = S(0, 0) * S(1, 1) - S(0, 1) * S(1, 0);
  const double i00 = S(1, 1) / det, i11 = S(0, 0) / det, i01 = -S(0, 1) / det;
  const double a = x[0] - c.mean[0], b = x[1] - c.mean[1];
  const double q = a * a * i00 + 2 * a * b * i01 + b * b * i11;
  return std::exp(-0.5 * q) / (2 * std::numbers::pi * std::sqrt(det));
}

ExperimentSettings tiny_settings() {
  ExperimentSettings s;
  s.seeds = {0};
  s.samples = 60;
  s.eval_samples = 20;
  s.architectures = {Architecture{{8}}, Architecture{{6, 6}}, Architecture{{5}}};
  s.train.total_steps = 60;
  s.attack_steps = 5;
  s.q = 3;
  s.q_values = {1, 3, 0};
  return s;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("esma_harness_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Mixture, Validation) {
  auto s = skewed_spec();
  EXPECT_NO_THROW(s.validate());
  s.classes[0].prior = 0.6;
  EXPECT_THROW(s.validate(), InvalidInput);
  s = skewed_spec();
  s.classes[1].covariance = Tensor2(2, 2, {1.0, 1.0, 1.0, 1.0 + 1e-13});
  EXPECT_THROW(s.validate(), InvalidInput);
  s = skewed_spec();
  s.classes[1].covariance = Tensor2(2, 2, {1.0, 0.2, 0.1, 1.0});
  EXPECT_THROW(s.validate(), InvalidInput);
}

TEST(Mixture, Frequencies) {
  auto s = skewed_spec();
  s.samples = 10000;
  s.seed = 3;
  const auto d = gen_gaussian_mixture(s);
  ASSERT_EQ(d.size(), 10000u);
  for (ClassIndex k = 0; k < 3; ++k) {
    const auto idx = d.class_indices(k);
    const double n = static_cast<double>(idx.size());
    EXPECT_NEAR(n / 10000.0, s.classes[k].prior, 4.0 / 100.0);
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0;
      for (auto i : idx) m += d.points(i, c);
      m /= n;
      const double sigma = std::sqrt(s.classes[k].covariance(c, c));
      EXPECT_NEAR(m, s.classes[k].mean[c], 5 * sigma / std::sqrt(n));
    }
  }
}

TEST(Mixture, SeededReproducible) {
  const auto a = gen_gaussian_mixture(GaussianMixtureSpec::two_gaussians(1.5, 50, 8));
  const auto b = gen_gaussian_mixture(GaussianMixtureSpec::two_gaussians(1.5, 50, 8));
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Bayes, MidpointAndBisector) {
  const auto s = GaussianMixtureSpec::two_gaussians(1.5);
  const auto p = bayes_posterior(s, std::vector<double>{0.0, 0.7});
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
  EXPECT_GT(bayes_posterior(s, std::vector<double>{-1e-6, 3.0})[0], 0.5);
  EXPECT_GT(bayes_posterior(s, std::vector<double>{1e-6, -3.0})[1], 0.5);
}

TEST(Bayes, DirectEvaluation) {
  const auto s = skewed_spec();
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_tensor(1, 2, rng, -3, 3).data;
    std::vector<double> w(3);
    double z = 0;
    for (std::size_t k = 0; k < 3; ++k) z += w[k] = s.classes[k].prior * gauss2(x, s.classes[k]);
    const auto p = bayes_posterior(s, x);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p[k], w[k] / z, 1e-10);
  }
}

TEST(Stats, RanksAndCorrelations) {
  EXPECT_EQ(average_ranks(std::vector<double>{3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{2, 4, 8, 16, 32};
  const std::vector<double> c{5, 3, 4, 1, 2};
  EXPECT_NEAR(spearman(a, b), 1.0, 1e-15);
  EXPECT_NEAR(pearson(a, std::vector<double>{2, 4, 6, 8, 10}), 1.0, 1e-15);
  // 1 - 6 sum d^2 / (n (n^2 - 1)), d = (4, 1, 1, 3, 3)
  EXPECT_NEAR(spearman(a, c), 1.0 - 6.0 * 36.0 / 120.0, 1e-15);
  EXPECT_EQ(pearson(a, std::vector<double>{1, 1, 1, 1, 1}), 0.0);
}

TEST(Stats, Terciles) {
  const std::vector<double> values{10, 20, 30, 40, 50, 60, 70};
  const std::vector<double> keys{7, 6, 5, 4, 3, 2, 1};
  const auto t = tercile_means(values, keys);
  EXPECT_DOUBLE_EQ(t.bottom, 65.0);
  EXPECT_DOUBLE_EQ(t.top, 15.0);
  EXPECT_THROW(tercile_means(std::vector<double>{1, 2}, std::vector<double>{1, 2}), InvalidInput);
}

TEST(Stats, MeanStddevCosine) {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  EXPECT_DOUBLE_EQ(mean(v), 5.0);
  EXPECT_DOUBLE_EQ(stddev(v), 2.0);
  EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 1}), std::sqrt(0.5), 1e-15);
}

TEST(Config, ParseAndTypes) {
  std::stringstream ss("# comment\n\nseed = 1,2,3\neps=0.25\nname = two words \n");
  const auto c = KeyValueConfig::parse(ss);
  EXPECT_EQ(c.integers("seed", {}), (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(c.real("eps", 0), 0.25);
  EXPECT_EQ(c.text("name", ""), "two words");
  EXPECT_EQ(c.count("missing", 7), 7u);
}

TEST(Config, SettingsRoundTrip) {
  ExperimentSettings s;
  s.seeds = {4, 9};
  s.eps = 0.1 + 0.2;
  s.architectures = {Architecture{{3, 4}}, Architecture{{7}}};
  s.victims = {0};
  s.surrogate = 1;
  s.q_values = {2, 0};
  std::stringstream ss;
  to_config(s).save(ss);
  const auto back = from_config(KeyValueConfig::parse(ss));
  EXPECT_EQ(to_config(back).values(), to_config(s).values());
  EXPECT_EQ(back.eps, s.eps);
  EXPECT_EQ(back.architectures, s.architectures);
}

TEST(Config, UnknownKeyRejected) {
  auto c = to_config(ExperimentSettings{});
  c.set("epz", std::string("0.3"));
  EXPECT_THROW(from_config(c), InvalidConfig);
}

TEST(Report, CsvCells) {
  EXPECT_EQ(csv_cell(Cell{std::int64_t{-4}}), "-4");
  EXPECT_EQ(csv_cell(Cell{0.1}), "0.1");
  EXPECT_EQ(csv_cell(Cell{std::string("a,b")}), "\"a,b\"");
  EXPECT_EQ(csv_cell(Cell{std::string("plain")}), "plain");
  Table t{"t", {"a", "b"}, {}};
  EXPECT_THROW(t.add_row({std::int64_t{1}}), InvalidInput);
}

TEST(Report, WritesManifest) {
  ExperimentReport r{"demo", {{"eps", "0.5"}}, {1, 2}, {}};
  Table t{"numbers", {"x", "y"}, {}};
  t.add_row({std::int64_t{1}, 0.5});
  r.tables.push_back(t);
  const auto dir = scratch("report");
  write_report(dir, r);
  std::ifstream js(dir / "report.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j["experiment"], "demo");
  EXPECT_EQ(j["files"][0]["file"], "numbers.csv");
  std::ifstream csv(dir / "numbers.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, "x,y");
  EXPECT_EQ(row, "1,0.5");
  fs::remove_all(dir);
}

TEST(CsvIo, DatasetRoundTrip) {
  const auto d = gen_gaussian_mixture(GaussianMixtureSpec::three_gaussians(1.5, 30, 2));
  std::stringstream ss;
  write_dataset_csv(ss, d);
  const auto back = read_dataset_csv(ss);
  EXPECT_EQ(back.points, d.points);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.num_classes, 3u);
}

TEST(CsvIo, AttackRoundTrip) {
  Rng rng(3);
  AttackResult r;
  r.requests = {{0, 0, 1}, {5, 1, 0}};
  r.clean = random_tensor(2, 3, rng);
  r.adversarial = random_tensor(2, 3, rng);
  r.final_objective = {0.25, 1.0 / 3.0};
  std::stringstream ss;
  write_attack_csv(ss, r);
  const auto back = read_attack_csv(ss);
  EXPECT_EQ(back.clean, r.clean);
  EXPECT_EQ(back.adversarial, r.adversarial);
  EXPECT_EQ(back.final_objective, r.final_objective);
  EXPECT_EQ(back.requests[1].sample_id, 5u);
  EXPECT_EQ(back.requests[1].target, 0u);
}

TEST(Experiments, IdenticalArchitecturesAgreeEverywhere) {
  auto s = tiny_settings();
  s.architectures = {Architecture{{8}}, Architecture{{8}}};
  s.victims = {0};
  s.surrogate = 1;
  const auto out = consistency_experiment(s);
  const auto& t = out.report.table("consistency_samples");
  const auto col = t.column("output_diff");
  ASSERT_EQ(t.rows.size(), s.samples);
  for (const auto& row : t.rows) EXPECT_EQ(std::get<double>(row[col]), 0.0);
  EXPECT_EQ(out.report.table("consistency_bins").rows.size(), s.bins);
}

TEST(Experiments, ZeroBudgetRatesCoincide) {
  auto s = tiny_settings();
  s.eps = 0.0;
  const auto out = table1_protocol(s);
  ASSERT_EQ(out.seeds.size(), 1u);
  EXPECT_EQ(out.seeds[0].ce, out.seeds[0].random_anchor);
  EXPECT_EQ(out.seeds[0].ce, out.seeds[0].screened_anchor);
}

TEST(Experiments, QAblationShape) {
  const auto s = tiny_settings();
  const auto out = q_ablation(s);
  EXPECT_EQ(out.report.table("q_similarity").rows.size(), s.q_values.size());
  EXPECT_EQ(out.seeds[0].mean.size(), s.q_values.size());
}

TEST(Experiments, NonStrictFullScreenSelectsAll) {
  Rng rng(5);
  const auto data = random_dataset(30, 2, 2, rng);
  const auto m = MlpClassifier::initialize(std::vector<std::size_t>{2, 5, 2}, 3);
  const auto book = build_anchor_book(m, data, 15, Comparison::non_strict);
  EXPECT_EQ(book.sets[0].members, data.class_indices(0));
  EXPECT_EQ(book.sets[1].members, data.class_indices(1));
}

TEST(Experiments, DensityShiftZeroPerturbation) {
  Rng rng(6);
  const auto data = random_dataset(80, 2, 2, rng);
  const auto req = all_target_requests(data);
  AttackResult r;
  r.requests = req;
  std::vector<std::size_t> ids;
  for (const auto& q : req) ids.push_back(q.sample_id);
  r.clean = gather_rows(data.points, ids);
  r.adversarial = r.clean;
  const auto shift = density_shift_eval(data, r, 0.4, 10);
  EXPECT_EQ(shift.clean_counts, shift.adversarial_counts);
  std::size_t total = 0;
  for (auto c : shift.clean_counts) total += c;
  EXPECT_EQ(total, data.size());
  EXPECT_EQ(shift.clean_upper, shift.adversarial_upper);
}

TEST(Experiments, BudgetViolationsCounted) {
  AttackResult r;
  r.requests = {{0, 0, 1}, {1, 1, 0}};
  r.clean = Tensor2(2, 1, {0.0, 0.0});
  r.adversarial = Tensor2(2, 1, {0.5, 0.6});
  EXPECT_EQ(budget_violations(r, 0.5, DataRange::unbounded()), 1u);
  EXPECT_EQ(budget_violations(r, 0.7, {-1.0, 0.55}), 1u);
}
