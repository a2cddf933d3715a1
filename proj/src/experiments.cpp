#include "esma/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "esma/density.hpp"
#include "esma/errors.hpp"
#include "esma/loss.hpp"
#include "esma/rng.hpp"
#include "esma/stats.hpp"
#include "esma/textio.hpp"

namespace esma {

// ---------------------------------------------------------------------------
// Settings

GaussianMixtureSpec ExperimentSettings::spec(std::uint64_t seed, std::size_t n) const {
  if (classes == 2) return GaussianMixtureSpec::two_gaussians(offset, n, seed);
  if (classes == 3) return GaussianMixtureSpec::three_gaussians(offset, n, seed);
  throw InvalidConfig("experiments: classes must be 2 or 3");
}

AttackConfig ExperimentSettings::attack_config(AttackLoss loss, AnchorSource source) const {
  AttackConfig c;
  c.epsilon = eps;
  c.steps = attack_steps;
  c.momentum = momentum;
  c.loss = loss;
  c.anchor_source = source;
  return c;
}

void ExperimentSettings::validate() const {
  if (seeds.empty()) throw InvalidConfig("experiments: no seeds");
  if (classes != 2 && classes != 3) throw InvalidConfig("experiments: classes must be 2 or 3");
  if (architectures.empty()) throw InvalidConfig("experiments: no architectures");
  if (surrogate >= architectures.size()) throw InvalidConfig("experiments: surrogate out of range");
  if (victims.empty()) throw InvalidConfig("experiments: no victims");
  for (std::size_t v : victims) {
    if (v >= architectures.size()) throw InvalidConfig("experiments: victim out of range");
  }
  if (!(r > 0.0)) throw InvalidConfig("experiments: r must be > 0");
  if (bins < 1) throw InvalidConfig("experiments: bins must be >= 1");
  if (samples < 3 || eval_samples < 1) throw InvalidConfig("experiments: too few samples");
  train.validate();
  attack_config(AttackLoss::anchor_sq, AnchorSource::screened).validate();
  if (q < 1 || esma_q < 1) throw InvalidConfig("experiments: q must be >= 1");
  if (embed_dim < 1 || generator.hidden < 1) throw InvalidConfig("experiments: empty generator");
}

namespace {

std::string join_widths(const std::vector<std::size_t>& w, char sep) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(w[i]);
  }
  return out;
}

std::string format_architectures(const std::vector<Architecture>& archs) {
  std::string out;
  for (std::size_t i = 0; i < archs.size(); ++i) {
    if (i) out += ';';
    out += join_widths(archs[i].hidden, '-');
  }
  return out;
}

std::vector<Architecture> parse_architectures(const std::string& text) {
  std::vector<Architecture> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    Architecture a;
    std::stringstream is(item);
    std::string w;
    while (std::getline(is, w, '-')) {
      try {
        a.hidden.push_back(parse_count(w));
      } catch (const FormatError&) {
        throw InvalidConfig("architectures: bad width list '" + item + "'");
      }
    }
    out.push_back(std::move(a));
  }
  if (out.empty()) throw InvalidConfig("architectures: empty list");
  return out;
}

std::string format_q_values(const std::vector<std::uint64_t>& qs) {
  std::string out;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    if (i) out += ',';
    out += qs[i] == 0 ? std::string("all") : std::to_string(qs[i]);
  }
  return out;
}

std::vector<std::uint64_t> parse_q_values(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "all") {
      out.push_back(0);
      continue;
    }
    try {
      const auto v = parse_count(item);
      if (v == 0) throw InvalidConfig("q_values: q must be >= 1 or 'all'");
      out.push_back(v);
    } catch (const FormatError&) {
      throw InvalidConfig("q_values: bad entry '" + item + "'");
    }
  }
  if (out.empty()) throw InvalidConfig("q_values: empty list");
  return out;
}

std::string schedule_name(LearningRate::Kind k) {
  switch (k) {
    case LearningRate::Kind::constant: return "constant";
    case LearningRate::Kind::inverse_t: return "inverse_t";
    case LearningRate::Kind::inverse_sqrt: return "inverse_sqrt";
  }
  return "inverse_sqrt";
}

LearningRate::Kind parse_schedule(const std::string& name) {
  if (name == "constant") return LearningRate::Kind::constant;
  if (name == "inverse_t") return LearningRate::Kind::inverse_t;
  if (name == "inverse_sqrt") return LearningRate::Kind::inverse_sqrt;
  throw InvalidConfig("lr_schedule: expected constant, inverse_t or inverse_sqrt");
}

std::vector<std::size_t> to_sizes(const std::vector<std::uint64_t>& v) {
  return {v.begin(), v.end()};
}

const char* const kKnownKeys[] = {
    "seed",        "classes",     "offset",      "samples",        "eval_samples",
    "architectures", "batch",     "steps",       "lr",             "lr_schedule",
    "tolerance",   "val_fraction", "surrogate",  "victims",        "r",
    "bins",        "eps",         "attack_steps", "momentum",      "q",
    "esma_q",      "embed_dim",   "pretrain_steps", "pretrain_lr", "lambda1",
    "lambda2",     "gen_hidden",  "gen_blocks",  "gen_epochs",     "gen_lr",
    "q_values"};

}  // namespace

KeyValueConfig to_config(const ExperimentSettings& s) {
  KeyValueConfig c;
  c.set("seed", format_integer_list(s.seeds));
  c.set("classes", s.classes);
  c.set("offset", s.offset);
  c.set("samples", s.samples);
  c.set("eval_samples", s.eval_samples);
  c.set("architectures", format_architectures(s.architectures));
  c.set("batch", s.train.batch_size);
  c.set("steps", s.train.total_steps);
  c.set("lr", s.train.lr.scale);
  c.set("lr_schedule", schedule_name(s.train.lr.kind));
  c.set("tolerance", s.train.early_stop_tolerance);
  c.set("val_fraction", s.train.validation_fraction);
  c.set("surrogate", s.surrogate);
  std::vector<std::uint64_t> victims(s.victims.begin(), s.victims.end());
  c.set("victims", format_integer_list(victims));
  c.set("r", s.r);
  c.set("bins", s.bins);
  c.set("eps", s.eps);
  c.set("attack_steps", s.attack_steps);
  c.set("momentum", s.momentum);
  c.set("q", s.q);
  c.set("esma_q", s.esma_q);
  c.set("embed_dim", s.embed_dim);
  c.set("pretrain_steps", s.pretrain.steps);
  c.set("pretrain_lr", s.pretrain.optimizer.lr);
  c.set("lambda1", s.pretrain.lambda1);
  c.set("lambda2", s.pretrain.lambda2);
  c.set("gen_hidden", s.generator.hidden);
  c.set("gen_blocks", s.generator.blocks);
  c.set("gen_epochs", s.gen_epochs);
  c.set("gen_lr", s.gen_lr);
  c.set("q_values", format_q_values(s.q_values));
  return c;
}

ExperimentSettings from_config(const KeyValueConfig& c) {
  for (const auto& [key, value] : c.values()) {
    if (std::find(std::begin(kKnownKeys), std::end(kKnownKeys), key) == std::end(kKnownKeys)) {
      throw InvalidConfig("unknown config key '" + key + "'");
    }
  }
  ExperimentSettings s;
  s.seeds = c.integers("seed", s.seeds);
  s.classes = c.count("classes", s.classes);
  s.offset = c.real("offset", s.offset);
  s.samples = c.count("samples", s.samples);
  s.eval_samples = c.count("eval_samples", s.eval_samples);
  if (c.has("architectures")) s.architectures = parse_architectures(c.text("architectures", ""));
  s.train.batch_size = c.count("batch", s.train.batch_size);
  s.train.total_steps = c.count("steps", s.train.total_steps);
  s.train.lr.scale = c.real("lr", s.train.lr.scale);
  s.train.lr.kind = parse_schedule(c.text("lr_schedule", schedule_name(s.train.lr.kind)));
  s.train.early_stop_tolerance = c.count("tolerance", s.train.early_stop_tolerance);
  s.train.validation_fraction = c.real("val_fraction", s.train.validation_fraction);
  s.surrogate = c.count("surrogate", s.surrogate);
  if (c.has("victims")) s.victims = to_sizes(c.integers("victims", {}));
  s.r = c.real("r", s.r);
  s.bins = c.count("bins", s.bins);
  s.eps = c.real("eps", s.eps);
  s.attack_steps = c.count("attack_steps", s.attack_steps);
  s.momentum = c.real("momentum", s.momentum);
  s.q = c.count("q", s.q);
  s.esma_q = c.count("esma_q", s.esma_q);
  s.embed_dim = c.count("embed_dim", s.embed_dim);
  s.pretrain.steps = c.count("pretrain_steps", s.pretrain.steps);
  s.pretrain.optimizer.lr = c.real("pretrain_lr", s.pretrain.optimizer.lr);
  s.pretrain.lambda1 = c.real("lambda1", s.pretrain.lambda1);
  s.pretrain.lambda2 = c.real("lambda2", s.pretrain.lambda2);
  s.generator.hidden = c.count("gen_hidden", s.generator.hidden);
  s.generator.blocks = c.count("gen_blocks", s.generator.blocks);
  s.gen_epochs = c.count("gen_epochs", s.gen_epochs);
  s.gen_lr = c.real("gen_lr", s.gen_lr);
  if (c.has("q_values")) s.q_values = parse_q_values(c.text("q_values", ""));
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Shared setup

namespace {

std::uint64_t widths_hash(const std::vector<std::size_t>& widths) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (std::size_t w : widths) h = mix_seed(h ^ static_cast<std::uint64_t>(w));
  return h;
}

std::string arch_label(const ExperimentSettings& s, std::size_t i) {
  return join_widths(s.architectures[i].widths(2, s.classes), '-');
}

std::vector<std::pair<std::string, std::string>> config_echo(const ExperimentSettings& s) {
  const auto c = to_config(s);
  return {c.values().begin(), c.values().end()};
}

Table bin_table(std::string name, std::string value_column) {
  return Table{std::move(name), {"seed", "bin_low", "bin_high", "count", value_column, "stddev"}, {}};
}

void add_bins(Table& t, std::uint64_t seed, std::span<const double> edges,
              std::span<const BinStat> stats) {
  for (std::size_t b = 0; b < stats.size(); ++b) {
    const auto& st = stats[b];
    t.add_row({static_cast<std::int64_t>(seed), edges[b], edges[b + 1],
               static_cast<std::int64_t>(st.count), st.empty() ? Cell{std::string()} : Cell{st.mean},
               st.empty() ? Cell{std::string()} : Cell{st.stddev}});
  }
}

std::vector<double> divide_by_max(std::vector<double> v) {
  const double mx = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  if (mx > 0.0) {
    for (double& x : v) x /= mx;
  }
  return v;
}

}  // namespace

MlpClassifier train_architecture(const ExperimentSettings& s, const Architecture& arch,
                                 const LabeledDataset& data, std::uint64_t seed) {
  const auto widths = arch.widths(data.dim(), data.num_classes);
  const std::uint64_t base = derive_seed(seed, widths_hash(widths));
  auto model = MlpClassifier::initialize(widths, derive_seed(base, "init"));
  TrainConfig cfg = s.train;
  cfg.seed = derive_seed(base, "sgd");
  return early_stop_train(std::move(model), data, cfg).model;
}

SeedRun prepare_seed(const ExperimentSettings& s, std::uint64_t seed,
                     std::span<const std::size_t> which_models) {
  SeedRun run;
  run.seed = seed;
  run.train = gen_gaussian_mixture(s.spec(derive_seed(seed, "train-data"), s.samples));
  run.eval = gen_gaussian_mixture(s.spec(derive_seed(seed, "eval-data"), s.eval_samples));
  run.models.resize(s.architectures.size());
  for (std::size_t i : which_models) {
    if (run.models[i].layers().empty()) {
      run.models[i] = train_architecture(s, s.architectures[i], run.train, seed);
    }
  }
  return run;
}

SeedRun prepare_seed(const ExperimentSettings& s, std::uint64_t seed) {
  std::vector<std::size_t> all(s.architectures.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return prepare_seed(s, seed, all);
}

namespace {

std::vector<std::size_t> surrogate_and_victims(const ExperimentSettings& s) {
  std::vector<std::size_t> out{s.surrogate};
  out.insert(out.end(), s.victims.begin(), s.victims.end());
  return out;
}

std::vector<double> class_densities(const DensityIndex& index, const LabeledDataset& data, double r) {
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out[i] = local_density(index, data.labels[i], data.points.row(i), r).density;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Consistency

ConsistencyOutcome consistency_experiment(const ExperimentSettings& s) {
  s.validate();
  if (s.architectures.size() < 2) throw InvalidConfig("consistency: need at least two models");
  ConsistencyOutcome out;
  out.report.id = "consistency";
  out.report.config = config_echo(s);
  out.report.seeds = s.seeds;
  Table samples{"consistency_samples", {"seed", "sample_id", "class", "density", "output_diff"}, {}};
  Table bins = bin_table("consistency_bins", "mean_output_diff");
  Table summary{"consistency_summary", {"seed", "top_tercile", "bottom_tercile", "holds"}, {}};

  for (std::uint64_t seed : s.seeds) {
    const SeedRun run = prepare_seed(s, seed);
    const DensityIndex index(run.train);
    const auto density = class_densities(index, run.train, s.r);
    std::vector<Tensor2> probs;
    for (const auto& m : run.models) {
      Tensor2 logits = forward(m, run.train.points);
      for (std::size_t i = 0; i < logits.rows; ++i) {
        const auto p = softmax(logits.row(i));
        std::copy(p.begin(), p.end(), logits.row(i).begin());
      }
      probs.push_back(std::move(logits));
    }
    std::vector<double> diff(run.train.size(), 0.0);
    for (std::size_t i = 0; i < diff.size(); ++i) {
      for (std::size_t a = 0; a < probs.size(); ++a) {
        for (std::size_t b = a + 1; b < probs.size(); ++b) {
          for (std::size_t c = 0; c < probs[a].cols; ++c) {
            diff[i] = std::max(diff[i], std::abs(probs[a](i, c) - probs[b](i, c)));
          }
        }
      }
      samples.add_row({static_cast<std::int64_t>(seed), static_cast<std::int64_t>(i),
                       static_cast<std::int64_t>(run.train.labels[i]), density[i], diff[i]});
    }
    const auto edges = uniform_edges(0.0, 1.0, s.bins);
    add_bins(bins, seed, edges, binned_statistic(diff, divide_by_max(density), edges));
    const auto t = tercile_means(diff, density);
    ConsistencySeed cs{seed, t.top, t.bottom};
    summary.add_row({static_cast<std::int64_t>(seed), cs.top_tercile, cs.bottom_tercile,
                     static_cast<std::int64_t>(cs.holds())});
    out.seeds.push_back(cs);
  }
  out.report.tables = {std::move(samples), std::move(bins), std::move(summary)};
  return out;
}

// ---------------------------------------------------------------------------
// Difficulty

DifficultyOutcome difficulty_experiment(const ExperimentSettings& s) {
  s.validate();
  DifficultyOutcome out;
  out.report.id = "difficulty";
  out.report.config = config_echo(s);
  out.report.seeds = s.seeds;
  Table samples{"sample_scores",
                {"seed", "sample_id", "class", "density", "loss", "gradnorm", "difficulty",
                 "local_risk"},
                {}};
  Table risk_by_difficulty = bin_table("risk_by_difficulty", "mean_local_risk");
  Table risk_by_density = bin_table("risk_by_density", "mean_local_risk");
  Table density_by_difficulty = bin_table("density_by_difficulty", "mean_density");
  Table summary{"difficulty_summary",
                {"seed", "spearman_density_risk", "spearman_difficulty_density",
                 "spearman_difficulty_risk"},
                {}};

  const std::size_t which[] = {s.surrogate};
  for (std::uint64_t seed : s.seeds) {
    const SeedRun run = prepare_seed(s, seed, which);
    const MlpClassifier& model = run.models[s.surrogate];
    const DensityIndex index(run.train);
    const auto density = class_densities(index, run.train, s.r);
    const auto scores = score_samples(model, run.train);
    const auto difficulty = normalized_difficulty(scores);
    std::vector<double> risk(run.train.size());
    for (std::size_t i = 0; i < risk.size(); ++i) {
      risk[i] = local_empirical_risk(model, index, run.train.labels[i], run.train.points.row(i), s.r);
      samples.add_row({static_cast<std::int64_t>(seed), static_cast<std::int64_t>(i),
                       static_cast<std::int64_t>(run.train.labels[i]), density[i], scores[i].loss,
                       scores[i].gradnorm, difficulty[i], risk[i]});
    }
    const auto unit = uniform_edges(0.0, 1.0, s.bins);
    const auto two = uniform_edges(0.0, 2.0, s.bins);
    const auto norm_density = divide_by_max(density);
    add_bins(risk_by_difficulty, seed, two, binned_statistic(risk, difficulty, two));
    add_bins(risk_by_density, seed, unit, binned_statistic(risk, norm_density, unit));
    add_bins(density_by_difficulty, seed, two, binned_statistic(density, difficulty, two));
    DifficultySeed ds{seed, spearman(density, risk), spearman(difficulty, density),
                      spearman(difficulty, risk)};
    summary.add_row({static_cast<std::int64_t>(seed), ds.spearman_density_risk,
                     ds.spearman_difficulty_density, ds.spearman_difficulty_risk});
    out.seeds.push_back(ds);
  }
  out.report.tables = {std::move(samples), std::move(risk_by_difficulty), std::move(risk_by_density),
                       std::move(density_by_difficulty), std::move(summary)};
  return out;
}

// ---------------------------------------------------------------------------
// Attacks

std::string method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::ce: return "ce";
    case AttackMethod::random_anchor: return "random-anchor";
    case AttackMethod::screened_anchor: return "screened-anchor";
    case AttackMethod::esma: return "esma";
  }
  return "ce";
}

AttackMethod parse_method(const std::string& name) {
  for (auto m : {AttackMethod::ce, AttackMethod::random_anchor, AttackMethod::screened_anchor,
                 AttackMethod::esma}) {
    if (method_name(m) == name) return m;
  }
  throw InvalidConfig("unknown attack method '" + name + "'");
}

namespace {

void add_attack_rows(Table& t, std::uint64_t seed, AttackMethod m, const ExperimentSettings& s,
                     const AttackResult& result, std::span<const MlpClassifier> victims,
                     std::span<const std::size_t> victim_ids) {
  const auto flags = success_flags(victims, result);
  for (std::size_t v = 0; v < victims.size(); ++v) {
    for (std::size_t i = 0; i < result.requests.size(); ++i) {
      const auto& rq = result.requests[i];
      t.add_row({static_cast<std::int64_t>(seed), method_name(m),
                 static_cast<std::int64_t>(rq.sample_id), static_cast<std::int64_t>(rq.source),
                 static_cast<std::int64_t>(rq.target), arch_label(s, victim_ids[v]),
                 static_cast<std::int64_t>(flags[v][i]),
                 result.final_objective.empty() ? Cell{std::string()} : Cell{result.final_objective[i]}});
    }
  }
}

Table attack_sample_table() {
  return Table{"attack_samples",
               {"seed", "method", "sample_id", "source_class", "target_class", "victim", "success",
                "final_objective"},
               {}};
}

std::vector<MlpClassifier> pick(const SeedRun& run, std::span<const std::size_t> ids) {
  std::vector<MlpClassifier> out;
  for (std::size_t i : ids) out.push_back(run.models[i]);
  return out;
}

}  // namespace

Table1Outcome table1_protocol(const ExperimentSettings& s) {
  s.validate();
  Table1Outcome out;
  out.report.id = "table1";
  out.report.config = config_echo(s);
  out.report.seeds = s.seeds;
  Table rates{"transfer_rates", {"seed", "method", "victim", "black_box", "rate"}, {}};
  Table attack_rows = attack_sample_table();
  Table anchors{"anchor_book",
                {"seed", "class", "members", "fallback", "thr_loss", "thr_gradnorm"}, {}};
  Table summary{"table1_summary",
                {"seed", "ce", "random_anchor", "screened_anchor", "ce_white", "random_white",
                 "screened_white", "chain_holds"},
                {}};

  const auto ids = surrogate_and_victims(s);
  for (std::uint64_t seed : s.seeds) {
    const SeedRun run = prepare_seed(s, seed, ids);
    const MlpClassifier& surrogate = run.models[s.surrogate];
    const auto victims = pick(run, s.victims);
    const AnchorBook book = build_anchor_book(surrogate, run.train, s.q);
    for (std::size_t k = 0; k < book.num_classes(); ++k) {
      anchors.add_row({static_cast<std::int64_t>(seed), static_cast<std::int64_t>(k),
                       static_cast<std::int64_t>(book.sets[k].members.size()),
                       static_cast<std::int64_t>(book.sets[k].fallback), book.thresholds[k].loss,
                       book.thresholds[k].gradnorm});
    }
    const auto requests = all_target_requests(run.eval);
    Table1Seed ts;
    ts.seed = seed;
    for (auto m : {AttackMethod::ce, AttackMethod::random_anchor, AttackMethod::screened_anchor}) {
      const AttackLoss loss = m == AttackMethod::ce ? AttackLoss::ce_targeted : AttackLoss::anchor_sq;
      const AnchorSource src =
          m == AttackMethod::random_anchor ? AnchorSource::random_member : AnchorSource::screened;
      const auto result = run_attack(surrogate, run.eval.points, requests,
                                     s.attack_config(loss, src), &book, &run.train,
                                     derive_seed(seed, "table1"));
      const auto black = transfer_success_rate(victims, result);
      const std::vector<MlpClassifier> self{surrogate};
      const double white = transfer_success_rate(self, result).front();
      for (std::size_t v = 0; v < victims.size(); ++v) {
        rates.add_row({static_cast<std::int64_t>(seed), method_name(m),
                       arch_label(s, s.victims[v]), std::int64_t{1}, black[v]});
      }
      rates.add_row({static_cast<std::int64_t>(seed), method_name(m), arch_label(s, s.surrogate),
                     std::int64_t{0}, white});
      add_attack_rows(attack_rows, seed, m, s, result, victims, s.victims);
      const double mb = mean(black);
      if (m == AttackMethod::ce) {
        ts.ce = mb;
        ts.ce_white = white;
      } else if (m == AttackMethod::random_anchor) {
        ts.random_anchor = mb;
        ts.random_white = white;
      } else {
        ts.screened_anchor = mb;
        ts.screened_white = white;
      }
    }
    summary.add_row({static_cast<std::int64_t>(seed), ts.ce, ts.random_anchor, ts.screened_anchor,
                     ts.ce_white, ts.random_white, ts.screened_white,
                     static_cast<std::int64_t>(ts.chain_holds())});
    out.seeds.push_back(ts);
  }
  out.report.tables = {std::move(rates), std::move(attack_rows), std::move(anchors),
                       std::move(summary)};
  return out;
}

DensityShift density_shift_eval(const LabeledDataset& reference, const AttackResult& result,
                                double r, std::size_t bins) {
  if (bins < 1) throw InvalidInput("density_shift_eval: bins must be >= 1");
  if (result.clean.rows != result.requests.size() || result.adversarial.rows != result.requests.size()) {
    throw InvalidInput("density_shift_eval: result rows disagree with requests");
  }
  const DensityIndex index(reference);
  // Average over each sample's targets, keeping samples in first-seen order.
  std::vector<std::size_t> order;
  std::vector<double> clean_sum, adv_sum;
  std::vector<std::size_t> counts;
  std::vector<std::size_t> slot_of;
  for (std::size_t i = 0; i < result.requests.size(); ++i) {
    const auto& rq = result.requests[i];
    if (rq.sample_id >= slot_of.size()) slot_of.resize(rq.sample_id + 1, SIZE_MAX);
    if (slot_of[rq.sample_id] == SIZE_MAX) {
      slot_of[rq.sample_id] = order.size();
      order.push_back(rq.sample_id);
      clean_sum.push_back(0.0);
      adv_sum.push_back(0.0);
      counts.push_back(0);
    }
    const std::size_t s = slot_of[rq.sample_id];
    clean_sum[s] += local_density(index, rq.target, result.clean.row(i), r).density;
    adv_sum[s] += local_density(index, rq.target, result.adversarial.row(i), r).density;
    ++counts[s];
  }
  std::vector<double> clean(order.size()), adv(order.size());
  double mx = 0.0;
  for (std::size_t s = 0; s < order.size(); ++s) {
    clean[s] = clean_sum[s] / static_cast<double>(counts[s]);
    adv[s] = adv_sum[s] / static_cast<double>(counts[s]);
    mx = std::max({mx, clean[s], adv[s]});
  }
  DensityShift out;
  out.clean_mean = mean(clean);
  out.adversarial_mean = mean(adv);
  out.edges = uniform_edges(0.0, 1.0, bins);
  out.clean_counts.assign(bins, 0);
  out.adversarial_counts.assign(bins, 0);
  const std::size_t upper_bin = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(bins)));
  auto place = [&](double v, std::vector<std::size_t>& c, std::size_t& upper) {
    const double key = mx > 0.0 ? v / mx : 0.0;
    const auto b = static_cast<std::size_t>(bin_of(key, out.edges));
    ++c[b];
    if (b >= upper_bin) ++upper;
  };
  for (std::size_t s = 0; s < order.size(); ++s) {
    place(clean[s], out.clean_counts, out.clean_upper);
    place(adv[s], out.adversarial_counts, out.adversarial_upper);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generator

EsmaArtifacts train_esma_for(const ExperimentSettings& s, const MlpClassifier& surrogate,
                             const LabeledDataset& data, std::uint64_t seed) {
  EsmaArtifacts a;
  a.book = build_anchor_book(surrogate, data, s.esma_q);
  const auto prototypes = class_prototypes(surrogate, data);
  auto init = init_embeddings(data.num_classes, s.embed_dim, derive_seed(seed, "embedding"));
  a.embeddings = pretrain_embeddings(std::move(init), prototypes, s.pretrain).table;
  GeneratorConfig gc = s.generator;
  gc.geometry = InputGeometry::flat(data.dim());
  auto g = PerturbationGenerator::initialize(gc, a.embeddings, derive_seed(seed, "generator"));
  EsmaTrainConfig tc;
  tc.epochs = s.gen_epochs;
  tc.optimizer.lr = s.gen_lr;
  tc.budget.epsilon = s.eps;
  tc.seed = derive_seed(seed, "esma-train");
  a.trained = train_esma(std::move(g), surrogate, data, a.book, tc);
  return a;
}

AttackResult run_generator(const PerturbationGenerator& g, const MlpClassifier& surrogate,
                           const Tensor2& points, std::span<const AttackRequest> requests,
                           const PerturbationBudget& budget) {
  AttackResult out;
  out.requests.assign(requests.begin(), requests.end());
  out.clean = Tensor2(requests.size(), points.cols);
  out.adversarial = Tensor2(requests.size(), points.cols);
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto x = points.row(requests[i].sample_id);
    const auto adv = generate_adversarial(g, x, requests[i].target, budget);
    std::copy(x.begin(), x.end(), out.clean.row(i).begin());
    std::copy(adv.begin(), adv.end(), out.adversarial.row(i).begin());
    const auto z = forward_point(surrogate, adv);
    out.final_objective.push_back(softmax_ce(z, requests[i].target));
  }
  return out;
}

std::size_t budget_violations(const AttackResult& result, double epsilon, DataRange range) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < result.adversarial.rows; ++i) {
    const auto a = result.adversarial.row(i);
    const auto x = result.clean.row(i);
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (!std::isfinite(a[j]) || std::abs(a[j] - x[j]) > epsilon + 1e-9 || a[j] < range.low ||
          a[j] > range.high) {
        ++bad;
        break;
      }
    }
  }
  return bad;
}

EsmaOutcome esma_experiment(const ExperimentSettings& s) {
  s.validate();
  EsmaOutcome out;
  out.report.id = "esma";
  out.report.config = config_echo(s);
  out.report.seeds = s.seeds;
  Table rates{"transfer_rates", {"seed", "method", "victim", "black_box", "rate"}, {}};
  Table attack_rows = attack_sample_table();
  Table trace{"esma_training", {"seed", "epoch", "loss"}, {}};
  Table shift{"density_shift",
              {"seed", "method", "bin_low", "bin_high", "clean_count", "adversarial_count"}, {}};
  Table summary{"esma_summary",
                {"seed", "esma", "screened_anchor", "esma_white", "emitted", "budget_violations",
                 "clean_upper", "adversarial_upper", "beats_iterative"},
                {}};

  const auto ids = surrogate_and_victims(s);
  for (std::uint64_t seed : s.seeds) {
    const SeedRun run = prepare_seed(s, seed, ids);
    const MlpClassifier& surrogate = run.models[s.surrogate];
    const auto victims = pick(run, s.victims);
    const auto art = train_esma_for(s, surrogate, run.train, seed);
    for (std::size_t e = 0; e < art.trained.epoch_loss.size(); ++e) {
      trace.add_row({static_cast<std::int64_t>(seed), static_cast<std::int64_t>(e + 1),
                     art.trained.epoch_loss[e]});
    }
    const auto requests = all_target_requests(run.eval);
    PerturbationBudget budget;
    budget.epsilon = s.eps;
    const auto generated = run_generator(art.trained.generator, surrogate, run.eval.points, requests, budget);
    const auto iterative = run_attack(surrogate, run.eval.points, requests,
                                      s.attack_config(AttackLoss::anchor_sq, AnchorSource::screened),
                                      &art.book, &run.train, derive_seed(seed, "esma-iterative"));

    EsmaSeed es;
    es.seed = seed;
    const auto esma_rates = transfer_success_rate(victims, generated);
    const auto iter_rates = transfer_success_rate(victims, iterative);
    es.esma = mean(esma_rates);
    es.iterative = mean(iter_rates);
    const std::vector<MlpClassifier> self{surrogate};
    es.esma_white = transfer_success_rate(self, generated).front();
    es.emitted = generated.adversarial.rows + iterative.adversarial.rows;
    es.budget_violations = budget_violations(generated, s.eps, budget.range) +
                           budget_violations(iterative, s.eps, budget.range);
    if (!art.trained.epoch_loss.empty()) {
      es.first_epoch_loss = art.trained.epoch_loss.front();
      es.last_epoch_loss = art.trained.epoch_loss.back();
    }
    es.shift = density_shift_eval(run.train, generated, s.r, s.bins);
    const auto iter_shift = density_shift_eval(run.train, iterative, s.r, s.bins);

    for (std::size_t v = 0; v < victims.size(); ++v) {
      rates.add_row({static_cast<std::int64_t>(seed), method_name(AttackMethod::esma),
                     arch_label(s, s.victims[v]), std::int64_t{1}, esma_rates[v]});
      rates.add_row({static_cast<std::int64_t>(seed), method_name(AttackMethod::screened_anchor),
                     arch_label(s, s.victims[v]), std::int64_t{1}, iter_rates[v]});
    }
    add_attack_rows(attack_rows, seed, AttackMethod::esma, s, generated, victims, s.victims);
    add_attack_rows(attack_rows, seed, AttackMethod::screened_anchor, s, iterative, victims, s.victims);
    const std::pair<AttackMethod, const DensityShift*> shifts[] = {
        {AttackMethod::esma, &es.shift}, {AttackMethod::screened_anchor, &iter_shift}};
    for (const auto& [m, ds] : shifts) {
      for (std::size_t b = 0; b < ds->clean_counts.size(); ++b) {
        shift.add_row({static_cast<std::int64_t>(seed), method_name(m), ds->edges[b],
                       ds->edges[b + 1], static_cast<std::int64_t>(ds->clean_counts[b]),
                       static_cast<std::int64_t>(ds->adversarial_counts[b])});
      }
    }
    summary.add_row({static_cast<std::int64_t>(seed), es.esma, es.iterative, es.esma_white,
                     static_cast<std::int64_t>(es.emitted),
                     static_cast<std::int64_t>(es.budget_violations),
                     static_cast<std::int64_t>(es.shift.clean_upper),
                     static_cast<std::int64_t>(es.shift.adversarial_upper),
                     static_cast<std::int64_t>(es.beats_iterative())});
    out.seeds.push_back(es);
  }
  out.report.tables = {std::move(rates), std::move(attack_rows), std::move(trace), std::move(shift),
                       std::move(summary)};
  return out;
}

// ---------------------------------------------------------------------------
// q ablation

QAblationOutcome q_ablation(const ExperimentSettings& s) {
  s.validate();
  QAblationOutcome out;
  out.report.id = "qablation";
  out.report.config = config_echo(s);
  out.report.seeds = s.seeds;
  Table per_q{"q_similarity", {"seed", "q", "screened", "mean_similarity", "stddev_similarity"}, {}};

  const auto ids = surrogate_and_victims(s);
  for (std::uint64_t seed : s.seeds) {
    const SeedRun run = prepare_seed(s, seed, ids);
    const MlpClassifier& surrogate = run.models[s.surrogate];
    const Tensor2 source = forward(surrogate, run.train.points);
    std::vector<Tensor2> targets;
    for (std::size_t v : s.victims) targets.push_back(forward(run.models[v], run.train.points));
    std::vector<double> similarity(run.train.size());
    for (std::size_t i = 0; i < similarity.size(); ++i) {
      double acc = 0.0;
      for (const auto& t : targets) acc += cosine_similarity(source.row(i), t.row(i));
      similarity[i] = acc / static_cast<double>(targets.size());
    }
    const auto scores = score_samples(surrogate, run.train);
    QAblationSeed qs;
    qs.seed = seed;
    for (std::uint64_t q : s.q_values) {
      std::vector<double> chosen;
      if (q == 0) {
        chosen = similarity;
      } else {
        const auto thr = thresholds(scores, run.train.num_classes, q);
        for (const auto& set : screen(scores, thr, q)) {
          for (std::size_t id : set.members) chosen.push_back(similarity[id]);
        }
      }
      qs.mean.push_back(mean(chosen));
      qs.stddev.push_back(stddev(chosen));
      per_q.add_row({static_cast<std::int64_t>(seed), q == 0 ? Cell{std::string("all")} : Cell{std::to_string(q)},
                     static_cast<std::int64_t>(chosen.size()), qs.mean.back(), qs.stddev.back()});
    }
    out.seeds.push_back(std::move(qs));
  }
  out.report.tables = {std::move(per_q)};
  return out;
}

}  // namespace esma
