#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "esma/attacks.hpp"
#include "esma/checkpoint.hpp"
#include "esma/config.hpp"
#include "esma/csvio.hpp"
#include "esma/data.hpp"
#include "esma/density.hpp"
#include "esma/embedding.hpp"
#include "esma/errors.hpp"
#include "esma/experiments.hpp"
#include "esma/generator.hpp"
#include "esma/report.hpp"
#include "esma/rng.hpp"
#include "esma/screening.hpp"
#include "esma/textio.hpp"
#include "esma/train.hpp"

namespace fs = std::filesystem;
using namespace esma;

namespace {

struct Key {
  std::string name;
  std::string fallback;  // empty means required
  std::string help;
};

using Runner = std::function<void(const KeyValueConfig&, const fs::path&)>;

struct Command {
  std::string name;
  std::string help;
  std::vector<Key> keys;
  Runner run;
};

std::string required(const KeyValueConfig& c, const std::string& key) {
  const std::string v = c.text(key, "");
  if (v.empty()) throw InvalidConfig("missing required setting --" + key);
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_table(const fs::path& out, const Table& t) {
  std::ofstream os(out / (t.name + ".csv"));
  if (!os) throw FormatError("cannot write " + (out / (t.name + ".csv")).string());
  write_csv(os, t);
}

std::vector<std::size_t> parse_hidden(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string w;
  while (std::getline(ss, w, '-')) out.push_back(parse_count(w));
  return out;
}

LearningRate schedule(const KeyValueConfig& c) {
  const double scale = c.real("lr", 0.5);
  const std::string kind = c.text("lr_schedule", "inverse_sqrt");
  if (kind == "constant") return LearningRate::constant(scale);
  if (kind == "inverse_t") return LearningRate::inverse_t(scale);
  if (kind == "inverse_sqrt") return LearningRate::inverse_sqrt(scale);
  throw InvalidConfig("lr_schedule: expected constant, inverse_t or inverse_sqrt");
}

std::uint64_t single_seed(const KeyValueConfig& c) { return c.integers("seed", {0}).front(); }

// ---------------------------------------------------------------------------

void run_gen_data(const KeyValueConfig& c, const fs::path& out) {
  const std::size_t classes = c.count("classes", 2);
  const double offset = c.real("offset", 1.5);
  const std::size_t n = c.count("samples", 200);
  const std::uint64_t seed = single_seed(c);
  GaussianMixtureSpec spec;
  if (classes == 2) {
    spec = GaussianMixtureSpec::two_gaussians(offset, n, seed);
  } else if (classes == 3) {
    spec = GaussianMixtureSpec::three_gaussians(offset, n, seed);
  } else {
    throw InvalidConfig("classes must be 2 or 3");
  }
  write_dataset_csv(out / "data.csv", gen_gaussian_mixture(spec));
}

void run_train(const KeyValueConfig& c, const fs::path& out) {
  const auto data = read_dataset_csv(fs::path(required(c, "data")));
  std::vector<std::size_t> widths{data.dim()};
  for (std::size_t w : parse_hidden(c.text("arch", "50-100-150"))) widths.push_back(w);
  widths.push_back(data.num_classes);
  const std::uint64_t seed = single_seed(c);
  TrainConfig tc;
  tc.batch_size = c.count("batch", 32);
  tc.total_steps = c.count("steps", 3000);
  tc.lr = schedule(c);
  tc.early_stop_tolerance = c.count("tolerance", 30);
  tc.validation_fraction = c.real("val_fraction", 0.2);
  tc.seed = derive_seed(seed, "sgd");
  auto model = MlpClassifier::initialize(widths, derive_seed(seed, "init"));
  const bool early = c.count("early_stop", 1) != 0;
  const TrainResult r = early ? early_stop_train(std::move(model), data, tc)
                              : sgd_train(std::move(model), data, tc);
  save_model(out / "model.txt", r.model);
  Table trace{"loss_trace", {"step", "loss"}, {}};
  for (std::size_t t = 0; t < r.loss_trace.size(); ++t) {
    trace.add_row({static_cast<std::int64_t>(t + 1), r.loss_trace[t]});
  }
  write_table(out, trace);
  if (early) {
    Table val{"validation_trace", {"evaluation", "loss"}, {}};
    for (std::size_t t = 0; t < r.validation_trace.size(); ++t) {
      val.add_row({static_cast<std::int64_t>(t), r.validation_trace[t]});
    }
    write_table(out, val);
  }
  std::cout << "trained " << r.loss_trace.size() << " steps, best step " << r.best_step << '\n';
}

void run_screen(const KeyValueConfig& c, const fs::path& out) {
  const auto data = read_dataset_csv(fs::path(required(c, "data")));
  const auto model = load_model(fs::path(required(c, "model")));
  const std::size_t q = c.count("q", 10);
  const double r = c.real("r", 0.4);
  const auto cmp = c.count("strict", 1) ? Comparison::strict : Comparison::non_strict;
  const AnchorBook book = build_anchor_book(model, data, q, cmp);
  save_anchor_book(out / "anchor_book.json", book);

  const auto scores = score_samples(model, data);
  const auto difficulty = normalized_difficulty(scores);
  const DensityIndex index(data);
  Table t{"sample_scores", {"sample_id", "class", "density", "loss", "gradnorm", "difficulty"}, {}};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double rho = local_density(index, data.labels[i], data.points.row(i), r).density;
    t.add_row({static_cast<std::int64_t>(i), static_cast<std::int64_t>(scores[i].label), rho,
               scores[i].loss, scores[i].gradnorm, difficulty[i]});
  }
  write_table(out, t);
  for (std::size_t k = 0; k < book.num_classes(); ++k) {
    std::cout << "class " << k << ": " << book.sets[k].members.size() << " anchors"
              << (book.sets[k].fallback ? " (fallback)" : "") << '\n';
  }
}

Table pairwise_table(const std::string& name, const Tensor2& vectors) {
  const auto m = pairwise_matrices(vectors);
  Table t{name, {"i", "j", "euclidean", "cosine"}, {}};
  for (std::size_t i = 0; i < vectors.rows; ++i) {
    for (std::size_t j = 0; j < vectors.rows; ++j) {
      t.add_row({static_cast<std::int64_t>(i), static_cast<std::int64_t>(j), m.euclidean(i, j),
                 m.cosine(i, j)});
    }
  }
  return t;
}

void run_pretrain(const KeyValueConfig& c, const fs::path& out) {
  const auto data = read_dataset_csv(fs::path(required(c, "data")));
  const auto model = load_model(fs::path(required(c, "model")));
  PretrainConfig pc;
  pc.steps = c.count("steps", pc.steps);
  pc.optimizer.lr = c.real("lr", pc.optimizer.lr);
  pc.lambda1 = c.real("lambda1", pc.lambda1);
  pc.lambda2 = c.real("lambda2", pc.lambda2);
  const auto prototypes = class_prototypes(model, data);
  auto init = init_embeddings(data.num_classes, c.count("embed_dim", 32),
                              derive_seed(single_seed(c), "embedding"));
  const Tensor2 before = init.rows;
  const auto r = pretrain_embeddings(std::move(init), prototypes, pc);
  save_embeddings(out / "embeddings.txt", r.table);

  Table trace{"pretrain_trace", {"step", "loss"}, {}};
  for (std::size_t t = 0; t < r.loss_trace.size(); ++t) {
    trace.add_row({static_cast<std::int64_t>(t), r.loss_trace[t]});
  }
  write_table(out, trace);
  Table checks{"collapse_checks", {"step", "min_entry", "floor", "holds"}, {}};
  for (const auto& k : r.checks) {
    checks.add_row({static_cast<std::int64_t>(k.step), k.min_entry, k.floor,
                    static_cast<std::int64_t>(k.holds())});
  }
  write_table(out, checks);
  write_table(out, pairwise_table("prototype_pairwise", prototypes.means));
  write_table(out, pairwise_table("embedding_pairwise_initial", before));
  write_table(out, pairwise_table("embedding_pairwise", r.table.rows));
  std::cout << "manifold loss " << format_double(r.loss_trace.front()) << " -> "
            << format_double(r.loss_trace.back()) << '\n';
}

void run_attack_cmd(const KeyValueConfig& c, const fs::path& out) {
  const auto data = read_dataset_csv(fs::path(required(c, "data")));
  const auto surrogate = load_model(fs::path(required(c, "model")));
  const AttackMethod method = parse_method(c.text("method", "screened-anchor"));
  const double eps = c.real("eps", 0.5);
  const std::uint64_t seed = single_seed(c);
  const auto requests = all_target_requests(data);

  AttackResult result;
  if (method == AttackMethod::esma) {
    const auto g = load_generator(fs::path(required(c, "generator")));
    PerturbationBudget budget;
    budget.epsilon = eps;
    result = run_generator(g, surrogate, data.points, requests, budget);
  } else {
    AttackConfig ac;
    ac.epsilon = eps;
    ac.steps = c.count("steps", 20);
    ac.momentum = c.real("momentum", 1.0);
    ac.loss = method == AttackMethod::ce ? AttackLoss::ce_targeted : AttackLoss::anchor_sq;
    ac.anchor_source = method == AttackMethod::random_anchor ? AnchorSource::random_member
                                                             : AnchorSource::screened;
    AnchorBook book;
    if (method == AttackMethod::screened_anchor) book = load_anchor_book(fs::path(required(c, "anchors")));
    const std::string pool_path = c.text("pool", "");
    const LabeledDataset pool = pool_path.empty() ? data : read_dataset_csv(fs::path(pool_path));
    result = run_attack(surrogate, data.points, requests, ac, &book, &pool, seed);
    Table traces{"objective_traces", {"request", "step", "objective"}, {}};
    for (std::size_t i = 0; i < result.objective_traces.size(); ++i) {
      for (std::size_t t = 0; t < result.objective_traces[i].size(); ++t) {
        traces.add_row({static_cast<std::int64_t>(i), static_cast<std::int64_t>(t),
                        result.objective_traces[i][t]});
      }
    }
    write_table(out, traces);
  }
  write_attack_csv(out / "adversarial.csv", result);
  std::cout << method_name(method) << ": " << result.requests.size() << " adversarial points\n";
}

void run_train_esma(const KeyValueConfig& c, const fs::path& out) {
  const auto data = read_dataset_csv(fs::path(required(c, "data")));
  const auto surrogate = load_model(fs::path(required(c, "model")));
  const auto table = load_embeddings(fs::path(required(c, "embeddings")));
  const auto book = load_anchor_book(fs::path(required(c, "anchors")));
  const std::uint64_t seed = single_seed(c);
  GeneratorConfig gc;
  gc.geometry = InputGeometry::flat(data.dim());
  gc.hidden = c.count("hidden", 32);
  gc.blocks = c.count("blocks", 3);
  auto g = PerturbationGenerator::initialize(gc, table, derive_seed(seed, "generator"));
  EsmaTrainConfig tc;
  tc.epochs = c.count("epochs", 300);
  tc.optimizer.lr = c.real("lr", 1e-4);
  tc.budget.epsilon = c.real("eps", 0.5);
  tc.seed = derive_seed(seed, "esma-train");
  const auto r = train_esma(std::move(g), surrogate, data, book, tc);
  save_generator(out / "generator.txt", r.generator);
  Table trace{"esma_training", {"epoch", "loss"}, {}};
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    trace.add_row({static_cast<std::int64_t>(e + 1), r.epoch_loss[e]});
  }
  write_table(out, trace);
  if (!r.epoch_loss.empty()) {
    std::cout << "feature matching loss " << format_double(r.epoch_loss.front()) << " -> "
              << format_double(r.epoch_loss.back()) << '\n';
  }
}

void run_eval_transfer(const KeyValueConfig& c, const fs::path& out) {
  const auto result = read_attack_csv(fs::path(required(c, "attack")));
  const auto paths = split_list(required(c, "victims"));
  std::vector<MlpClassifier> victims;
  for (const auto& p : paths) victims.push_back(load_model(fs::path(p)));
  const auto flags = success_flags(victims, result);
  Table samples{"attack_samples",
                {"sample_id", "source_class", "target_class", "victim", "success", "final_objective"},
                {}};
  Table rates{"transfer_rates", {"victim", "rate"}, {}};
  for (std::size_t v = 0; v < victims.size(); ++v) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < result.requests.size(); ++i) {
      const auto& rq = result.requests[i];
      hits += flags[v][i];
      samples.add_row({static_cast<std::int64_t>(rq.sample_id), static_cast<std::int64_t>(rq.source),
                       static_cast<std::int64_t>(rq.target), paths[v],
                       static_cast<std::int64_t>(flags[v][i]),
                       result.final_objective.empty() ? Cell{std::string()}
                                                      : Cell{result.final_objective[i]}});
    }
    const double rate = result.requests.empty()
                            ? 0.0
                            : static_cast<double>(hits) / static_cast<double>(result.requests.size());
    rates.add_row({paths[v], rate});
    std::cout << paths[v] << ": " << format_double(rate) << '\n';
  }
  write_table(out, samples);
  write_table(out, rates);
}

void run_eval_density(const KeyValueConfig& c, const fs::path& out) {
  const auto result = read_attack_csv(fs::path(required(c, "attack")));
  const auto reference = read_dataset_csv(fs::path(required(c, "data")));
  const auto shift = density_shift_eval(reference, result, c.real("r", 0.4), c.count("bins", 10));
  Table t{"density_shift", {"bin_low", "bin_high", "clean_count", "adversarial_count"}, {}};
  for (std::size_t b = 0; b < shift.clean_counts.size(); ++b) {
    t.add_row({shift.edges[b], shift.edges[b + 1], static_cast<std::int64_t>(shift.clean_counts[b]),
               static_cast<std::int64_t>(shift.adversarial_counts[b])});
  }
  write_table(out, t);
  Table s{"density_shift_summary",
          {"clean_mean", "adversarial_mean", "clean_upper", "adversarial_upper"}, {}};
  s.add_row({shift.clean_mean, shift.adversarial_mean, static_cast<std::int64_t>(shift.clean_upper),
             static_cast<std::int64_t>(shift.adversarial_upper)});
  write_table(out, s);
  std::cout << "normalized density >= 0.6: clean " << shift.clean_upper << ", adversarial "
            << shift.adversarial_upper << '\n';
}

template <typename Outcome>
Runner experiment(Outcome (*fn)(const ExperimentSettings&)) {
  return [fn](const KeyValueConfig& c, const fs::path& out) {
    const ExperimentSettings s = from_config(c);
    const auto outcome = fn(s);
    write_report(out, outcome.report);
    for (const auto& t : outcome.report.tables) std::cout << "wrote " << t.name << ".csv\n";
  };
}

std::vector<Key> experiment_keys() {
  std::vector<Key> keys;
  const auto defaults = to_config(ExperimentSettings{});
  for (const auto& [k, v] : defaults.values()) keys.push_back({k, v, ""});
  return keys;
}

std::vector<Command> commands() {
  const Key seed{"seed", "0", "random seed"};
  return {
      {"gen-data", "sample a Gaussian mixture dataset",
       {seed, {"classes", "2", "2 or 3"}, {"offset", "1.5", "class mean distance from origin"},
        {"samples", "200", "sample count"}},
       run_gen_data},
      {"train", "train a classifier with early stopping",
       {{"data", "", "dataset csv"}, {"arch", "50-100-150", "hidden widths"}, seed,
        {"steps", "3000", "SGD steps"}, {"batch", "32", "batch size"}, {"lr", "0.5", "step size scale"},
        {"lr_schedule", "inverse_sqrt", "constant|inverse_t|inverse_sqrt"},
        {"tolerance", "30", "early stopping patience"}, {"val_fraction", "0.2", "held-out fraction"},
        {"early_stop", "1", "0 runs plain SGD"}},
       run_train},
      {"screen", "score samples and build the anchor book",
       {{"data", "", "dataset csv"}, {"model", "", "classifier checkpoint"}, {"q", "10", "order statistic"},
        {"r", "0.4", "density radius"}, {"strict", "1", "0 uses <= thresholds"}},
       run_screen},
      {"pretrain-embed", "pretrain class embeddings against class prototypes",
       {{"data", "", "dataset csv"}, {"model", "", "surrogate checkpoint"}, seed,
        {"steps", "15000", "optimizer steps"}, {"lr", "1.5e-05", "AdamW step size"},
        {"lambda1", "5", "cosine weight"}, {"lambda2", "0.01", "norm weight"},
        {"embed_dim", "32", "embedding width"}},
       run_pretrain},
      {"attack", "targeted attack on every (sample, other class) pair",
       {{"method", "screened-anchor", "ce|random-anchor|screened-anchor|esma"},
        {"data", "", "source samples csv"}, {"model", "", "surrogate checkpoint"},
        {"anchors", "-", "anchor book json (screened-anchor)"},
        {"pool", "-", "anchor pool csv (random-anchor; default: data)"},
        {"generator", "-", "generator checkpoint (esma)"}, {"eps", "0.5", "l-inf budget"},
        {"steps", "20", "attack iterations"}, {"momentum", "1", "momentum factor"}, seed},
       run_attack_cmd},
      {"train-esma", "train the class-conditional perturbation generator",
       {{"data", "", "training csv"}, {"model", "", "surrogate checkpoint"},
        {"embeddings", "", "pretrained embeddings"}, {"anchors", "", "anchor book json"}, seed,
        {"epochs", "300", "training epochs"}, {"lr", "0.0001", "AdamW step size"},
        {"eps", "0.5", "l-inf budget"}, {"hidden", "32", "hidden width"}, {"blocks", "3", "conditional blocks"}},
       run_train_esma},
      {"eval-transfer", "targeted success rate of an attack against victims",
       {{"attack", "", "adversarial csv"}, {"victims", "", "comma-separated checkpoints"}},
       run_eval_transfer},
      {"eval-density-shift", "binned target-class density before and after an attack",
       {{"attack", "", "adversarial csv"}, {"data", "", "reference dataset csv"}, {"r", "0.4", "radius"},
        {"bins", "10", "bin count"}},
       run_eval_density},
      {"exp-consistency", "output consistency against local density", experiment_keys(),
       experiment(consistency_experiment)},
      {"exp-difficulty", "local risk, density and sample difficulty", experiment_keys(),
       experiment(difficulty_experiment)},
      {"exp-table1", "CE / random-anchor / screened-anchor transfer comparison", experiment_keys(),
       experiment(table1_protocol)},
      {"exp-qablation", "output similarity of screened samples per q", experiment_keys(),
       experiment(q_ablation)},
      {"exp-esma", "generator training and transfer against the iterative attack", experiment_keys(),
       experiment(esma_experiment)},
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"esma: easy-sample anchors and targeted transfer attacks on toy data"};
  app.require_subcommand(1);
  const auto cmds = commands();
  struct Parsed {
    CLI::App* sub = nullptr;
    std::string config, out = ".";
    std::map<std::string, std::string> flags;
  };
  std::vector<Parsed> parsed(cmds.size());
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    auto* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    parsed[i].sub = sub;
    sub->add_option("--config", parsed[i].config, "key = value settings file");
    sub->add_option("--out", parsed[i].out, "output directory")->capture_default_str();
    for (const auto& k : cmds[i].keys) {
      std::string help = k.help;
      if (!k.fallback.empty()) help += (help.empty() ? "" : " ") + std::string("[") + k.fallback + "]";
      sub->add_option("--" + k.name, parsed[i].flags[k.name], help);
    }
  }
  CLI11_PARSE(app, argc, argv);

  for (std::size_t i = 0; i < cmds.size(); ++i) {
    if (!parsed[i].sub->parsed()) continue;
    const auto& cmd = cmds[i];
    try {
      KeyValueConfig cfg;
      for (const auto& k : cmd.keys) {
        if (!k.fallback.empty() && k.fallback != "-") cfg.set(k.name, k.fallback);
      }
      if (!parsed[i].config.empty()) {
        const auto file = KeyValueConfig::load(parsed[i].config);
        for (const auto& [key, value] : file.values()) {
          const bool known = std::any_of(cmd.keys.begin(), cmd.keys.end(),
                                         [&](const Key& k) { return k.name == key; });
          if (!known) throw InvalidConfig("config key '" + key + "' is not used by " + cmd.name);
          cfg.set(key, value);
        }
      }
      for (const auto& k : cmd.keys) {
        if (parsed[i].sub->count("--" + k.name)) cfg.set(k.name, parsed[i].flags[k.name]);
      }
      const fs::path out(parsed[i].out);
      fs::create_directories(out);
      cfg.save(out / "config.txt");
      cmd.run(cfg, out);
    } catch (const std::exception& e) {
      std::cerr << cmd.name << ": " << e.what() << '\n';
      return 2;
    }
  }
  return 0;
}
