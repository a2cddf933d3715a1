#include "esma/screening.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "esma/errors.hpp"
#include "esma/loss.hpp"

namespace esma {

std::vector<SampleScore> score_samples(const MlpClassifier& model, const LabeledDataset& data) {
  data.validate();
  const auto lg = backward(model, data.points, data.labels, GradientParts::inputs);
  const Tensor2 logits = forward(model, data.points);
  std::vector<SampleScore> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out[i].sample_id = i;
    out[i].label = data.labels[i];
    out[i].loss = softmax_ce(logits.row(i), data.labels[i]);
    double s = 0.0;
    for (double g : lg.grads.input.row(i)) s += g * g;
    out[i].gradnorm = std::sqrt(s);
  }
  return out;
}

std::vector<ClassThreshold> thresholds(std::span<const SampleScore> scores,
                                       std::size_t num_classes, std::size_t q) {
  std::vector<std::vector<double>> losses(num_classes), grads(num_classes);
  for (const auto& s : scores) {
    if (s.label >= num_classes) throw InvalidInput("thresholds: label out of range");
    losses[s.label].push_back(s.loss);
    grads[s.label].push_back(s.gradnorm);
  }
  std::vector<ClassThreshold> out(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (q < 1 || q > losses[k].size()) {
      throw InvalidConfig("thresholds: q must lie in [1, smallest class size]");
    }
    const auto nth = static_cast<std::ptrdiff_t>(q - 1);
    std::nth_element(losses[k].begin(), losses[k].begin() + nth, losses[k].end());
    std::nth_element(grads[k].begin(), grads[k].begin() + nth, grads[k].end());
    out[k] = {losses[k][q - 1], grads[k][q - 1]};
  }
  return out;
}

std::vector<double> normalized_difficulty(std::span<const SampleScore> scores) {
  if (scores.size() < 2) throw InvalidInput("normalized_difficulty: need at least 2 samples");
  auto normalize = [&](auto get) {
    double lo = get(scores[0]), hi = lo;
    for (const auto& s : scores) {
      lo = std::min(lo, get(s));
      hi = std::max(hi, get(s));
    }
    std::vector<double> v(scores.size(), 0.0);
    if (hi > lo) {
      for (std::size_t i = 0; i < scores.size(); ++i) v[i] = (get(scores[i]) - lo) / (hi - lo);
    }
    return v;
  };
  const auto l = normalize([](const SampleScore& s) { return s.loss; });
  const auto g = normalize([](const SampleScore& s) { return s.gradnorm; });
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = l[i] + g[i];
  return out;
}

std::vector<ScreenedSet> screen(std::span<const SampleScore> scores,
                                std::span<const ClassThreshold> thr, std::size_t q,
                                Comparison cmp) {
  const std::size_t num_classes = thr.size();
  std::vector<ScreenedSet> out(num_classes);
  auto passes = [cmp](double v, double t) { return cmp == Comparison::strict ? v < t : v <= t; };
  for (const auto& s : scores) {
    if (s.label >= num_classes) throw InvalidInput("screen: label out of range");
    const auto& t = thr[s.label];
    if (passes(s.loss, t.loss) && passes(s.gradnorm, t.gradnorm)) {
      out[s.label].members.push_back(s.sample_id);
    }
  }
  const bool any_empty =
      std::any_of(out.begin(), out.end(), [](const ScreenedSet& a) { return a.members.empty(); });
  if (any_empty) {
    std::vector<double> difficulty(scores.size(), 0.0);
    if (scores.size() >= 2) difficulty = normalized_difficulty(scores);
    for (std::size_t k = 0; k < num_classes; ++k) {
      if (!out[k].members.empty()) continue;
      std::vector<std::size_t> pos;  // positions into `scores`
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i].label == k) pos.push_back(i);
      }
      std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
        if (difficulty[a] != difficulty[b]) return difficulty[a] < difficulty[b];
        return scores[a].sample_id < scores[b].sample_id;
      });
      pos.resize(std::min(q, pos.size()));
      for (std::size_t p : pos) out[k].members.push_back(scores[p].sample_id);
      out[k].fallback = true;
    }
  }
  for (auto& a : out) std::sort(a.members.begin(), a.members.end());
  return out;
}

std::vector<std::vector<double>> anchor_logits(const MlpClassifier& model,
                                               const LabeledDataset& data,
                                               std::span<const ScreenedSet> sets) {
  std::vector<std::vector<double>> out;
  out.reserve(sets.size());
  for (const auto& set : sets) {
    if (set.members.empty()) throw std::logic_error("anchor_logits: empty screened set");
    const Tensor2 logits = forward(model, gather_rows(data.points, set.members));
    std::vector<double> mean(logits.cols, 0.0);
    for (std::size_t i = 0; i < logits.rows; ++i) {
      for (std::size_t c = 0; c < logits.cols; ++c) mean[c] += logits(i, c);
    }
    for (double& v : mean) v /= static_cast<double>(logits.rows);
    out.push_back(std::move(mean));
  }
  return out;
}

AnchorBook build_anchor_book(const MlpClassifier& model, const LabeledDataset& data, std::size_t q,
                             Comparison cmp) {
  AnchorBook book;
  book.q = q;
  const auto scores = score_samples(model, data);
  book.thresholds = thresholds(scores, data.num_classes, q);
  book.sets = screen(scores, book.thresholds, q, cmp);
  book.anchors = anchor_logits(model, data, book.sets);
  return book;
}

void save_anchor_book(std::ostream& os, const AnchorBook& book) {
  nlohmann::json j;
  j["q"] = book.q;
  j["classes"] = nlohmann::json::array();
  for (std::size_t k = 0; k < book.num_classes(); ++k) {
    nlohmann::json c;
    c["class"] = k;
    c["members"] = book.sets[k].members;
    c["fallback"] = book.sets[k].fallback;
    c["thr_loss"] = book.thresholds[k].loss;
    c["thr_gradnorm"] = book.thresholds[k].gradnorm;
    c["anchor"] = book.anchors[k];
    j["classes"].push_back(std::move(c));
  }
  os << j.dump(2) << '\n';
}

AnchorBook load_anchor_book(std::istream& is) {
  nlohmann::json j;
  try {
    is >> j;
    AnchorBook book;
    book.q = j.at("q").get<std::size_t>();
    for (const auto& c : j.at("classes")) {
      ScreenedSet s;
      s.members = c.at("members").get<std::vector<std::size_t>>();
      s.fallback = c.at("fallback").get<bool>();
      book.sets.push_back(std::move(s));
      book.thresholds.push_back({c.at("thr_loss").get<double>(), c.at("thr_gradnorm").get<double>()});
      book.anchors.push_back(c.at("anchor").get<std::vector<double>>());
    }
    return book;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("anchor book: ") + e.what());
  }
}

void save_anchor_book(const std::filesystem::path& path, const AnchorBook& book) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  save_anchor_book(os, book);
}

AnchorBook load_anchor_book(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  return load_anchor_book(is);
}

}  // namespace esma
