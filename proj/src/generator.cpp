#include "esma/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "esma/errors.hpp"
#include "esma/kernels.hpp"
#include "esma/rng.hpp"
#include "esma/textio.hpp"

namespace esma {

SmoothingKernel SmoothingKernel::gaussian(double sigma) {
  if (!(sigma > 0.0)) throw InvalidInput("gaussian kernel: sigma must be > 0");
  SmoothingKernel k;
  k.sigma = sigma;
  double total = 0.0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      k.weights[(dy + 1) * 3 + (dx + 1)] = w;
      total += w;
    }
  }
  for (double& w : k.weights) w /= total;
  return k;
}

namespace {

template <typename Visit>
void for_each_tap(InputGeometry g, Visit visit) {
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const std::size_t base = c * g.height * g.width;
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const auto sy = std::clamp<std::ptrdiff_t>(y + dy, 0, h - 1);
            const auto sx = std::clamp<std::ptrdiff_t>(x + dx, 0, w - 1);
            visit(base + static_cast<std::size_t>(y * w + x),
                  base + static_cast<std::size_t>(sy * w + sx), (dy + 1) * 3 + (dx + 1));
          }
        }
      }
    }
  }
}

}  // namespace

std::vector<double> smooth(std::span<const double> x, InputGeometry geometry,
                           const SmoothingKernel& kernel) {
  if (x.size() != geometry.size()) throw InvalidInput("smooth: size does not match geometry");
  if (!geometry.is_grid()) return {x.begin(), x.end()};
  std::vector<double> out(x.size(), 0.0);
  for_each_tap(geometry, [&](std::size_t dst, std::size_t src, int tap) {
    out[dst] += kernel.weights[tap] * x[src];
  });
  return out;
}

std::vector<double> smooth_adjoint(std::span<const double> grad, InputGeometry geometry,
                                   const SmoothingKernel& kernel) {
  if (grad.size() != geometry.size()) throw InvalidInput("smooth: size does not match geometry");
  if (!geometry.is_grid()) return {grad.begin(), grad.end()};
  std::vector<double> out(grad.size(), 0.0);
  for_each_tap(geometry, [&](std::size_t dst, std::size_t src, int tap) {
    out[src] += kernel.weights[tap] * grad[dst];
  });
  return out;
}

std::vector<double> smooth_and_clip(std::span<const double> raw, std::span<const double> x_orig,
                                    InputGeometry geometry, const PerturbationBudget& budget) {
  const auto s = smooth(raw, geometry, budget.kernel);
  return project_linf(s, x_orig, budget.epsilon, budget.range);
}

double smooth_l1(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("smooth_l1: length mismatch");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = std::abs(a[i] - b[i]);
    s += t < 1.0 ? 0.5 * t * t : t - 0.5;
  }
  return s / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Generator

struct PerturbationGenerator::BlockCache {
  std::vector<double> in, pre, act, w, nhat, n, gate, out;
  double inv_std = 0.0;
};

struct PerturbationGenerator::Cache {
  std::vector<double> x, enc_pre, enc;
  std::vector<BlockCache> blocks;
  std::vector<double> out;
};

namespace {

constexpr double kLayerNormEps = 1e-5;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

void PerturbationGenerator::build_layout() {
  const std::size_t d = config_.geometry.size();
  const std::size_t h = config_.hidden;
  const std::size_t e = embeddings_.dim();
  std::size_t off = 0;
  auto dense = [&](std::size_t out, std::size_t in) {
    Dense l{off, off + out * in, out, in};
    off += out * in + out;
    return l;
  };
  encoder_ = dense(h, d);
  blocks_.clear();
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    Block blk;
    blk.t1 = dense(h, h);
    blk.inject = dense(h, e);
    blk.t2 = dense(h, h);
    blk.ln_gain = off;
    blk.ln_bias = off + h;
    off += 2 * h;
    blk.gate = dense(h, h);
    blocks_.push_back(blk);
  }
  decoder_ = dense(d, h);
  theta_.resize(off);
}

PerturbationGenerator PerturbationGenerator::initialize(const GeneratorConfig& config,
                                                        EmbeddingTable embeddings,
                                                        std::uint64_t seed) {
  if (config.geometry.size() == 0 || config.hidden == 0) {
    throw InvalidInput("generator: empty geometry or hidden width");
  }
  if (embeddings.num_classes() == 0) throw InvalidInput("generator: empty embedding table");
  PerturbationGenerator g;
  g.config_ = config;
  g.embeddings_ = std::move(embeddings);
  g.build_layout();

  Rng rng(seed);
  auto fill = [&](const Dense& l, double scale) {
    const double limit = scale * std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t i = 0; i < l.out * l.in; ++i) g.theta_[l.w + i] = u(rng);
    std::fill_n(g.theta_.begin() + static_cast<std::ptrdiff_t>(l.b), l.out, 0.0);
  };
  fill(g.encoder_, 1.0);
  for (const auto& blk : g.blocks_) {
    fill(blk.t1, 1.0);
    fill(blk.inject, 1.0);
    fill(blk.t2, 1.0);
    std::fill_n(g.theta_.begin() + static_cast<std::ptrdiff_t>(blk.ln_gain), config.hidden, 1.0);
    std::fill_n(g.theta_.begin() + static_cast<std::ptrdiff_t>(blk.ln_bias), config.hidden, 0.0);
    fill(blk.gate, 1.0);
  }
  fill(g.decoder_, 0.1);
  return g;
}

void PerturbationGenerator::zero_injection() {
  for (const auto& blk : blocks_) {
    std::fill_n(theta_.begin() + static_cast<std::ptrdiff_t>(blk.inject.w),
                blk.inject.out * blk.inject.in + blk.inject.out, 0.0);
  }
}

namespace {

// y = W x + b (optionally accumulated into y).
void dense_apply(std::span<const double> theta, std::size_t w_off, std::size_t b_off,
                 std::size_t out, std::size_t in, std::span<const double> x, std::span<double> y,
                 bool accumulate) {
  const auto& k = kernels::active();
  for (std::size_t o = 0; o < out; ++o) {
    const double v = k.dot(theta.data() + w_off + o * in, x.data(), in) + theta[b_off + o];
    y[o] = accumulate ? y[o] + v : v;
  }
}

// Accumulates dW += dy x^T, db += dy and dx += W^T dy (dx may be empty).
void dense_backward(std::span<const double> theta, std::span<double> grad, std::size_t w_off,
                    std::size_t b_off, std::size_t out, std::size_t in,
                    std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  const auto& k = kernels::active();
  for (std::size_t o = 0; o < out; ++o) {
    if (dy[o] == 0.0) continue;
    k.axpy(dy[o], x.data(), grad.data() + w_off + o * in, in);
    grad[b_off + o] += dy[o];
    if (!dx.empty()) k.axpy(dy[o], theta.data() + w_off + o * in, dx.data(), in);
  }
}

}  // namespace

void PerturbationGenerator::forward(std::span<const double> x, ClassIndex target,
                                    Cache& cache) const {
  const std::size_t d = config_.geometry.size();
  const std::size_t h = config_.hidden;
  if (x.size() != d) throw InvalidInput("generator: input size does not match geometry");
  if (target >= num_classes()) throw InvalidInput("generator: target class out of range");
  const auto e = embeddings_.row(target);

  cache.x.assign(x.begin(), x.end());
  cache.enc_pre.assign(h, 0.0);
  dense_apply(theta_, encoder_.w, encoder_.b, h, d, x, cache.enc_pre, false);
  cache.enc.resize(h);
  for (std::size_t i = 0; i < h; ++i) cache.enc[i] = std::max(cache.enc_pre[i], 0.0);

  cache.blocks.resize(blocks_.size());
  std::span<const double> hcur = cache.enc;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& blk = blocks_[b];
    BlockCache& c = cache.blocks[b];
    c.in.assign(hcur.begin(), hcur.end());
    c.pre.assign(h, 0.0);
    dense_apply(theta_, blk.t1.w, blk.t1.b, h, h, c.in, c.pre, false);
    dense_apply(theta_, blk.inject.w, blk.inject.b, h, blk.inject.in, e, c.pre, true);
    c.act.resize(h);
    for (std::size_t i = 0; i < h; ++i) c.act[i] = std::max(c.pre[i], 0.0);
    c.w.assign(h, 0.0);
    dense_apply(theta_, blk.t2.w, blk.t2.b, h, h, c.act, c.w, false);

    double mean = 0.0;
    for (double v : c.w) mean += v;
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (double v : c.w) var += (v - mean) * (v - mean);
    var /= static_cast<double>(h);
    c.inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    c.nhat.resize(h);
    c.n.resize(h);
    for (std::size_t i = 0; i < h; ++i) {
      c.nhat[i] = (c.w[i] - mean) * c.inv_std;
      c.n[i] = theta_[blk.ln_gain + i] * c.nhat[i] + theta_[blk.ln_bias + i];
    }
    c.gate.assign(h, 0.0);
    dense_apply(theta_, blk.gate.w, blk.gate.b, h, h, c.n, c.gate, false);
    c.out.resize(h);
    for (std::size_t i = 0; i < h; ++i) {
      c.gate[i] = sigmoid(c.gate[i]);
      c.out[i] = c.gate[i] * c.n[i] + c.in[i];
    }
    hcur = c.out;
  }

  cache.out.assign(d, 0.0);
  dense_apply(theta_, decoder_.w, decoder_.b, d, h, hcur, cache.out, false);
  for (std::size_t i = 0; i < d; ++i) cache.out[i] += x[i];
}

std::vector<double> PerturbationGenerator::generate(std::span<const double> x,
                                                    ClassIndex target) const {
  Cache cache;
  forward(x, target, cache);
  return std::move(cache.out);
}

void PerturbationGenerator::accumulate_gradient(std::span<const double> x, ClassIndex target,
                                                std::span<const double> d_out,
                                                std::span<double> grad) const {
  if (grad.size() != theta_.size()) throw InvalidInput("generator: gradient size mismatch");
  Cache cache;
  forward(x, target, cache);
  const std::size_t d = config_.geometry.size();
  const std::size_t h = config_.hidden;
  if (d_out.size() != d) throw InvalidInput("generator: output gradient size mismatch");
  const auto e = embeddings_.row(target);

  std::span<const double> last = blocks_.empty() ? std::span<const double>(cache.enc)
                                                 : std::span<const double>(cache.blocks.back().out);
  std::vector<double> dh(h, 0.0);
  dense_backward(theta_, grad, decoder_.w, decoder_.b, d, h, last, d_out, dh);

  for (std::size_t b = blocks_.size(); b-- > 0;) {
    const Block& blk = blocks_[b];
    const BlockCache& c = cache.blocks[b];
    std::vector<double> d_in = dh;  // residual path
    std::vector<double> dn(h), dgate_pre(h);
    for (std::size_t i = 0; i < h; ++i) {
      dn[i] = dh[i] * c.gate[i];
      dgate_pre[i] = dh[i] * c.n[i] * c.gate[i] * (1.0 - c.gate[i]);
    }
    dense_backward(theta_, grad, blk.gate.w, blk.gate.b, h, h, c.n, dgate_pre, dn);

    std::vector<double> dnhat(h);
    double sum_d = 0.0, sum_dx = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      grad[blk.ln_gain + i] += dn[i] * c.nhat[i];
      grad[blk.ln_bias + i] += dn[i];
      dnhat[i] = dn[i] * theta_[blk.ln_gain + i];
      sum_d += dnhat[i];
      sum_dx += dnhat[i] * c.nhat[i];
    }
    const double hn = static_cast<double>(h);
    std::vector<double> dw(h);
    for (std::size_t i = 0; i < h; ++i) {
      dw[i] = c.inv_std / hn * (hn * dnhat[i] - sum_d - c.nhat[i] * sum_dx);
    }
    std::vector<double> dact(h, 0.0);
    dense_backward(theta_, grad, blk.t2.w, blk.t2.b, h, h, c.act, dw, dact);
    std::vector<double> dpre(h);
    for (std::size_t i = 0; i < h; ++i) dpre[i] = c.pre[i] > 0.0 ? dact[i] : 0.0;
    dense_backward(theta_, grad, blk.t1.w, blk.t1.b, h, h, c.in, dpre, d_in);
    dense_backward(theta_, grad, blk.inject.w, blk.inject.b, h, blk.inject.in, e, dpre, {});
    dh = std::move(d_in);
  }

  std::vector<double> denc(h);
  for (std::size_t i = 0; i < h; ++i) denc[i] = cache.enc_pre[i] > 0.0 ? dh[i] : 0.0;
  dense_backward(theta_, grad, encoder_.w, encoder_.b, h, d, x, denc, {});
}

std::vector<double> generate_adversarial(const PerturbationGenerator& g, std::span<const double> x,
                                         ClassIndex target, const PerturbationBudget& budget) {
  return smooth_and_clip(g.generate(x, target), x, g.config().geometry, budget);
}

EmLoss em_loss(const PerturbationGenerator& g, const MlpClassifier& surrogate, const Tensor2& batch,
               std::span<const ClassIndex> labels, std::span<const ClassIndex> targets,
               const Tensor2& anchor_features, const PerturbationBudget& budget,
               bool with_gradient) {
  const std::size_t n = batch.rows;
  if (labels.size() != n || targets.size() != n || anchor_features.rows != n) {
    throw InvalidInput("em_loss: batch, labels, targets and anchors disagree in length");
  }
  if (anchor_features.cols != surrogate.output_dim()) {
    throw InvalidInput("em_loss: anchor feature width != surrogate output dim");
  }
  const InputGeometry geom = g.config().geometry;
  EmLoss out;
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != targets[i]) active.push_back(i);
  }
  if (active.empty()) throw InvalidInput("em_loss: every row already belongs to its target class");
  out.active_rows = active.size();
  if (with_gradient) out.grad.assign(g.parameters().size(), 0.0);

  const double inv_rows = 1.0 / static_cast<double>(active.size());
  const double k = static_cast<double>(surrogate.output_dim());
  for (std::size_t i : active) {
    const auto x = batch.row(i);
    const auto raw = g.generate(x, targets[i]);
    const auto s = smooth(raw, geom, budget.kernel);
    const auto adv = project_linf(s, x, budget.epsilon, budget.range);
    const auto z = forward_point(surrogate, adv);
    const auto a = anchor_features.row(i);
    out.value += smooth_l1(a, z) * inv_rows;
    if (!with_gradient) continue;

    std::vector<double> dz(z.size());
    for (std::size_t c = 0; c < z.size(); ++c) {
      const double t = z[c] - a[c];
      const double dt = std::abs(t) < 1.0 ? t : (t > 0.0 ? 1.0 : -1.0);
      dz[c] = dt / k * inv_rows;
    }
    auto dadv = input_gradient(surrogate, adv, dz);
    for (std::size_t j = 0; j < dadv.size(); ++j) {
      const bool interior = s[j] > x[j] - budget.epsilon && s[j] < x[j] + budget.epsilon &&
                            s[j] > budget.range.low && s[j] < budget.range.high;
      if (!interior) dadv[j] = 0.0;
    }
    const auto draw = smooth_adjoint(dadv, geom, budget.kernel);
    g.accumulate_gradient(x, targets[i], draw, out.grad);
  }
  return out;
}

EsmaTrainResult train_esma(PerturbationGenerator g, const MlpClassifier& surrogate,
                           const LabeledDataset& data, const AnchorBook& anchors,
                           const EsmaTrainConfig& config) {
  data.validate();
  if (!g.embeddings().frozen) throw InvalidInput("train_esma: embedding table must be frozen");
  const std::size_t k = data.num_classes;
  if (anchors.num_classes() != k || g.num_classes() != k) {
    throw InvalidInput("train_esma: class count mismatch between data, anchors and generator");
  }
  for (const auto& set : anchors.sets) {
    if (set.members.empty()) throw InvalidInput("train_esma: anchor book has an empty class");
  }
  // Anchor features are a pure function of the frozen surrogate.
  const Tensor2 features = forward(surrogate, data.points);

  EsmaTrainResult out;
  AdamW opt(g.parameters().size(), config.optimizer);
  Rng rng(config.seed);
  std::uniform_int_distribution<ClassIndex> pick_target(0, k - 1);
  Tensor2 one(1, data.dim());
  Tensor2 feat(1, surrogate.output_dim());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const ClassIndex target = pick_target(rng);
      if (target == data.labels[i]) continue;
      const auto& members = anchors.sets[target].members;
      std::uniform_int_distribution<std::size_t> pick_member(0, members.size() - 1);
      const std::size_t anchor = members[pick_member(rng)];
      std::copy_n(data.points.row(i).begin(), data.dim(), one.row(0).begin());
      std::copy_n(features.row(anchor).begin(), features.cols, feat.row(0).begin());
      const ClassIndex label = data.labels[i];
      const auto loss = em_loss(g, surrogate, one, std::span(&label, 1), std::span(&target, 1),
                                feat, config.budget, true);
      if (!std::isfinite(loss.value)) throw TrainingFailure("train_esma: non-finite loss");
      opt.step(g.parameters(), loss.grad);
      total += loss.value;
      ++steps;
    }
    out.epoch_loss.push_back(steps ? total / static_cast<double>(steps) : 0.0);
  }
  out.generator = std::move(g);
  return out;
}

void save_generator(std::ostream& os, const PerturbationGenerator& g) {
  const auto& c = g.config_;
  os << "esma-generator 1\n";
  os << "geometry " << c.geometry.channels << ' ' << c.geometry.height << ' ' << c.geometry.width
     << '\n';
  os << "hidden " << c.hidden << " blocks " << c.blocks << '\n';
  save_embeddings(os, g.embeddings_);
  os << "parameters " << g.theta_.size() << '\n';
  write_values(os, g.theta_);
}

PerturbationGenerator load_generator(std::istream& is) {
  TokenReader r(is);
  r.expect("esma-generator");
  if (r.count() != 1) throw FormatError("esma-generator: unsupported version");
  GeneratorConfig c;
  r.expect("geometry");
  c.geometry.channels = r.count();
  c.geometry.height = r.count();
  c.geometry.width = r.count();
  r.expect("hidden");
  c.hidden = r.count();
  r.expect("blocks");
  c.blocks = r.count();
  PerturbationGenerator g;
  g.config_ = c;
  g.embeddings_ = load_embeddings(is);
  g.build_layout();
  r.expect("parameters");
  const std::size_t n = r.count();
  if (n != g.theta_.size()) throw FormatError("esma-generator: parameter count mismatch");
  g.theta_ = r.reals(n);
  return g;
}

void save_generator(const std::filesystem::path& path, const PerturbationGenerator& g) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  save_generator(os, g);
}

PerturbationGenerator load_generator(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  return load_generator(is);
}

}  // namespace esma
