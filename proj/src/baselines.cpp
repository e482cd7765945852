#include "sallie/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <exception>
#include <numeric>
#include <thread>

#include "sallie/calibration.hpp"
#include "sallie/container.hpp"
#include "sallie/error.hpp"

namespace sallie {

namespace {

void require_both_classes(const ActivationBundle& data, const std::string& what) {
  bool benign = false, malicious = false;
  for (const auto& r : data.records) (r.label == Label::kMalicious ? malicious : benign) = true;
  if (!benign || !malicious) fail(ErrorCode::kMissingClass, what + " needs both benign and malicious samples");
}

std::vector<std::uint8_t> label_bytes(const ActivationBundle& data) {
  std::vector<std::uint8_t> y;
  y.reserve(data.records.size());
  for (const auto& r : data.records) y.push_back(static_cast<std::uint8_t>(r.label));
  return y;
}

// log(1 + exp(t)) without overflow.
double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

LayerRange default_prototype_layers(std::size_t num_layers) {
  const std::size_t hi = (3 * num_layers) / 4;
  if (hi == 0) fail(ErrorCode::kInvalidArgument, "too few layers for the default prototype range");
  return {0, hi - 1};
}

PrototypeModel fit_prototypes(const ActivationBundle& data, const LayerRange& layers) {
  validate_config(ProbeConfig{Modality::kText, 1, std::nullopt, layers, 0.5}, data.num_layers());
  require_both_classes(data, "prototype fit");
  const std::size_t d = data.hidden_dim();
  PrototypeModel model;
  model.layers = layers;
  for (std::size_t l = layers.lo; l <= layers.hi; ++l) {
    std::vector<double> benign(d, 0.0), attack(d, 0.0);
    std::size_t nb = 0, na = 0;
    for (std::size_t i = 0; i < data.num_samples(); ++i) {
      const bool mal = data.records[i].label == Label::kMalicious;
      auto& acc = mal ? attack : benign;
      (mal ? na : nb) += 1;
      const auto row = data.layers[l].row(i);
      for (std::size_t j = 0; j < d; ++j) acc[j] += row[j];
    }
    for (auto& v : benign) v /= static_cast<double>(nb);
    for (auto& v : attack) v /= static_cast<double>(na);
    model.benign.push_back(std::move(benign));
    model.attack.push_back(std::move(attack));
  }
  return model;
}

double cosine_distance(std::span<const float> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::kDimensionMismatch, "cosine distance of vectors with different sizes");
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    xy += xi * y[i];
    xx += xi * xi;
    yy += y[i] * y[i];
  }
  if (xx == 0.0 || yy == 0.0) fail(ErrorCode::kZeroNorm, "zero-norm vector in cosine distance");
  return 1.0 - xy / (std::sqrt(xx) * std::sqrt(yy));
}

double prototype_score(const PrototypeModel& model, const Matrix& activations) {
  if (activations.rows() <= model.layers.hi || (!model.benign.empty() && activations.cols() != model.benign[0].size())) {
    fail(ErrorCode::kDimensionMismatch, "activations do not match the prototype model");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < model.layers.size(); ++j) {
    const std::size_t l = model.layers.lo + j;
    try {
      sum += cosine_distance(activations.row(l), model.benign[j]) - cosine_distance(activations.row(l), model.attack[j]);
    } catch (const Error& e) {
      throw Error(e.code(), "layer " + std::to_string(l) + ": " + e.what());
    }
  }
  return sum / static_cast<double>(model.layers.size());
}

std::vector<double> prototype_scores(const PrototypeModel& model, const ActivationBundle& data) {
  std::vector<double> out;
  out.reserve(data.num_samples());
  for (std::size_t i = 0; i < data.num_samples(); ++i) {
    try {
      out.push_back(prototype_score(model, data.sample_activations(i)));
    } catch (const Error& e) {
      throw Error(e.code(), "sample '" + data.records[i].sample_id + "', " + e.what());
    }
  }
  return out;
}

double logistic_objective(const Matrix& x, std::span<const std::uint8_t> labels, std::span<const double> w, double b,
                          double lambda, std::vector<double>* grad_w, double* grad_b) {
  const std::size_t n = x.rows(), d = x.cols();
  if (labels.size() != n || w.size() != d) fail(ErrorCode::kDimensionMismatch, "logistic objective shape mismatch");
  if (grad_w) grad_w->assign(d, 0.0);
  double gb = 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = x.row(i);
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * row[j];
    const double y = labels[i] ? 1.0 : -1.0;
    loss += softplus(-y * z);
    // d/dz softplus(-y z) = -y * sigmoid(-y z)
    const double coef = -y * sigmoid(-y * z);
    gb += coef;
    if (grad_w) {
      for (std::size_t j = 0; j < d; ++j) (*grad_w)[j] += coef * row[j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  loss *= inv_n;
  loss += 0.5 * lambda * dot(w, w);
  if (grad_w) {
    for (std::size_t j = 0; j < d; ++j) (*grad_w)[j] = (*grad_w)[j] * inv_n + lambda * w[j];
  }
  if (grad_b) *grad_b = gb * inv_n;
  return loss;
}

LogisticProbe fit_logistic(const ActivationBundle& data, std::size_t layer, const LogisticOptions& opt) {
  if (layer >= data.num_layers()) fail(ErrorCode::kInvalidArgument, "layer " + std::to_string(layer) + " out of range");
  if (!(opt.lambda >= 0.0)) fail(ErrorCode::kInvalidArgument, "regularization must be non-negative");
  require_both_classes(data, "logistic fit");
  const Matrix& x = data.layers[layer];
  const auto y = label_bytes(data);
  const std::size_t d = x.cols(), p = d + 1;

  // theta = [w; b]
  auto eval = [&](const std::vector<double>& theta, std::vector<double>& grad) {
    std::vector<double> gw;
    double gb = 0.0;
    const double f = logistic_objective(x, y, std::span<const double>(theta.data(), d), theta[d], opt.lambda, &gw, &gb);
    grad.assign(gw.begin(), gw.end());
    grad.push_back(gb);
    return f;
  };

  std::vector<double> theta(p, 0.0), grad, next(p), next_grad;
  double f = eval(theta, grad);
  std::deque<std::pair<std::vector<double>, std::vector<double>>> memory;  // (s, y)
  std::size_t it = 0;
  double gnorm = std::sqrt(dot(grad, grad));
  for (; it < opt.max_iterations && gnorm > opt.tolerance; ++it) {
    // Two-loop recursion.
    std::vector<double> q = grad;
    std::vector<double> alpha(memory.size());
    for (std::size_t m = memory.size(); m-- > 0;) {
      const auto& [s, yv] = memory[m];
      alpha[m] = dot(s, q) / dot(yv, s);
      for (std::size_t j = 0; j < p; ++j) q[j] -= alpha[m] * yv[j];
    }
    double gamma = 1.0;
    if (!memory.empty()) {
      const auto& [s, yv] = memory.back();
      gamma = dot(s, yv) / dot(yv, yv);
    } else {
      gamma = 1.0 / gnorm;
    }
    for (auto& v : q) v *= gamma;
    for (std::size_t m = 0; m < memory.size(); ++m) {
      const auto& [s, yv] = memory[m];
      const double beta = dot(yv, q) / dot(yv, s);
      for (std::size_t j = 0; j < p; ++j) q[j] += s[j] * (alpha[m] - beta);
    }
    std::vector<double> dir(p);
    for (std::size_t j = 0; j < p; ++j) dir[j] = -q[j];
    double slope = dot(grad, dir);
    if (!(slope < 0.0)) {
      memory.clear();
      for (std::size_t j = 0; j < p; ++j) dir[j] = -grad[j] / gnorm;
      slope = dot(grad, dir);
    }

    double step = 1.0;
    double f_next = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t j = 0; j < p; ++j) next[j] = theta[j] + step * dir[j];
      f_next = eval(next, next_grad);
      if (f_next <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (memory.empty()) break;  // no progress even along the gradient
      memory.clear();
      continue;
    }
    std::vector<double> s(p), yv(p);
    for (std::size_t j = 0; j < p; ++j) {
      s[j] = next[j] - theta[j];
      yv[j] = next_grad[j] - grad[j];
    }
    if (dot(s, yv) > 1e-16 * dot(yv, yv)) {
      memory.emplace_back(std::move(s), std::move(yv));
      if (memory.size() > opt.memory) memory.pop_front();
    }
    theta.swap(next);
    grad.swap(next_grad);
    f = f_next;
    gnorm = std::sqrt(dot(grad, grad));
  }
  if (gnorm > opt.tolerance) {
    fail(ErrorCode::kNonConvergence, "logistic fit at layer " + std::to_string(layer) + " stopped after " +
                                         std::to_string(it) + " iterations with gradient norm " +
                                         std::to_string(gnorm));
  }
  LogisticProbe probe;
  probe.layer = layer;
  probe.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(d));
  probe.bias = theta[d];
  probe.lambda = opt.lambda;
  probe.final_loss = f;
  probe.gradient_norm = gnorm;
  probe.iterations = it;
  return probe;
}

double logistic_score(const LogisticProbe& probe, std::span<const float> x) {
  if (x.size() != probe.weights.size()) fail(ErrorCode::kDimensionMismatch, "input size does not match logistic probe");
  double z = probe.bias;
  for (std::size_t j = 0; j < x.size(); ++j) z += probe.weights[j] * x[j];
  return sigmoid(z);
}

std::vector<double> logistic_scores(const LogisticProbe& probe, const ActivationBundle& data) {
  if (probe.layer >= data.num_layers()) fail(ErrorCode::kDimensionMismatch, "bundle lacks the probe's layer");
  std::vector<double> out;
  out.reserve(data.num_samples());
  for (std::size_t i = 0; i < data.num_samples(); ++i) out.push_back(logistic_score(probe, data.layers[probe.layer].row(i)));
  return out;
}

LayerSelection logistic_layer_select(const ActivationBundle& train, const ActivationBundle& valid, double fpr_cap,
                                     const LogisticOptions& options, std::vector<std::size_t> candidates,
                                     std::size_t workers) {
  if (train.num_layers() != valid.num_layers() || train.hidden_dim() != valid.hidden_dim()) {
    fail(ErrorCode::kDimensionMismatch, "train and validation bundles disagree on L or d");
  }
  if (!(fpr_cap >= 0.0 && fpr_cap <= 1.0)) fail(ErrorCode::kInvalidArgument, "fpr cap must lie in [0, 1]");
  require_both_classes(train, "logistic layer selection (train)");
  require_both_classes(valid, "logistic layer selection (valid)");
  if (candidates.empty()) {
    candidates.resize(train.num_layers());
    std::iota(candidates.begin(), candidates.end(), 0);
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  for (auto l : candidates) {
    if (l >= train.num_layers()) fail(ErrorCode::kInvalidArgument, "candidate layer " + std::to_string(l) + " out of range");
  }

  const std::size_t n = candidates.size();
  std::vector<std::optional<LogisticProbe>> probes(n);
  LayerSelection out;
  out.rows.resize(n);
  std::vector<ScoredLabel> base(valid.num_samples());
  for (std::size_t i = 0; i < base.size(); ++i) base[i].label = valid.records[i].label;

  auto run = [&](std::size_t j) {
    auto& row = out.rows[j];
    row.layer = candidates[j];
    try {
      auto probe = fit_logistic(train, row.layer, options);
      auto scored = base;
      const auto s = logistic_scores(probe, valid);
      for (std::size_t i = 0; i < s.size(); ++i) scored[i].score = s[i];
      const auto choice = select_threshold(build_roc(scored), fpr_cap);
      row.fitted = true;
      row.threshold = choice.threshold;
      row.fpr = choice.fpr;
      row.fnr = choice.fnr;
      row.feasible = choice.feasible;
      if (!choice.feasible) row.reason = "no threshold meets the FPR cap";
      probe.threshold = choice.threshold;
      probes[j] = std::move(probe);
    } catch (const Error& e) {
      row.reason = e.what();
    }
  };
  const std::size_t nworkers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  {
    std::vector<std::jthread> threads;
    for (std::size_t w = 1; w < nworkers; ++w) {
      threads.emplace_back([&, w] {
        for (std::size_t j = w; j < n; j += nworkers) run(j);
      });
    }
    for (std::size_t j = 0; j < n; j += nworkers) run(j);
  }

  std::size_t best = n;
  for (std::size_t j = 0; j < n; ++j) {
    if (out.rows[j].feasible && (best == n || out.rows[j].fnr < out.rows[best].fnr)) best = j;
  }
  if (best < n) out.best = probes[best];
  return out;
}

namespace {

void write_f64s(container::Writer& w, std::span<const double> v) {
  for (double x : v) w.f64(x);
}

std::vector<double> read_f64s(container::Reader& r, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = r.f64();
  return v;
}

Modality read_modality(container::Reader& r) {
  const auto m = r.u8();
  if (m > 1) fail(ErrorCode::kCorrupt, "unknown modality in baseline section");
  return static_cast<Modality>(m);
}

}  // namespace

void save_baselines(const BaselineSet& set, const std::filesystem::path& path) {
  container::Header header{set.model_name, static_cast<std::uint32_t>(set.num_layers),
                           static_cast<std::uint32_t>(set.hidden_dim)};
  std::vector<container::Section> sections;
  for (const auto& [m, p] : set.prototypes) {
    container::Writer w;
    w.u8(static_cast<std::uint8_t>(m));
    w.u32(static_cast<std::uint32_t>(p.layers.lo));
    w.u32(static_cast<std::uint32_t>(p.layers.hi));
    w.f64(p.threshold);
    for (std::size_t j = 0; j < p.layers.size(); ++j) {
      write_f64s(w, p.benign[j]);
      write_f64s(w, p.attack[j]);
    }
    sections.push_back({container::SectionTag::kPrototype, std::move(w.buffer())});
  }
  for (const auto& [m, p] : set.logistic) {
    container::Writer w;
    w.u8(static_cast<std::uint8_t>(m));
    w.u32(static_cast<std::uint32_t>(p.layer));
    w.f64(p.bias);
    w.f64(p.threshold);
    w.f64(p.lambda);
    w.f64(p.final_loss);
    w.f64(p.gradient_norm);
    w.u64(p.iterations);
    write_f64s(w, p.weights);
    sections.push_back({container::SectionTag::kLogistic, std::move(w.buffer())});
  }
  container::write_file(path, header, sections);
}

BaselineSet load_baselines(const std::filesystem::path& path) {
  container::Header header;
  std::vector<container::Section> sections;
  container::read_file(path, header, sections);
  BaselineSet set;
  set.model_name = header.model_name;
  set.num_layers = header.num_layers;
  set.hidden_dim = header.hidden_dim;
  const std::size_t d = set.hidden_dim;
  for (const auto& s : sections) {
    container::Reader r(s.payload);
    if (s.tag == container::SectionTag::kPrototype) {
      const Modality m = read_modality(r);
      PrototypeModel p;
      p.layers.lo = r.u32();
      p.layers.hi = r.u32();
      if (p.layers.lo > p.layers.hi || p.layers.hi >= set.num_layers) fail(ErrorCode::kCorrupt, "bad prototype layer range");
      p.threshold = r.f64();
      for (std::size_t j = 0; j < p.layers.size(); ++j) {
        p.benign.push_back(read_f64s(r, d));
        p.attack.push_back(read_f64s(r, d));
      }
      if (!set.prototypes.emplace(m, std::move(p)).second) fail(ErrorCode::kCorrupt, "duplicate prototype section");
    } else if (s.tag == container::SectionTag::kLogistic) {
      const Modality m = read_modality(r);
      LogisticProbe p;
      p.layer = r.u32();
      if (p.layer >= set.num_layers) fail(ErrorCode::kCorrupt, "bad logistic probe layer");
      p.bias = r.f64();
      p.threshold = r.f64();
      p.lambda = r.f64();
      p.final_loss = r.f64();
      p.gradient_norm = r.f64();
      p.iterations = r.u64();
      p.weights = read_f64s(r, d);
      if (!set.logistic.emplace(m, std::move(p)).second) fail(ErrorCode::kCorrupt, "duplicate logistic section");
    } else {
      continue;
    }
    if (!r.done()) fail(ErrorCode::kCorrupt, "trailing bytes in baseline section");
  }
  if (set.prototypes.empty() && set.logistic.empty()) {
    fail(ErrorCode::kInvalidArgument, path.string() + " holds no baseline sections");
  }
  return set;
}

}  // namespace sallie
