#include "sallie/detector.hpp"

#include <algorithm>
#include <exception>
#include <thread>

#include "sallie/container.hpp"
#include "sallie/error.hpp"

namespace sallie {

namespace {

[[noreturn]] void rethrow_with_context(const Error& e, const std::string& context) {
  throw Error(e.code(), context + ": " + e.what());
}

std::vector<std::size_t> indices_of(const ActivationBundle& b, Modality m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < b.records.size(); ++i) {
    if (b.records[i].modality == m) out.push_back(i);
  }
  return out;
}

std::vector<std::uint32_t> hits_for(const LayerProbe& probe, const QuerySet& queries, std::size_t k,
                                    std::size_t workers) {
  const auto ids = probe.index.nearest(queries, k, workers);
  const auto& labels = probe.index.labels();
  std::vector<std::uint32_t> hits(queries.size(), 0);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t j = 0; j < k; ++j) hits[q] += labels[ids[q * k + j]];
  }
  return hits;
}

void write_probes(container::Writer& w, const ModalityProbes& mp) {
  const auto& cfg = mp.config;
  w.u8(static_cast<std::uint8_t>(cfg.modality));
  w.u32(static_cast<std::uint32_t>(cfg.k));
  w.u32(static_cast<std::uint32_t>(cfg.c.value_or(0)));
  w.u32(static_cast<std::uint32_t>(cfg.layers.lo));
  w.u32(static_cast<std::uint32_t>(cfg.layers.hi));
  w.f64(cfg.threshold);
  w.u32(static_cast<std::uint32_t>(mp.probes.size()));
  for (const auto& probe : mp.probes) {
    w.u32(static_cast<std::uint32_t>(probe.layer));
    w.u8(probe.pca ? 1 : 0);
    if (probe.pca) {
      const auto& p = *probe.pca;
      w.u32(static_cast<std::uint32_t>(p.num_components()));
      w.u32(static_cast<std::uint32_t>(p.input_dim()));
      w.f32s(p.mean);
      w.f32s(p.components.data());
      w.f32s(p.explained_variance);
    }
    const auto& idx = probe.index;
    w.u32(static_cast<std::uint32_t>(idx.size()));
    w.u32(static_cast<std::uint32_t>(idx.dim()));
    for (std::size_t i = 0; i < idx.size(); ++i) w.f32s(idx.vector(i));
    w.bytes(idx.labels());
    w.f32s(idx.source_norms());
  }
}

ModalityProbes read_probes(container::Reader& r, std::size_t num_layers, std::size_t hidden_dim) {
  ModalityProbes mp;
  auto& cfg = mp.config;
  const auto modality = r.u8();
  if (modality > 1) fail(ErrorCode::kCorrupt, "unknown modality in detector file");
  cfg.modality = static_cast<Modality>(modality);
  cfg.k = r.u32();
  const auto c = r.u32();
  if (c != 0) cfg.c = c;
  cfg.layers.lo = r.u32();
  cfg.layers.hi = r.u32();
  cfg.threshold = r.f64();
  try {
    validate_config(cfg, num_layers);
  } catch (const Error& e) {
    fail(ErrorCode::kCorrupt, std::string("invalid configuration in detector file: ") + e.what());
  }
  const auto count = r.u32();
  if (count != cfg.layers.size()) fail(ErrorCode::kCorrupt, "detector probe count does not match its layer range");
  for (std::uint32_t n = 0; n < count; ++n) {
    LayerProbe probe;
    probe.layer = r.u32();
    if (probe.layer != cfg.layers.lo + n) fail(ErrorCode::kCorrupt, "detector probes out of layer order");
    std::size_t expected_dim = hidden_dim;
    if (r.u8() != 0) {
      PcaModel p;
      const auto pc = r.u32();
      const auto pd = r.u32();
      if (pd != hidden_dim || pc == 0 || (cfg.c && pc != *cfg.c)) {
        fail(ErrorCode::kCorrupt, "PCA shape inconsistent with detector header");
      }
      p.mean = r.f32s(pd);
      p.components = Matrix(pc, pd, r.f32s(static_cast<std::size_t>(pc) * pd));
      p.explained_variance = r.f32s(pc);
      probe.pca = std::move(p);
      expected_dim = pc;
    } else if (cfg.c) {
      fail(ErrorCode::kCorrupt, "probe lacks the PCA model its configuration requires");
    }
    const auto m = r.u32();
    const auto p = r.u32();
    if (p != expected_dim || m == 0) fail(ErrorCode::kCorrupt, "probe index shape inconsistent with configuration");
    auto vectors = r.f32s(static_cast<std::size_t>(m) * p);
    auto labels = r.bytes(m);
    auto norms = r.f32s(m);
    probe.index = ProbeIndex::from_normalized(static_cast<int>(probe.layer), p, vectors, std::move(labels),
                                              std::move(norms));
    mp.probes.push_back(std::move(probe));
  }
  return mp;
}

}  // namespace

std::string format_c(const std::optional<std::size_t>& c) { return c ? std::to_string(*c) : "none"; }

void validate_config(const ProbeConfig& cfg, std::size_t num_layers) {
  if (cfg.k < 1) fail(ErrorCode::kInvalidArgument, "k must be positive");
  if (cfg.c && *cfg.c < 1) fail(ErrorCode::kInvalidArgument, "c must be positive or none");
  if (cfg.layers.lo > cfg.layers.hi || cfg.layers.hi >= num_layers) {
    fail(ErrorCode::kInvalidArgument, "layer range " + cfg.layers.str() + " not within [0, " +
                                          std::to_string(num_layers == 0 ? 0 : num_layers - 1) + "]");
  }
  if (!(cfg.threshold >= 0.0 && cfg.threshold <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "threshold must lie in [0, 1]");
  }
}

const ModalityProbes& FittedDetector::entry(Modality m) const {
  auto it = modalities.find(m);
  if (it == modalities.end()) {
    fail(ErrorCode::kMissingModality, "detector has no probes for modality '" + std::string(to_string(m)) + "'");
  }
  return it->second;
}

ModalityProbes& FittedDetector::entry(Modality m) {
  return const_cast<ModalityProbes&>(static_cast<const FittedDetector&>(*this).entry(m));
}

double ensemble_score(std::span<const std::uint32_t> hits_per_layer, std::size_t k) {
  std::uint64_t total = 0;
  for (auto h : hits_per_layer) total += h;
  return static_cast<double>(total) / (static_cast<double>(k) * static_cast<double>(hits_per_layer.size()));
}

ScoreTrace assemble_trace(std::string sample_id, const ProbeConfig& config,
                          std::span<const std::uint32_t> hits_per_layer) {
  if (hits_per_layer.size() != config.layers.size()) {
    fail(ErrorCode::kDimensionMismatch, "per-layer hit count does not match the layer range");
  }
  ScoreTrace t;
  t.sample_id = std::move(sample_id);
  for (std::size_t j = 0; j < hits_per_layer.size(); ++j) {
    t.per_layer_scores[config.layers.lo + j] = static_cast<double>(hits_per_layer[j]) / static_cast<double>(config.k);
  }
  t.ensemble_score = ensemble_score(hits_per_layer, config.k);
  t.verdict = decide(t.ensemble_score, config.threshold);
  t.config_used = config;
  return t;
}

LayerProbe fit_layer_probe(const Matrix& rows, const std::vector<std::uint8_t>& labels, std::size_t layer,
                           const std::optional<std::size_t>& c) {
  std::optional<PcaModel> pca;
  if (c) pca = fit_pca(rows, *c);
  return build_layer_probe(rows, labels, layer, std::move(pca));
}

LayerProbe build_layer_probe(const Matrix& rows, const std::vector<std::uint8_t>& labels, std::size_t layer,
                             std::optional<PcaModel> pca) {
  LayerProbe probe;
  probe.layer = layer;
  probe.pca = std::move(pca);
  std::vector<double> points;
  std::size_t dim = rows.cols();
  if (probe.pca) {
    dim = probe.pca->num_components();
    points.reserve(rows.rows() * dim);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      auto projected = transform(*probe.pca, rows.row(i));
      points.insert(points.end(), projected.begin(), projected.end());
    }
  } else {
    points.assign(rows.data().begin(), rows.data().end());
  }
  probe.index = ProbeIndex::build(points, dim, labels, static_cast<int>(layer));
  return probe;
}

QuerySet prepare_queries(const LayerProbe& probe, const Matrix& rows, std::span<const std::string> row_names) {
  QuerySet qs(probe.index.dim());
  const PcaModel* pca = probe.pca ? &*probe.pca : nullptr;
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    try {
      qs.add(maybe_project(pca, rows.row(i)));
    } catch (const Error& e) {
      const std::string who = i < row_names.size() ? "sample '" + row_names[i] + "'" : "row " + std::to_string(i);
      rethrow_with_context(e, "layer " + std::to_string(probe.layer) + ", " + who);
    }
  }
  return qs;
}

FittedDetector fit_detector(const ActivationBundle& train, const std::vector<ProbeConfig>& configs,
                            std::size_t workers) {
  FittedDetector det;
  det.model_name = train.manifest.model_name;
  det.num_layers = train.num_layers();
  det.hidden_dim = train.hidden_dim();
  for (const auto& cfg : configs) {
    validate_config(cfg, det.num_layers);
    const std::string where = "modality " + std::string(to_string(cfg.modality));
    if (det.modalities.contains(cfg.modality)) fail(ErrorCode::kInvalidArgument, where + " configured twice");
    const auto idx = indices_of(train, cfg.modality);
    if (idx.empty()) fail(ErrorCode::kMissingModality, where + ": no training samples");
    if (cfg.k > idx.size()) {
      fail(ErrorCode::kInvalidArgument, where + ": k=" + std::to_string(cfg.k) + " exceeds the " +
                                            std::to_string(idx.size()) + " training samples");
    }
    std::vector<std::uint8_t> labels;
    labels.reserve(idx.size());
    for (auto i : idx) labels.push_back(static_cast<std::uint8_t>(train.records[i].label));

    const std::size_t n = cfg.layers.size();
    std::vector<LayerProbe> probes(n);
    std::vector<std::exception_ptr> errors(n);
    auto fit_one = [&](std::size_t j) {
      const std::size_t layer = cfg.layers.lo + j;
      try {
        probes[j] = fit_layer_probe(train.layers[layer].select_rows(idx), labels, layer, cfg.c);
      } catch (const Error& e) {
        errors[j] = std::make_exception_ptr(Error(e.code(), where + ", layer " + std::to_string(layer) + ": " + e.what()));
      } catch (...) {
        errors[j] = std::current_exception();
      }
    };
    const std::size_t nworkers = std::clamp<std::size_t>(workers, 1, n);
    if (nworkers == 1) {
      for (std::size_t j = 0; j < n; ++j) fit_one(j);
    } else {
      std::vector<std::jthread> threads;
      for (std::size_t w = 0; w < nworkers; ++w) {
        threads.emplace_back([&, w] {
          for (std::size_t j = w; j < n; j += nworkers) fit_one(j);
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    det.modalities[cfg.modality] = ModalityProbes{cfg, std::move(probes)};
  }
  return det;
}

ScoreTrace score_input(const FittedDetector& det, const Matrix& activations, Modality m) {
  const auto& mp = det.entry(m);
  if (activations.rows() != det.num_layers || activations.cols() != det.hidden_dim) {
    fail(ErrorCode::kDimensionMismatch,
         "activations are " + std::to_string(activations.rows()) + " x " + std::to_string(activations.cols()) +
             ", detector expects " + std::to_string(det.num_layers) + " x " + std::to_string(det.hidden_dim));
  }
  std::vector<std::uint32_t> hits;
  for (const auto& probe : mp.probes) {
    auto row = activations.select_rows(std::vector<std::size_t>{probe.layer});
    hits.push_back(hits_for(probe, prepare_queries(probe, row), mp.config.k, 1).front());
  }
  return assemble_trace("", mp.config, hits);
}

std::vector<ScoreTrace> score_bundle(const FittedDetector& det, const ActivationBundle& data, std::size_t workers) {
  if (data.num_layers() != det.num_layers || data.hidden_dim() != det.hidden_dim) {
    fail(ErrorCode::kDimensionMismatch,
         "bundle has L=" + std::to_string(data.num_layers()) + ", d=" + std::to_string(data.hidden_dim()) +
             "; detector expects L=" + std::to_string(det.num_layers) + ", d=" + std::to_string(det.hidden_dim));
  }
  std::vector<ScoreTrace> traces(data.num_samples());
  for (Modality m : kAllModalities) {
    const auto idx = indices_of(data, m);
    if (idx.empty()) continue;
    const auto& mp = det.entry(m);
    const std::size_t nl = mp.probes.size();
    std::vector<std::uint32_t> hits(idx.size() * nl);
    for (std::size_t j = 0; j < nl; ++j) {
      const auto& probe = mp.probes[j];
      std::vector<std::string> names;
      names.reserve(idx.size());
      for (auto i : idx) names.push_back(data.records[i].sample_id);
      const auto qs = prepare_queries(probe, data.layers[probe.layer].select_rows(idx), names);
      const auto layer_hits = hits_for(probe, qs, mp.config.k, workers);
      for (std::size_t i = 0; i < idx.size(); ++i) hits[i * nl + j] = layer_hits[i];
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      traces[idx[i]] = assemble_trace(data.records[idx[i]].sample_id, mp.config,
                                      std::span<const std::uint32_t>(hits.data() + i * nl, nl));
    }
  }
  return traces;
}

void save_detector(const FittedDetector& det, const std::filesystem::path& path) {
  container::Header header{det.model_name, static_cast<std::uint32_t>(det.num_layers),
                           static_cast<std::uint32_t>(det.hidden_dim)};
  std::vector<container::Section> sections;
  for (const auto& [m, mp] : det.modalities) {
    container::Writer w;
    write_probes(w, mp);
    sections.push_back({container::SectionTag::kProbes, std::move(w.buffer())});
  }
  container::write_file(path, header, sections);
}

FittedDetector load_detector(const std::filesystem::path& path) {
  container::Header header;
  std::vector<container::Section> sections;
  container::read_file(path, header, sections);
  FittedDetector det;
  det.model_name = header.model_name;
  det.num_layers = header.num_layers;
  det.hidden_dim = header.hidden_dim;
  for (const auto& s : sections) {
    if (s.tag != container::SectionTag::kProbes) continue;
    container::Reader r(s.payload);
    auto mp = read_probes(r, det.num_layers, det.hidden_dim);
    if (!r.done()) fail(ErrorCode::kCorrupt, "trailing bytes in probe section");
    const auto m = mp.config.modality;
    if (!det.modalities.emplace(m, std::move(mp)).second) {
      fail(ErrorCode::kCorrupt, "detector file holds two probe sections for one modality");
    }
  }
  if (det.modalities.empty()) {
    fail(ErrorCode::kInvalidArgument, path.string() + " holds no SALLIE probe sections");
  }
  return det;
}

}  // namespace sallie
