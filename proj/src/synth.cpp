#include "sallie/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "sallie/error.hpp"
#include "sallie/pca.hpp"

namespace sallie {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

std::mt19937_64 stream(std::uint64_t seed, const std::string& name) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(fnv1a(name))));
}

class Normal {
 public:
  explicit Normal(std::mt19937_64 eng) : eng_(eng) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1], u2 in [0, 1), both with 53 random bits.
    const double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::vector<double> unit_direction(std::uint64_t seed, const std::string& name, std::size_t d) {
  Normal n(stream(seed, name));
  std::vector<double> v(d);
  double norm = 0.0;
  for (auto& x : v) {
    x = n();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

const SynthGroup& find_group(const SynthSpec& spec, const std::string& name) {
  for (const auto& g : spec.groups) {
    if (g.name == name) return g;
  }
  fail(ErrorCode::kInvalidArgument, "spec has no group '" + name + "'");
}

}  // namespace

GroupTraits group_traits(const std::string& name) {
  if (name == "benign-text") return {Label::kBenign, Modality::kText, AttackType::kNone};
  if (name == "benign-vis") return {Label::kBenign, Modality::kVis, AttackType::kNone};
  if (name == "jb-text") return {Label::kMalicious, Modality::kText, AttackType::kJailbreak};
  if (name == "pi-text") return {Label::kMalicious, Modality::kText, AttackType::kPromptInjection};
  if (name == "jb-vis") return {Label::kMalicious, Modality::kVis, AttackType::kJailbreak};
  if (name == "pi-vis") return {Label::kMalicious, Modality::kVis, AttackType::kPromptInjection};
  fail(ErrorCode::kInvalidArgument, "unknown synthetic group '" + name + "'");
}

void validate_spec(const SynthSpec& s) {
  if (s.num_layers < 1 || s.hidden_dim < 1) fail(ErrorCode::kInvalidArgument, "synthetic spec needs L >= 1 and d >= 1");
  if (!(s.sigma > 0.0) || !std::isfinite(s.sigma)) fail(ErrorCode::kInvalidArgument, "sigma must be positive");
  for (double v : {s.base_norm, s.modality_offset, s.edge_factor}) {
    if (!std::isfinite(v) || v < 0.0) fail(ErrorCode::kInvalidArgument, "spec offsets must be finite and non-negative");
  }
  if (s.split.empty()) fail(ErrorCode::kInvalidArgument, "split name must not be empty");
  for (std::size_t i = 0; i < s.groups.size(); ++i) {
    const auto& g = s.groups[i];
    group_traits(g.name);
    if (!std::isfinite(g.separation) || g.separation < 0.0) {
      fail(ErrorCode::kInvalidArgument, "group '" + g.name + "' separation must be finite and non-negative");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (s.groups[j].name == g.name) fail(ErrorCode::kInvalidArgument, "group '" + g.name + "' listed twice");
    }
  }
}

SynthSpec parse_synth_spec(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("synthetic spec: ") + e.what());
  }
  SynthSpec s;
  try {
    s.model_name = j.value("model_name", s.model_name);
    s.num_layers = j.at("num_layers").get<std::size_t>();
    s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    s.seed = j.value("seed", s.seed);
    s.split = j.value("split", s.split);
    s.sigma = j.value("sigma", s.sigma);
    s.base_norm = j.value("base_norm", s.base_norm);
    s.modality_offset = j.value("modality_offset", s.modality_offset);
    s.edge_factor = j.value("edge_factor", s.edge_factor);
    for (const auto& g : j.at("groups")) {
      s.groups.push_back({g.at("name").get<std::string>(), g.at("count").get<std::size_t>(),
                          g.value("separation", 0.0)});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("synthetic spec: ") + e.what());
  }
  validate_spec(s);
  return s;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kMissingFile, "cannot open synthetic spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synth_spec(ss.str());
}

std::string synth_spec_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["model_name"] = s.model_name;
  j["num_layers"] = s.num_layers;
  j["hidden_dim"] = s.hidden_dim;
  j["seed"] = s.seed;
  j["split"] = s.split;
  j["sigma"] = s.sigma;
  j["base_norm"] = s.base_norm;
  j["modality_offset"] = s.modality_offset;
  j["edge_factor"] = s.edge_factor;
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : s.groups) {
    j["groups"].push_back({{"name", g.name}, {"count", g.count}, {"separation", g.separation}});
  }
  return j.dump(2) + "\n";
}

double separation_factor(const SynthSpec& s, std::size_t l) {
  const std::size_t L = s.num_layers;
  const std::size_t lo = L / 4, hi = 3 * L / 4;
  if (l >= lo && l < hi) return 1.0;
  const double e = s.edge_factor;
  if (l < lo) return e + (1.0 - e) * static_cast<double>(l) / static_cast<double>(lo);
  // l >= hi: 1 just inside the band, edge_factor at the last layer.
  const double span = static_cast<double>(L - hi);
  return e + (1.0 - e) * static_cast<double>(L - 1 - l) / span;
}

std::vector<double> scheduled_center(const SynthSpec& s, const std::string& group, std::size_t l) {
  const auto& g = find_group(s, group);
  const auto traits = group_traits(g.name);
  const std::string layer = "layer-" + std::to_string(l);
  const auto u = unit_direction(s.seed, "base/" + layer, s.hidden_dim);
  const auto v = unit_direction(s.seed, "modality/" + std::string(to_string(traits.modality)) + "/" + layer, s.hidden_dim);
  const auto w = unit_direction(s.seed, "group/" + g.name + "/" + layer, s.hidden_dim);
  const double f = g.separation * separation_factor(s, l);
  std::vector<double> c(s.hidden_dim);
  for (std::size_t j = 0; j < c.size(); ++j) c[j] = s.base_norm * u[j] + s.modality_offset * v[j] + f * w[j];
  return c;
}

ActivationBundle generate(const SynthSpec& s) {
  validate_spec(s);
  const std::size_t L = s.num_layers, d = s.hidden_dim;
  std::size_t n = 0;
  for (const auto& g : s.groups) n += g.count;

  std::vector<SampleRecord> records;
  records.reserve(n);
  std::vector<std::vector<float>> layers(L, std::vector<float>(n * d));
  const double spread = s.sigma / std::sqrt(static_cast<double>(d));
  std::size_t row = 0;
  for (const auto& g : s.groups) {
    const auto traits = group_traits(g.name);
    std::vector<std::vector<double>> centers;
    for (std::size_t l = 0; l < L; ++l) centers.push_back(scheduled_center(s, g.name, l));
    Normal noise(stream(s.seed, "samples/" + s.split + "/" + g.name));
    for (std::size_t i = 0; i < g.count; ++i, ++row) {
      records.push_back({s.split + "-" + g.name + "-" + std::to_string(i), traits.label, traits.modality,
                         "synth-" + g.name, traits.attack});
      for (std::size_t l = 0; l < L; ++l) {
        float* out = layers[l].data() + row * d;
        for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(centers[l][j] + spread * noise());
      }
    }
  }
  std::vector<Matrix> mats;
  mats.reserve(L);
  for (auto& v : layers) mats.emplace_back(n, d, std::move(v));
  return make_bundle(s.model_name, d, std::move(records), std::move(mats));
}

std::string group_of(const SampleRecord& r) {
  const std::string kind = r.label == Label::kBenign ? "benign" : std::string(to_string(r.attack_type));
  return kind + "-" + std::string(to_string(r.modality));
}

std::vector<ProjectedPoint> project_2d(const ActivationBundle& b, std::size_t layer) {
  if (layer >= b.num_layers()) {
    fail(ErrorCode::kInvalidArgument, "layer " + std::to_string(layer) + " out of range for L=" + std::to_string(b.num_layers()));
  }
  if (b.num_samples() < 3) fail(ErrorCode::kInvalidArgument, "projection needs at least 3 samples");
  const auto model = fit_pca(b.layers[layer], 2);
  std::vector<ProjectedPoint> out;
  out.reserve(b.num_samples());
  for (std::size_t i = 0; i < b.num_samples(); ++i) {
    const auto p = transform(model, b.layers[layer].row(i));
    out.push_back({b.records[i].sample_id, group_of(b.records[i]), p[0], p[1]});
  }
  return out;
}

std::string projection_csv(const std::vector<ProjectedPoint>& points) {
  std::ostringstream out;
  out << "sample_id,group,pc1,pc2\n";
  char buf[64];
  for (const auto& p : points) {
    out << p.sample_id << ',' << p.group << ',';
    std::snprintf(buf, sizeof buf, "%.9g,%.9g", p.pc1, p.pc2);
    out << buf << '\n';
  }
  return out.str();
}

}  // namespace sallie
