#include "sallie/bundle.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "sallie/error.hpp"

namespace sallie {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kRecordsFile = "records.jsonl";

void to_little_endian(std::span<float> values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (float& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = __builtin_bswap32(bits);
      v = std::bit_cast<float>(bits);
    }
  }
}

std::string record_context(std::size_t line) { return "records.jsonl line " + std::to_string(line + 1); }

void check_record(const SampleRecord& r, const std::string& where) {
  bool benign = r.label == Label::kBenign;
  bool no_attack = r.attack_type == AttackType::kNone;
  if (benign != no_attack) {
    fail(ErrorCode::kManifestInconsistent,
         where + ": sample '" + r.sample_id + "' has label " + (benign ? "0" : "1") +
             " but attack_type " + std::string(to_string(r.attack_type)));
  }
}

ojson manifest_json(const BundleManifest& m) {
  ojson j;
  j["format_version"] = m.format_version;
  j["model_name"] = m.model_name;
  j["num_layers"] = m.num_layers;
  j["hidden_dim"] = m.hidden_dim;
  j["num_samples"] = m.num_samples;
  j["dtype"] = std::string(to_string(m.dtype));
  j["layer_files"] = m.layer_file_names;
  return j;
}

ojson record_json(const SampleRecord& r) {
  ojson j;
  j["sample_id"] = r.sample_id;
  j["label"] = static_cast<int>(r.label);
  j["modality"] = std::string(to_string(r.modality));
  j["dataset_tag"] = r.dataset_tag;
  j["attack_type"] = std::string(to_string(r.attack_type));
  return j;
}

SampleRecord parse_record(const std::string& line, std::size_t lineno) {
  const auto where = record_context(lineno);
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const ojson::parse_error& e) {
    fail(ErrorCode::kParse, where + ": " + e.what());
  }
  try {
    SampleRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    int label = j.at("label").get<int>();
    if (label != 0 && label != 1) fail(ErrorCode::kParse, where + ": label must be 0 or 1");
    r.label = static_cast<Label>(label);
    auto modality = parse_modality(j.at("modality").get<std::string>());
    if (!modality) fail(ErrorCode::kParse, where + ": unknown modality");
    r.modality = *modality;
    r.dataset_tag = j.at("dataset_tag").get<std::string>();
    auto attack = parse_attack_type(j.at("attack_type").get<std::string>());
    if (!attack) fail(ErrorCode::kParse, where + ": unknown attack_type");
    r.attack_type = *attack;
    return r;
  } catch (const ojson::exception& e) {
    fail(ErrorCode::kParse, where + ": " + e.what());
  }
}

void check_layer_file_name(const std::string& name) {
  if (name.empty() || name.find('/') != std::string::npos || name.find('\\') != std::string::npos ||
      name == "." || name == "..") {
    fail(ErrorCode::kManifestInconsistent, "layer file name '" + name + "' is not a plain file name");
  }
}

}  // namespace

std::string_view to_string(Modality m) { return m == Modality::kText ? "text" : "vis"; }

std::string_view to_string(AttackType a) {
  switch (a) {
    case AttackType::kNone: return "none";
    case AttackType::kJailbreak: return "jailbreak";
    case AttackType::kPromptInjection: return "prompt_injection";
  }
  return "none";
}

std::string_view to_string(DType) { return "f32le"; }

std::optional<Modality> parse_modality(std::string_view s) {
  if (s == "text") return Modality::kText;
  if (s == "vis") return Modality::kVis;
  return std::nullopt;
}

std::optional<AttackType> parse_attack_type(std::string_view s) {
  if (s == "none") return AttackType::kNone;
  if (s == "jailbreak") return AttackType::kJailbreak;
  if (s == "prompt_injection") return AttackType::kPromptInjection;
  return std::nullopt;
}

std::string layer_file_name(std::size_t layer) { return "layer_" + std::to_string(layer) + ".bin"; }

Matrix ActivationBundle::sample_activations(std::size_t i) const {
  Matrix out(layers.size(), manifest.hidden_dim);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto src = layers[l].row(i);
    std::copy(src.begin(), src.end(), out.row(l).begin());
  }
  return out;
}

ActivationBundle make_bundle(std::string model_name, std::size_t hidden_dim,
                             std::vector<SampleRecord> records, std::vector<Matrix> layers) {
  ActivationBundle b;
  b.manifest.model_name = std::move(model_name);
  b.manifest.num_layers = layers.size();
  b.manifest.hidden_dim = hidden_dim;
  b.manifest.num_samples = records.size();
  for (std::size_t l = 0; l < layers.size(); ++l) b.manifest.layer_file_names.push_back(layer_file_name(l));
  b.records = std::move(records);
  b.layers = std::move(layers);
  validate_bundle(b);
  return b;
}

void validate_bundle(const ActivationBundle& b) {
  const auto& m = b.manifest;
  if (m.format_version != BundleManifest::kFormatVersion) {
    fail(ErrorCode::kUnsupportedVersion, "bundle format_version " + std::to_string(m.format_version));
  }
  if (m.num_layers == 0 || m.hidden_dim == 0) {
    fail(ErrorCode::kManifestInconsistent, "num_layers and hidden_dim must be positive");
  }
  if (m.layer_file_names.size() != m.num_layers) {
    fail(ErrorCode::kManifestInconsistent,
         "manifest lists " + std::to_string(m.layer_file_names.size()) + " layer files for " +
             std::to_string(m.num_layers) + " layers");
  }
  for (const auto& name : m.layer_file_names) check_layer_file_name(name);
  if (b.records.size() != m.num_samples) {
    fail(ErrorCode::kManifestInconsistent, "bundle has " + std::to_string(b.records.size()) +
                                               " records, manifest says " + std::to_string(m.num_samples));
  }
  if (b.layers.size() != m.num_layers) {
    fail(ErrorCode::kDimensionMismatch, "bundle has " + std::to_string(b.layers.size()) +
                                            " layer matrices, manifest says " + std::to_string(m.num_layers));
  }
  for (std::size_t l = 0; l < b.layers.size(); ++l) {
    const auto& mat = b.layers[l];
    if (mat.rows() != m.num_samples || mat.cols() != m.hidden_dim) {
      fail(ErrorCode::kDimensionMismatch,
           "layer " + std::to_string(l) + " is " + std::to_string(mat.rows()) + " x " +
               std::to_string(mat.cols()) + ", expected " + std::to_string(m.num_samples) + " x " +
               std::to_string(m.hidden_dim));
    }
    if (auto bad = mat.first_non_finite(); bad != mat.data().size()) {
      fail(ErrorCode::kNonFinite, "layer " + std::to_string(l) + " row " + std::to_string(bad / m.hidden_dim) +
                                      " has a non-finite value");
    }
  }
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < b.records.size(); ++i) {
    check_record(b.records[i], "record " + std::to_string(i));
    if (!ids.insert(b.records[i].sample_id).second) {
      fail(ErrorCode::kManifestInconsistent, "duplicate sample_id '" + b.records[i].sample_id + "'");
    }
  }
}

void write_bundle(const ActivationBundle& bundle, const fs::path& directory) {
  validate_bundle(bundle);

  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + directory.string() + ": " + ec.message());

  {
    std::ofstream out(directory / kManifestFile, std::ios::trunc);
    out << manifest_json(bundle.manifest).dump(2) << '\n';
    if (!out) fail(ErrorCode::kIo, "failed writing " + (directory / kManifestFile).string());
  }
  {
    std::ofstream out(directory / kRecordsFile, std::ios::trunc);
    for (const auto& r : bundle.records) out << record_json(r).dump() << '\n';
    if (!out) fail(ErrorCode::kIo, "failed writing " + (directory / kRecordsFile).string());
  }
  for (std::size_t l = 0; l < bundle.layers.size(); ++l) {
    const auto path = directory / bundle.manifest.layer_file_names[l];
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    std::vector<float> buf = bundle.layers[l].data();
    to_little_endian(buf);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
  }
}

BundleManifest read_manifest(const fs::path& directory) {
  const auto path = directory / kManifestFile;
  if (!fs::is_regular_file(path)) fail(ErrorCode::kMissingFile, "missing " + path.string());
  std::ifstream in(path);
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const ojson::parse_error& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  BundleManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != BundleManifest::kFormatVersion) {
      fail(ErrorCode::kUnsupportedVersion,
           path.string() + ": unsupported format_version " + std::to_string(m.format_version));
    }
    m.model_name = j.at("model_name").get<std::string>();
    m.num_layers = j.at("num_layers").get<std::size_t>();
    m.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    m.num_samples = j.at("num_samples").get<std::size_t>();
    auto dtype = j.at("dtype").get<std::string>();
    if (dtype != "f32le") fail(ErrorCode::kUnsupportedVersion, path.string() + ": unsupported dtype " + dtype);
    m.layer_file_names = j.at("layer_files").get<std::vector<std::string>>();
  } catch (const ojson::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  if (m.num_layers == 0 || m.hidden_dim == 0) {
    fail(ErrorCode::kManifestInconsistent, path.string() + ": num_layers and hidden_dim must be positive");
  }
  if (m.layer_file_names.size() != m.num_layers) {
    fail(ErrorCode::kManifestInconsistent,
         path.string() + ": num_layers is " + std::to_string(m.num_layers) + " but " +
             std::to_string(m.layer_file_names.size()) + " layer files are listed");
  }
  for (const auto& name : m.layer_file_names) check_layer_file_name(name);
  return m;
}

Matrix read_layer(const fs::path& directory, const BundleManifest& m, std::size_t layer) {
  if (layer >= m.num_layers) {
    fail(ErrorCode::kInvalidArgument, "layer " + std::to_string(layer) + " out of range");
  }
  const auto path = directory / m.layer_file_names[layer];
  if (!fs::is_regular_file(path)) fail(ErrorCode::kMissingFile, "missing " + path.string());
  const std::uintmax_t expected = static_cast<std::uintmax_t>(m.num_samples) * m.hidden_dim * sizeof(float);
  const std::uintmax_t actual = fs::file_size(path);
  if (actual != expected) {
    fail(ErrorCode::kSizeMismatch, path.string() + " is " + std::to_string(actual) + " bytes, expected " +
                                       std::to_string(expected));
  }
  std::vector<float> data(m.num_samples * m.hidden_dim);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(expected));
  if (!in) fail(ErrorCode::kIo, "failed reading " + path.string());
  to_little_endian(data);
  Matrix mat(m.num_samples, m.hidden_dim, std::move(data));
  if (auto bad = mat.first_non_finite(); bad != mat.data().size()) {
    fail(ErrorCode::kNonFinite, path.string() + ": row " + std::to_string(bad / m.hidden_dim) + " column " +
                                    std::to_string(bad % m.hidden_dim) + " is not finite");
  }
  return mat;
}

ActivationBundle read_bundle(const fs::path& directory) {
  if (!fs::is_directory(directory)) fail(ErrorCode::kMissingFile, "no bundle directory " + directory.string());
  ActivationBundle b;
  b.manifest = read_manifest(directory);

  const auto rpath = directory / kRecordsFile;
  if (!fs::is_regular_file(rpath)) fail(ErrorCode::kMissingFile, "missing " + rpath.string());
  std::ifstream in(rpath);
  std::string line;
  std::unordered_set<std::string> ids;
  for (std::size_t lineno = 0; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    auto r = parse_record(line, lineno);
    check_record(r, record_context(lineno));
    if (!ids.insert(r.sample_id).second) {
      fail(ErrorCode::kManifestInconsistent, record_context(lineno) + ": duplicate sample_id '" + r.sample_id + "'");
    }
    b.records.push_back(std::move(r));
  }
  if (b.records.size() != b.manifest.num_samples) {
    fail(ErrorCode::kManifestInconsistent, rpath.string() + " has " + std::to_string(b.records.size()) +
                                               " records, manifest says " +
                                               std::to_string(b.manifest.num_samples));
  }
  b.layers.reserve(b.manifest.num_layers);
  for (std::size_t l = 0; l < b.manifest.num_layers; ++l) b.layers.push_back(read_layer(directory, b.manifest, l));
  return b;
}

ActivationBundle select_rows(const ActivationBundle& bundle,
                             const std::function<bool(const SampleRecord&)>& predicate) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < bundle.records.size(); ++i) {
    if (predicate(bundle.records[i])) keep.push_back(i);
  }
  ActivationBundle out;
  out.manifest = bundle.manifest;
  out.manifest.num_samples = keep.size();
  out.records.reserve(keep.size());
  for (auto i : keep) out.records.push_back(bundle.records[i]);
  out.layers.reserve(bundle.layers.size());
  for (const auto& layer : bundle.layers) out.layers.push_back(layer.select_rows(keep));
  return out;
}

}  // namespace sallie
