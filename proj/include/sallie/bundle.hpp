#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sallie/matrix.hpp"

namespace sallie {

enum class Label : std::uint8_t { kBenign = 0, kMalicious = 1 };
enum class Modality : std::uint8_t { kText = 0, kVis = 1 };
enum class AttackType : std::uint8_t { kNone = 0, kJailbreak = 1, kPromptInjection = 2 };
enum class DType : std::uint8_t { kF32Le = 0 };

std::string_view to_string(Modality m);
std::string_view to_string(AttackType a);
std::string_view to_string(DType t);
std::optional<Modality> parse_modality(std::string_view s);
std::optional<AttackType> parse_attack_type(std::string_view s);

inline constexpr Modality kAllModalities[] = {Modality::kText, Modality::kVis};

struct BundleManifest {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  std::string model_name;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_samples = 0;
  DType dtype = DType::kF32Le;
  std::vector<std::string> layer_file_names;

  bool operator==(const BundleManifest&) const = default;
};

struct SampleRecord {
  std::string sample_id;
  Label label = Label::kBenign;
  Modality modality = Modality::kText;
  std::string dataset_tag;
  AttackType attack_type = AttackType::kNone;

  bool operator==(const SampleRecord&) const = default;
};

/// Per-layer last-token activations: layers[l].row(i) is sample i at layer l.
struct ActivationBundle {
  BundleManifest manifest;
  std::vector<SampleRecord> records;
  std::vector<Matrix> layers;

  std::size_t num_samples() const { return records.size(); }
  std::size_t num_layers() const { return manifest.num_layers; }
  std::size_t hidden_dim() const { return manifest.hidden_dim; }

  /// The L x d activation matrix of one sample.
  Matrix sample_activations(std::size_t i) const;

  bool operator==(const ActivationBundle&) const = default;
};

/// Canonical file name for layer l: "layer_<l>.bin".
std::string layer_file_name(std::size_t layer);

/// Builds a bundle with default layer file names and a consistent manifest.
ActivationBundle make_bundle(std::string model_name, std::size_t hidden_dim,
                             std::vector<SampleRecord> records, std::vector<Matrix> layers);

/// Throws on any violated invariant (shape, finiteness, label/attack pairing, unique ids).
void validate_bundle(const ActivationBundle& bundle);

void write_bundle(const ActivationBundle& bundle, const std::filesystem::path& directory);
ActivationBundle read_bundle(const std::filesystem::path& directory);

BundleManifest read_manifest(const std::filesystem::path& directory);
/// Reads and validates a single layer file without touching the others.
Matrix read_layer(const std::filesystem::path& directory, const BundleManifest& manifest,
                  std::size_t layer);

ActivationBundle select_rows(const ActivationBundle& bundle,
                             const std::function<bool(const SampleRecord&)>& predicate);

}  // namespace sallie
