#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sallie/bundle.hpp"

namespace sallie {

// Synthetic hidden-state geometry. Each group is a spherical Gaussian per layer around
//
//   center(g, l) = base_norm * u_l + modality_offset * v_{l, modality(g)}
//                  + separation(g) * f(l) * w_{l, g}
//
// with random unit directions u, v, w drawn from the seed. f(l) is 1 on the middle band
// [floor(L/4), floor(3L/4)) and ramps linearly to edge_factor at layers 0 and L-1.
// sigma is the cluster radius: coordinates get standard deviation sigma / sqrt(d), so
// separations read directly as multiples of sigma.
//
// Randomness: std::mt19937_64 streams seeded by SplitMix64 over the seed and an FNV-1a hash
// of the stream name; normals by Box-Muller. Centers depend only on the seed; samples on
// (seed, split, group). Both algorithms are fixed by their definitions, so output is the
// same on every platform.

struct SynthGroup {
  std::string name;  // benign-text, benign-vis, jb-text, pi-text, jb-vis, pi-vis
  std::size_t count = 0;
  double separation = 0.0;
};

struct SynthSpec {
  std::string model_name = "synthetic";
  std::size_t num_layers = 12;
  std::size_t hidden_dim = 64;
  std::uint64_t seed = 0;
  std::string split = "train";
  double sigma = 1.0;
  double base_norm = 4.0;
  double modality_offset = 1.0;
  double edge_factor = 0.0;
  std::vector<SynthGroup> groups;
};

/// Known group names and their record fields.
struct GroupTraits {
  Label label;
  Modality modality;
  AttackType attack;
};
GroupTraits group_traits(const std::string& name);

/// Throws kInvalidArgument for unknown groups, sigma <= 0, L < 1, d < 1 and the like.
void validate_spec(const SynthSpec& spec);
SynthSpec parse_synth_spec(const std::string& json_text);
SynthSpec load_synth_spec(const std::filesystem::path& path);
std::string synth_spec_json(const SynthSpec& spec);

double separation_factor(const SynthSpec& spec, std::size_t layer);
/// The scheduled center of a group at one layer.
std::vector<double> scheduled_center(const SynthSpec& spec, const std::string& group, std::size_t layer);

/// Groups are emitted in spec order; sample ids are "<split>-<group>-<index>".
ActivationBundle generate(const SynthSpec& spec);

struct ProjectedPoint {
  std::string sample_id;
  std::string group;
  double pc1 = 0.0;
  double pc2 = 0.0;
};

/// Fits a 2-component PCA on one layer and projects every sample. Requires N >= 3 and rank >= 2.
std::vector<ProjectedPoint> project_2d(const ActivationBundle& bundle, std::size_t layer);
/// Group label derived from a record: "<benign|jailbreak|prompt_injection>-<modality>".
std::string group_of(const SampleRecord& r);
std::string projection_csv(const std::vector<ProjectedPoint>& points);

}  // namespace sallie
