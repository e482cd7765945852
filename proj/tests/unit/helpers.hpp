#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sallie/bundle.hpp"
#include "sallie/error.hpp"

namespace testutil {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("sallie-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline sallie::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<float> n(0.0f, static_cast<float>(scale));
  sallie::Matrix m(rows, cols);
  for (auto& v : m.data()) v = n(rng);
  return m;
}

/// Random labelled bundle; sample i gets modality i % 2 when both modalities are asked for.
inline sallie::ActivationBundle random_bundle(std::mt19937_64& rng, std::size_t n, std::size_t L, std::size_t d,
                                              bool both_modalities = true) {
  std::vector<sallie::SampleRecord> records;
  std::bernoulli_distribution coin(0.4);
  for (std::size_t i = 0; i < n; ++i) {
    sallie::SampleRecord r;
    r.sample_id = "s" + std::to_string(i);
    const bool mal = i < 2 ? i == 1 : coin(rng);
    r.label = mal ? sallie::Label::kMalicious : sallie::Label::kBenign;
    r.attack_type = mal ? (i % 3 ? sallie::AttackType::kJailbreak : sallie::AttackType::kPromptInjection)
                        : sallie::AttackType::kNone;
    r.modality = both_modalities && (i / 2) % 2 ? sallie::Modality::kVis : sallie::Modality::kText;
    r.dataset_tag = "set" + std::to_string(i % 3);
    records.push_back(r);
  }
  std::vector<sallie::Matrix> layers;
  for (std::size_t l = 0; l < L; ++l) layers.push_back(random_matrix(rng, n, d));
  return sallie::make_bundle("test-model", d, std::move(records), std::move(layers));
}

template <typename F>
sallie::ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const sallie::Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a sallie::Error");
}

}  // namespace testutil
