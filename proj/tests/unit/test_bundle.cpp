#include <doctest.h>

#include <cstring>
#include <limits>

#include <fstream>

#include <json.hpp>

#include "helpers.hpp"
#include "sallie/bundle.hpp"

using namespace sallie;
using testutil::error_code_of;
using testutil::TempDir;

TEST_SUITE("activation-store") {
  TEST_CASE("empty bundle writes zero-byte layer files") {
    TempDir dir;
    auto b = make_bundle("m", 4, {}, {Matrix(0, 4), Matrix(0, 4)});
    write_bundle(b, dir.path());
    CHECK(std::filesystem::file_size(dir / "layer_0.bin") == 0);
    CHECK(std::filesystem::file_size(dir / "layer_1.bin") == 0);
    CHECK(read_bundle(dir.path()) == b);
  }

  TEST_CASE("layer file size is N*d*4") {
    TempDir dir;
    std::mt19937_64 rng(1);
    auto b = testutil::random_bundle(rng, 3, 2, 4);
    write_bundle(b, dir.path());
    CHECK(std::filesystem::file_size(dir / "layer_0.bin") == 48);
    CHECK(std::filesystem::file_size(dir / "layer_1.bin") == 48);
  }

  TEST_CASE("random bundles round-trip exactly") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
      TempDir dir;
      auto b = testutil::random_bundle(rng, 1 + rng() % 40, 1 + rng() % 5, 1 + rng() % 17);
      write_bundle(b, dir.path());
      const auto back = read_bundle(dir.path());
      REQUIRE(back == b);
      for (std::size_t l = 0; l < b.num_layers(); ++l) {
        CHECK(std::memcmp(back.layers[l].data().data(), b.layers[l].data().data(), b.layers[l].data().size() * 4) == 0);
      }
    }
  }

  TEST_CASE("manifest layout") {
    TempDir dir;
    std::mt19937_64 rng(3);
    write_bundle(testutil::random_bundle(rng, 2, 3, 5), dir.path());
    std::ifstream in(dir / "manifest.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["format_version"] == 1);
    CHECK(j["dtype"] == "f32le");
    CHECK(j["num_layers"] == 3);
    CHECK(j["hidden_dim"] == 5);
    CHECK(j["num_samples"] == 2);
    CHECK(j["layer_files"] == nlohmann::json({"layer_0.bin", "layer_1.bin", "layer_2.bin"}));
    std::ifstream rec(dir / "records.jsonl");
    std::string line;
    std::getline(rec, line);
    const auto r = nlohmann::json::parse(line);
    for (const char* key : {"sample_id", "label", "modality", "dataset_tag", "attack_type"}) CHECK(r.contains(key));
  }

  TEST_CASE("truncated layer file is a size mismatch") {
    TempDir dir;
    std::mt19937_64 rng(4);
    write_bundle(testutil::random_bundle(rng, 3, 2, 4), dir.path());
    std::filesystem::resize_file(dir / "layer_1.bin", 47);
    CHECK(error_code_of([&] { read_bundle(dir.path()); }) == ErrorCode::kSizeMismatch);
  }

  TEST_CASE("manifest listing fewer layer files than L is inconsistent") {
    TempDir dir;
    std::mt19937_64 rng(5);
    write_bundle(testutil::random_bundle(rng, 3, 2, 4), dir.path());
    nlohmann::json j;
    {
      std::ifstream in(dir / "manifest.json");
      j = nlohmann::json::parse(in);
    }
    j["num_layers"] = 3;
    std::ofstream(dir / "manifest.json") << j.dump();
    CHECK(error_code_of([&] { read_bundle(dir.path()); }) == ErrorCode::kManifestInconsistent);
  }

  TEST_CASE("distinct error categories on read") {
    std::mt19937_64 rng(6);
    SUBCASE("missing directory") {
      CHECK(error_code_of([] { read_bundle("/nonexistent/sallie/bundle"); }) == ErrorCode::kMissingFile);
    }
    SUBCASE("missing layer file") {
      TempDir dir;
      write_bundle(testutil::random_bundle(rng, 3, 2, 4), dir.path());
      std::filesystem::remove(dir / "layer_0.bin");
      CHECK(error_code_of([&] { read_bundle(dir.path()); }) == ErrorCode::kMissingFile);
    }
    SUBCASE("unsupported version") {
      TempDir dir;
      write_bundle(testutil::random_bundle(rng, 3, 2, 4), dir.path());
      nlohmann::json j;
      {
        std::ifstream in(dir / "manifest.json");
        j = nlohmann::json::parse(in);
      }
      j["format_version"] = 2;
      std::ofstream(dir / "manifest.json") << j.dump();
      CHECK(error_code_of([&] { read_bundle(dir.path()); }) == ErrorCode::kUnsupportedVersion);
    }
    SUBCASE("NaN in a layer file") {
      TempDir dir;
      auto b = testutil::random_bundle(rng, 3, 2, 4);
      write_bundle(b, dir.path());
      const float nan = std::numeric_limits<float>::quiet_NaN();
      std::fstream f(dir / "layer_1.bin", std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(20);
      f.write(reinterpret_cast<const char*>(&nan), 4);
      f.close();
      CHECK(error_code_of([&] { read_bundle(dir.path()); }) == ErrorCode::kNonFinite);
    }
    SUBCASE("malformed records") {
      TempDir dir;
      write_bundle(testutil::random_bundle(rng, 3, 2, 4), dir.path());
      std::ofstream(dir / "records.jsonl", std::ios::app) << "{not json\n";
      CHECK(error_code_of([&] { read_bundle(dir.path()); }) == ErrorCode::kParse);
    }
  }

  TEST_CASE("write rejects invalid bundles before touching the directory") {
    TempDir dir;
    std::mt19937_64 rng(7);
    auto b = testutil::random_bundle(rng, 3, 2, 4);
    b.layers[1](2, 3) = std::numeric_limits<float>::infinity();
    const auto target = dir / "out";
    CHECK(error_code_of([&] { write_bundle(b, target); }) == ErrorCode::kNonFinite);
    CHECK_FALSE(std::filesystem::exists(target));

    auto c = testutil::random_bundle(rng, 3, 2, 4);
    c.records[0].attack_type = AttackType::kJailbreak;
    c.records[0].label = Label::kBenign;
    CHECK(error_code_of([&] { write_bundle(c, target); }) == ErrorCode::kManifestInconsistent);
    CHECK_FALSE(std::filesystem::exists(target));

    auto e = testutil::random_bundle(rng, 3, 2, 4);
    e.records[1].sample_id = e.records[0].sample_id;
    CHECK(error_code_of([&] { write_bundle(e, target); }) == ErrorCode::kManifestInconsistent);
  }

  TEST_CASE("select_rows") {
    std::vector<SampleRecord> recs{{"a", Label::kBenign, Modality::kText, "x", AttackType::kNone},
                                   {"b", Label::kMalicious, Modality::kVis, "x", AttackType::kJailbreak},
                                   {"c", Label::kMalicious, Modality::kText, "y", AttackType::kPromptInjection}};
    Matrix l0(3, 2, {0, 1, 2, 3, 4, 5});
    Matrix l1(3, 2, {6, 7, 8, 9, 10, 11});
    const auto b = make_bundle("m", 2, recs, {l0, l1});

    const auto text = select_rows(b, [](const SampleRecord& r) { return r.modality == Modality::kText; });
    REQUIRE(text.num_samples() == 2);
    CHECK(text.records[0].sample_id == "a");
    CHECK(text.records[1].sample_id == "c");
    CHECK(text.layers[1] == Matrix(2, 2, {6, 7, 10, 11}));
    CHECK(text.manifest.num_samples == 2);

    const auto none = select_rows(b, [](const SampleRecord&) { return false; });
    CHECK(none.num_samples() == 0);
    CHECK(none.layers[0].rows() == 0);
    CHECK(b.num_samples() == 3);
  }

  TEST_CASE("select_rows keeps record and row pairing") {
    std::mt19937_64 rng(8);
    const auto b = testutil::random_bundle(rng, 50, 3, 6);
    const auto mal = select_rows(b, [](const SampleRecord& r) { return r.label == Label::kMalicious; });
    std::size_t expected = 0;
    for (const auto& r : b.records) expected += r.label == Label::kMalicious;
    CHECK(mal.num_samples() == expected);
    for (std::size_t i = 0; i < mal.num_samples(); ++i) {
      const auto src = std::stoul(mal.records[i].sample_id.substr(1));
      for (std::size_t l = 0; l < 3; ++l) {
        CHECK(std::equal(mal.layers[l].row(i).begin(), mal.layers[l].row(i).end(), b.layers[l].row(src).begin()));
      }
    }
  }
}
