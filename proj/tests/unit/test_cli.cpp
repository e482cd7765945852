#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "helpers.hpp"
#include "sallie/cli.hpp"
#include "sallie/detector.hpp"
#include "sallie/synth.hpp"

using namespace sallie;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result sallie_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Small two-modality synthetic splits on disk.
struct Splits {
  testutil::TempDir dir;
  std::string train, valid, test;
  Splits() {
    SynthSpec s;
    s.num_layers = 8;
    s.hidden_dim = 16;
    s.seed = 3;
    s.modality_offset = 2;
    s.groups = {{"benign-text", 120, 0}, {"benign-vis", 120, 0}, {"jb-text", 40, 3},
                {"pi-text", 40, 3},      {"jb-vis", 40, 4},      {"pi-vis", 40, 4}};
    for (const char* split : {"train", "valid", "test"}) {
      s.split = split;
      write_bundle(generate(s), dir / split);
    }
    train = (dir / "train").string();
    valid = (dir / "valid").string();
    test = (dir / "test").string();
  }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("exit codes per category") {
    CHECK(cli::exit_code_for(ErrorCode::kInvalidArgument) == 2);
    CHECK(cli::exit_code_for(ErrorCode::kMissingFile) == 3);
    CHECK(cli::exit_code_for(ErrorCode::kIo) == 3);
    CHECK(cli::exit_code_for(ErrorCode::kParse) == 4);
    CHECK(cli::exit_code_for(ErrorCode::kCorrupt) == 5);
    CHECK(cli::exit_code_for(ErrorCode::kMissingModality) == 5);
    CHECK(cli::exit_code_for(ErrorCode::kRankDeficient) == 6);
    CHECK(cli::exit_code_for(ErrorCode::kInfeasible) == 7);
  }

  TEST_CASE("usage and path errors") {
    CHECK(sallie_run({}).code == 2);
    CHECK(sallie_run({"bogus"}).code == 2);
    CHECK(sallie_run({"--help"}).code == 0);
    CHECK(sallie_run({"fit", "--train", "x"}).code == 2);
    const auto missing = sallie_run({"fit", "--train", "/nonexistent-dir", "--k", "3", "--c", "none", "--layers", "0:1",
                                     "--out", "/tmp/never.sald"});
    CHECK(missing.code == 3);
    INFO(missing.err);
    CHECK(missing.err.rfind("sallie: missing-file", 0) == 0);
    CHECK(sallie_run({"score", "--detector", "/nonexistent.sald", "--input", "."}).code == 3);
    CHECK(sallie_run({"eval", "--detector", "x", "--test", "y", "--format", "xml"}).code == 2);
  }

  TEST_CASE("invalid flag combinations create no files") {
    Splits s;
    const auto out = s.dir / "det.sald";
    CHECK(sallie_run({"fit", "--train", s.train, "--preset", "gemma-3-4b-it", "--k", "3", "--out", out.string()}).code == 2);
    CHECK(sallie_run({"fit", "--train", s.train, "--k", "3", "--c", "zero", "--layers", "0:3", "--out", out.string()})
              .code == 2);
    CHECK(sallie_run({"fit", "--train", s.train, "--k", "3", "--c", "none", "--layers", "0:3", "--tau", "2", "--out",
                      out.string()})
              .code == 2);
    CHECK(sallie_run({"grid", "--train", s.train, "--valid", s.valid, "--fpr-cap", "1.5", "--out", out.string()}).code ==
          2);
    CHECK(sallie_run({"grid", "--train", s.train, "--valid", s.valid, "--ks", "3,x", "--out", out.string()}).code == 2);
    CHECK(sallie_run({"baseline", "--train", s.train, "--valid", s.valid, "--test", s.test, "--which", "all", "--save",
                      out.string()})
              .code == 2);
    CHECK(!fs::exists(out));
    CHECK(sallie_run({"fit", "--train", s.train, "--k", "3", "--c", "none", "--layers", "0:3", "--out",
                      (s.dir / "no-such-dir" / "d.sald").string()})
              .code == 3);
  }

  TEST_CASE("fit, calibrate, score, eval") {
    Splits s;
    const auto det = (s.dir / "det.sald").string();
    auto r = sallie_run({"fit", "--train", s.train, "--k", "5", "--c", "4", "--layers", "2:5", "--out", det});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("fitted text") != std::string::npos);
    CHECK(r.out.find("fitted vis") != std::string::npos);

    const auto before = slurp(det);
    r = sallie_run({"calibrate", "--detector", det, "--valid", s.valid, "--fpr-cap", "0.01"});
    REQUIRE(r.code == 0);
    CHECK(slurp(det) != before);

    r = sallie_run({"score", "--detector", det, "--input", s.test, "--format", "jsonl"});
    REQUIRE(r.code == 0);
    CHECK(count_lines(r.out) == read_bundle(s.test).num_samples());
    const auto first = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
    CHECK(first["sample_id"] == "test-benign-text-0");
    CHECK(first["per_layer_scores"].size() == 4);
    CHECK(first.contains("ensemble_score"));

    const auto table = sallie_run({"score", "--detector", det, "--test", s.test});
    CHECK(table.out.substr(0, table.out.find('\t')) == "test-benign-text-0");

    r = sallie_run({"eval", "--detector", det, "--test", s.test});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("Detection performance") != std::string::npos);
    const auto jr = sallie_run({"eval", "--detector", det, "--test", s.test, "--format", "jsonl"});
    CHECK(nlohmann::json::parse(jr.out.substr(0, jr.out.find('\n')))["slice"] == "overall");

    // Scoring the vis-free detector on vis data is a data error.
    const auto text_only = (s.dir / "text.sald").string();
    REQUIRE(sallie_run({"fit", "--train", s.train, "--modality", "text", "--k", "3", "--c", "none", "--layers", "0:7",
                        "--out", text_only})
                .code == 0);
    CHECK(sallie_run({"score", "--detector", text_only, "--input", s.test}).code == 5);
  }

  TEST_CASE("calibrate reports infeasibility without touching the detector") {
    // k = 1 on its own training rows with labels swapped: every benign scores 1, every attack 0.
    Splits s;
    const auto det = (s.dir / "det.sald").string();
    REQUIRE(sallie_run({"fit", "--train", s.train, "--k", "1", "--c", "none", "--layers", "0:1", "--out", det}).code == 0);
    auto flipped = read_bundle(s.train);
    for (auto& r : flipped.records) {
      const bool mal = r.label == Label::kMalicious;
      r.label = mal ? Label::kBenign : Label::kMalicious;
      r.attack_type = mal ? AttackType::kNone : AttackType::kJailbreak;
    }
    write_bundle(flipped, s.dir / "flipped");
    const auto before = slurp(det);
    const auto r = sallie_run({"calibrate", "--detector", det, "--valid", (s.dir / "flipped").string()});
    CHECK(r.code == 7);
    CHECK(r.err.rfind("sallie: infeasible", 0) == 0);
    CHECK(slurp(det) == before);
  }

  TEST_CASE("score on an empty bundle prints nothing") {
    Splits s;
    const auto det = (s.dir / "det.sald").string();
    REQUIRE(sallie_run({"fit", "--train", s.train, "--k", "3", "--c", "none", "--layers", "0:1", "--out", det}).code == 0);
    std::vector<Matrix> layers(8, Matrix(0, 16));
    write_bundle(make_bundle("synthetic", 16, {}, layers), s.dir / "empty");
    const auto r = sallie_run({"score", "--detector", det, "--input", (s.dir / "empty").string()});
    CHECK(r.code == 0);
    CHECK(r.out.empty());
  }

  TEST_CASE("preset fit uses the shipped configuration") {
    testutil::TempDir tmp;
    std::mt19937_64 rng(71);
    write_bundle(testutil::random_bundle(rng, 300, 34, 130), tmp / "train");
    const auto det = (tmp / "g.sald").string();
    const auto r = sallie_run({"fit", "--train", (tmp / "train").string(), "--preset", "gemma-3-4b-it", "--out", det,
                               "--workers", "4"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto d = load_detector(det);
    CHECK(d.entry(Modality::kText).config == ProbeConfig{Modality::kText, 3, 64, {0, 16}, 0.55});
    CHECK(d.entry(Modality::kVis).config == ProbeConfig{Modality::kVis, 5, 128, {8, 16}, 0.93});
    CHECK(sallie_run({"fit", "--train", (tmp / "train").string(), "--preset", "nope", "--out", det}).code == 2);
  }

  TEST_CASE("grid, baseline, synth and project") {
    Splits s;
    const auto det = (s.dir / "grid.sald").string();
    const auto report = (s.dir / "grid.txt").string();
    auto r = sallie_run({"grid", "--train", s.train, "--valid", s.valid, "--fpr-cap", "0.01", "--ks", "3,5", "--cs",
                         "4,none", "--ranges", "0:7,2:5", "--report", report, "--out", det, "--workers", "3"});
    REQUIRE(r.code == 0);
    CHECK(slurp(report).find("winner vis") != std::string::npos);
    CHECK(load_detector(det).modalities.size() == 2);
    const auto report2 = (s.dir / "grid2.txt").string();
    REQUIRE(sallie_run({"grid", "--train", s.train, "--valid", s.valid, "--fpr-cap", "0.01", "--ks", "3,5", "--cs",
                        "4,none", "--ranges", "0:7,2:5", "--report", report2})
                .code == 0);
    CHECK(slurp(report) == slurp(report2));

    r = sallie_run({"baseline", "--train", s.train, "--valid", s.valid, "--test", s.test, "--fpr-cap", "0.01",
                    "--detector", det, "--format", "jsonl", "--save", (s.dir / "base.sald").string()});
    INFO(r.err);
    CHECK(r.code == 0);
    CHECK(r.out.find("\"method\":\"EEG-Defender\"") != std::string::npos);
    CHECK(r.out.find("\"method\":\"PIShield\"") != std::string::npos);
    CHECK(r.out.find("\"method\":\"SALLIE\"") != std::string::npos);
    r = sallie_run({"baseline", "--train", s.train, "--valid", s.valid, "--test", s.test, "--which", "eeg",
                    "--preset-thresholds"});
    CHECK(r.code == 0);
    CHECK(r.out.find("tau=-0.025000") != std::string::npos);

    const auto spec = (s.dir / "spec.json").string();
    SynthSpec sp;
    sp.num_layers = 4;
    sp.hidden_dim = 6;
    sp.groups = {{"benign-text", 5, 0}, {"jb-text", 5, 2}};
    std::ofstream(spec) << synth_spec_json(sp);
    const auto a = (s.dir / "a").string(), b = (s.dir / "b").string();
    REQUIRE(sallie_run({"synth", "--spec", spec, "--out", a, "--seed", "9", "--split", "valid"}).code == 0);
    REQUIRE(sallie_run({"synth", "--spec", spec, "--out", b, "--seed", "9", "--split", "valid"}).code == 0);
    CHECK(slurp(fs::path(a) / "layer_2.bin") == slurp(fs::path(b) / "layer_2.bin"));
    CHECK(read_bundle(a).records[0].sample_id == "valid-benign-text-0");

    r = sallie_run({"project", "--input", a, "--layer", "1"});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("sample_id,group,pc1,pc2\n", 0) == 0);
    CHECK(count_lines(r.out) == 11);
    CHECK(sallie_run({"project", "--input", a, "--layer", "4"}).code == 2);
    CHECK(sallie_run({"synth", "--spec", report, "--out", (s.dir / "c").string()}).code == 4);
  }

  TEST_CASE("installed binary reports categories through its exit status") {
    const std::string bin = SALLIE_CLI_PATH;
    REQUIRE(fs::exists(bin));
    auto status = [&](const std::string& args) {
      const int raw = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
      return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    CHECK(status("--help") == 0);
    CHECK(status("fit") == 2);
    CHECK(status("score --detector /nonexistent.sald --input /") == 3);
  }
}
