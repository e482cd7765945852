#include "sallie/cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sallie/baselines.hpp"
#include "sallie/bundle.hpp"
#include "sallie/calibration.hpp"
#include "sallie/detector.hpp"
#include "sallie/format.hpp"
#include "sallie/metrics.hpp"
#include "sallie/presets.hpp"
#include "sallie/synth.hpp"

namespace sallie::cli {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return kExitUsage;
    case ErrorCode::kIo:
    case ErrorCode::kMissingFile:
      return kExitPath;
    case ErrorCode::kParse:
      return kExitParse;
    case ErrorCode::kUnsupportedVersion:
    case ErrorCode::kManifestInconsistent:
    case ErrorCode::kSizeMismatch:
    case ErrorCode::kNonFinite:
    case ErrorCode::kCorrupt:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kMissingModality:
    case ErrorCode::kMissingClass:
      return kExitData;
    case ErrorCode::kRankDeficient:
    case ErrorCode::kZeroNorm:
    case ErrorCode::kNonConvergence:
      return kExitNumeric;
    case ErrorCode::kInfeasible:
      return kExitInfeasible;
  }
  return kExitInternal;
}

namespace {

struct Options {
  std::string train, valid, test, input, detector, out, report, spec, split, which = "both";
  std::string modality = "both", format = "table", preset, c, layers;
  std::string ks, cs, ranges;
  std::optional<std::size_t> k, layer;
  std::optional<double> tau;
  std::optional<std::uint64_t> seed;
  double fpr_cap = 0.001;
  double lambda = 1e-2;
  std::size_t workers = 1;
  bool preset_thresholds = false;
  std::string save;
};

[[noreturn]] void usage(const std::string& msg) { fail(ErrorCode::kInvalidArgument, msg); }

void require_given(const std::string& value, const char* flag) {
  if (value.empty()) usage(std::string(flag) + " is required");
}

void require_dir(const std::string& path, const char* flag) {
  require_given(path, flag);
  if (!fs::is_directory(path)) fail(ErrorCode::kMissingFile, std::string(flag) + ": no such directory " + path);
}

void require_file(const std::string& path, const char* flag) {
  require_given(path, flag);
  if (!fs::is_regular_file(path)) fail(ErrorCode::kMissingFile, std::string(flag) + ": no such file " + path);
}

// An output file path must not be a directory and its parent must exist.
void check_output_file(const std::string& path, const char* flag) {
  if (path.empty()) return;
  const fs::path p(path);
  if (fs::is_directory(p)) usage(std::string(flag) + ": " + path + " is a directory");
  const auto parent = p.parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    fail(ErrorCode::kMissingFile, std::string(flag) + ": directory " + parent.string() + " does not exist");
  }
}

std::size_t parse_size(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) usage("invalid " + what + " '" + s + "'");
  return v;
}

std::optional<std::size_t> parse_c(const std::string& s) {
  if (s == "none" || s == "None") return std::nullopt;
  const auto v = parse_size(s, "--c value");
  if (v == 0) usage("--c must be positive or 'none'");
  return v;
}

LayerRange parse_range(const std::string& s) {
  const auto pos = s.find_first_of(":-");
  if (pos == std::string::npos) usage("layer range '" + s + "' must look like LO:HI");
  return {parse_size(s.substr(0, pos), "layer index"), parse_size(s.substr(pos + 1), "layer index")};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void check_cap(double cap) {
  if (!(cap >= 0.0 && cap <= 1.0)) usage("--fpr-cap must lie in [0, 1]");
}

bool has_modality(const ActivationBundle& b, Modality m) {
  return std::any_of(b.records.begin(), b.records.end(), [m](const SampleRecord& r) { return r.modality == m; });
}

// "both" means every modality present in the reference bundle.
std::vector<Modality> selected_modalities(const std::string& flag, const ActivationBundle& reference) {
  if (flag == "both") {
    std::vector<Modality> out;
    for (Modality m : kAllModalities) {
      if (has_modality(reference, m)) out.push_back(m);
    }
    return out;
  }
  return {*parse_modality(flag)};
}

ActivationBundle only(const ActivationBundle& b, Modality m) {
  return select_rows(b, [m](const SampleRecord& r) { return r.modality == m; });
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) fail(ErrorCode::kIo, "failed writing " + path);
}

std::string json_number(double v) { return nlohmann::json(v).dump(); }

// ---------------------------------------------------------------------------------------

void cmd_fit(const Options& o, std::ostream& out) {
  const bool explicit_cfg = o.k || !o.c.empty() || !o.layers.empty() || o.tau;
  if (!o.preset.empty() && explicit_cfg) usage("--preset cannot be combined with --k, --c, --layers or --tau");
  if (o.preset.empty() && !(o.k && !o.c.empty() && !o.layers.empty())) {
    usage("fit needs --preset NAME or all of --k, --c and --layers");
  }
  require_dir(o.train, "--train");
  require_given(o.out, "--out");
  check_output_file(o.out, "--out");

  std::vector<ProbeConfig> configs;
  std::optional<ModelPreset> preset;
  if (!o.preset.empty()) preset = find_preset(preset_dir() / "sallie_presets.json", o.preset);
  ProbeConfig manual;
  if (!preset) {
    manual.k = *o.k;
    manual.c = parse_c(o.c);
    manual.layers = parse_range(o.layers);
    manual.threshold = o.tau.value_or(0.5);
    if (manual.k == 0) usage("--k must be positive");
    if (!(manual.threshold >= 0.0 && manual.threshold <= 1.0)) usage("--tau must lie in [0, 1]");
  }

  const auto train = read_bundle(o.train);
  const auto modalities = selected_modalities(o.modality, train);
  if (modalities.empty()) fail(ErrorCode::kMissingModality, "training bundle has no samples");
  for (Modality m : modalities) {
    if (preset) {
      auto it = preset->configs.find(m);
      if (it == preset->configs.end()) {
        fail(ErrorCode::kMissingModality, "preset " + preset->name + " has no " + std::string(to_string(m)) + " config");
      }
      configs.push_back(it->second);
    } else {
      manual.modality = m;
      configs.push_back(manual);
    }
  }
  const auto det = fit_detector(train, configs, o.workers);
  save_detector(det, o.out);
  for (const auto& cfg : configs) {
    out << "fitted " << to_string(cfg.modality) << ": k=" << cfg.k << " c=" << format_c(cfg.c)
        << " layers=" << cfg.layers.str() << " tau=" << json_number(cfg.threshold) << '\n';
  }
}

void cmd_calibrate(const Options& o, std::ostream& out) {
  check_cap(o.fpr_cap);
  require_file(o.detector, "--detector");
  require_dir(o.valid, "--valid");
  const std::string target = o.out.empty() ? o.detector : o.out;
  check_output_file(target, "--out");

  auto det = load_detector(o.detector);
  const auto valid = read_bundle(o.valid);
  std::vector<Modality> modalities;
  if (o.modality == "both") {
    for (const auto& [m, mp] : det.modalities) {
      if (has_modality(valid, m)) modalities.push_back(m);
    }
    if (modalities.empty()) fail(ErrorCode::kMissingModality, "validation bundle shares no modality with the detector");
  } else {
    modalities.push_back(*parse_modality(o.modality));
    det.entry(modalities[0]);
  }

  std::ostringstream table;
  table << fmt_row({"modality", "tau", "FPR", "FNR", "feasible"}, {8, 10, 10, 10, 0}) << '\n';
  std::vector<std::string> infeasible;
  for (Modality m : modalities) {
    const auto sub = only(valid, m);
    if (sub.num_samples() == 0) fail(ErrorCode::kMissingModality, "validation bundle has no " + std::string(to_string(m)) + " samples");
    const auto traces = score_bundle(det, sub, o.workers);
    std::vector<ScoredLabel> scored;
    for (std::size_t i = 0; i < traces.size(); ++i) scored.push_back({traces[i].ensemble_score, sub.records[i].label});
    const auto choice = select_threshold(build_roc(scored), o.fpr_cap);
    table << fmt_row({std::string(to_string(m)), fixed(choice.threshold, 6), fixed(choice.fpr, 6), fixed(choice.fnr, 6),
                      choice.feasible ? "yes" : "no"},
                     {8, 10, 10, 10, 0})
          << '\n';
    if (!choice.feasible) infeasible.emplace_back(to_string(m));
    det.entry(m).config.threshold = choice.threshold;
  }
  out << table.str();
  if (!infeasible.empty()) {
    std::string names;
    for (const auto& n : infeasible) names += (names.empty() ? "" : ", ") + n;
    fail(ErrorCode::kInfeasible, "no threshold meets FPR <= " + json_number(o.fpr_cap) + " for " + names +
                                     "; detector left unchanged");
  }
  save_detector(det, target);
}

void cmd_grid(const Options& o, std::ostream& out) {
  check_cap(o.fpr_cap);
  if (o.format != "table" && o.format != "jsonl") usage("--format must be table or jsonl");
  require_dir(o.train, "--train");
  require_dir(o.valid, "--valid");
  check_output_file(o.out, "--out");
  check_output_file(o.report, "--report");
  std::vector<std::size_t> ks;
  for (const auto& s : split_list(o.ks)) ks.push_back(parse_size(s, "k"));
  std::vector<std::optional<std::size_t>> cs;
  for (const auto& s : split_list(o.cs)) cs.push_back(parse_c(s));
  std::vector<LayerRange> ranges;
  for (const auto& s : split_list(o.ranges)) ranges.push_back(parse_range(s));

  const auto train = read_bundle(o.train);
  const auto valid = read_bundle(o.valid);
  GridSpec grid;
  if (ks.empty() || cs.empty() || ranges.empty()) grid = default_grid(train.num_layers());
  if (!ks.empty()) grid.ks = ks;
  if (!cs.empty()) grid.cs = cs;
  if (!ranges.empty()) grid.ranges = ranges;

  const auto modalities = selected_modalities(o.modality, train);
  if (modalities.empty()) fail(ErrorCode::kMissingModality, "training bundle has no samples");
  GridResult all;
  for (Modality m : modalities) {
    auto r = grid_search(train, valid, m, grid, o.fpr_cap, o.workers);
    all.rows.insert(all.rows.end(), r.rows.begin(), r.rows.end());
    all.winners.insert(r.winners.begin(), r.winners.end());
  }
  emit(o.format == "table" ? format_grid_table(all) : format_grid_jsonl(all), o.report, out);

  std::vector<std::string> missing;
  std::vector<ProbeConfig> winners;
  for (Modality m : modalities) {
    auto it = all.winners.find(m);
    if (it == all.winners.end()) {
      missing.emplace_back(to_string(m));
    } else {
      winners.push_back(it->second);
    }
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& n : missing) names += (names.empty() ? "" : ", ") + n;
    fail(ErrorCode::kInfeasible, "no configuration meets FPR <= " + json_number(o.fpr_cap) + " for " + names);
  }
  if (!o.out.empty()) save_detector(fit_detector(train, winners, o.workers), o.out);
}

std::string trace_line(const ScoreTrace& t, Modality m, const std::string& format) {
  if (format == "jsonl") {
    nlohmann::ordered_json j;
    j["sample_id"] = t.sample_id;
    j["modality"] = to_string(m);
    nlohmann::ordered_json layers = nlohmann::ordered_json::object();
    for (const auto& [l, s] : t.per_layer_scores) layers[std::to_string(l)] = s;
    j["per_layer_scores"] = layers;
    j["ensemble_score"] = t.ensemble_score;
    j["verdict"] = t.verdict;
    return j.dump() + "\n";
  }
  std::string per;
  for (const auto& [l, s] : t.per_layer_scores) per += (per.empty() ? "" : ",") + std::to_string(l) + ":" + fixed(s, 4);
  return t.sample_id + "\t" + std::string(to_string(m)) + "\t" + fixed(t.ensemble_score, 6) + "\t" +
         (t.verdict ? "attack" : "benign") + "\t" + per + "\n";
}

void cmd_score(const Options& o, std::ostream& out) {
  if (o.format != "table" && o.format != "jsonl") usage("--format must be table or jsonl");
  const std::string input = o.input.empty() ? o.test : o.input;
  require_file(o.detector, "--detector");
  require_dir(input, "--input");
  check_output_file(o.out, "--out");
  const auto det = load_detector(o.detector);
  const auto data = read_bundle(input);
  const auto traces = score_bundle(det, data, o.workers);
  std::string text;
  for (std::size_t i = 0; i < traces.size(); ++i) text += trace_line(traces[i], data.records[i].modality, o.format);
  emit(text, o.out, out);
}

void cmd_eval(const Options& o, std::ostream& out) {
  if (o.format != "table" && o.format != "jsonl") usage("--format must be table or jsonl");
  require_file(o.detector, "--detector");
  require_dir(o.test, "--test");
  check_output_file(o.out, "--out");
  const auto det = load_detector(o.detector);
  const auto test = read_bundle(o.test);
  const std::vector<EvalReport> reports{evaluate(det, test, o.workers)};
  emit(o.format == "table" ? format_report_table(reports) : format_report_jsonl(reports), o.out, out);
}

void cmd_baseline(const Options& o, std::ostream& out) {
  check_cap(o.fpr_cap);
  if (o.format != "table" && o.format != "jsonl") usage("--format must be table or jsonl");
  if (o.which != "eeg" && o.which != "pishield" && o.which != "both") usage("--which must be eeg, pishield or both");
  if (!(o.lambda >= 0.0)) usage("--lambda must be non-negative");
  require_dir(o.train, "--train");
  require_dir(o.valid, "--valid");
  require_dir(o.test, "--test");
  if (!o.detector.empty()) require_file(o.detector, "--detector");
  check_output_file(o.out, "--out");
  check_output_file(o.save, "--save");
  std::optional<LayerRange> eeg_layers;
  if (!o.layers.empty()) eeg_layers = parse_range(o.layers);
  std::optional<BaselineThresholds> fixed_thresholds;
  if (o.preset_thresholds) fixed_thresholds = load_baseline_thresholds(preset_dir() / "baseline_thresholds.json");

  const auto train = read_bundle(o.train);
  const auto valid = read_bundle(o.valid);
  const auto test = read_bundle(o.test);
  const bool eeg = o.which != "pishield", pis = o.which != "eeg";
  const auto modalities = selected_modalities(o.modality, test);

  BaselineSet set{train.manifest.model_name, train.num_layers(), train.hidden_dim(), {}, {}};
  // Verdicts over the evaluated test samples, in test order.
  std::vector<SampleRecord> records;
  std::vector<int> eeg_v, pis_v;
  std::ostringstream notes;
  std::vector<std::string> infeasible;
  auto threshold_from_preset = [&](const std::string& method, Modality m) {
    const auto& per = fixed_thresholds->at(method);
    auto it = per.find(m);
    if (it == per.end()) fail(ErrorCode::kMissingModality, "no preset " + method + " threshold for " + std::string(to_string(m)));
    return it->second;
  };

  for (Modality m : modalities) {
    const std::string mname(to_string(m));
    const auto tr = only(train, m), va = only(valid, m), te = only(test, m);
    records.insert(records.end(), te.records.begin(), te.records.end());
    if (eeg) {
      const auto range = eeg_layers.value_or(default_prototype_layers(train.num_layers()));
      auto model = fit_prototypes(tr, range);
      if (fixed_thresholds) {
        model.threshold = threshold_from_preset("eeg", m);
      } else {
        std::vector<ScoredLabel> scored;
        const auto s = prototype_scores(model, va);
        for (std::size_t i = 0; i < s.size(); ++i) scored.push_back({s[i], va.records[i].label});
        const auto choice = select_threshold(build_roc(scored), o.fpr_cap);
        if (!choice.feasible) infeasible.push_back("EEG-Defender " + mname);
        model.threshold = choice.threshold;
      }
      for (double s : prototype_scores(model, te)) eeg_v.push_back(decide(s, model.threshold));
      notes << "EEG-Defender " << mname << ": layers=" << range.str() << " tau=" << fixed(model.threshold, 6) << '\n';
      set.prototypes[m] = std::move(model);
    }
    if (pis) {
      LogisticOptions opts;
      opts.lambda = o.lambda;
      auto sel = logistic_layer_select(tr, va, o.fpr_cap, opts, {}, o.workers);
      for (const auto& r : sel.rows) {
        notes << "PIShield " << mname << " layer " << r.layer << ": "
              << (r.fitted ? "tau=" + fixed(r.threshold, 6) + " FPR=" + fixed(r.fpr, 6) + " FNR=" + fixed(r.fnr, 6)
                           : std::string("not fitted"))
              << (r.reason.empty() ? "" : " (" + r.reason + ")") << '\n';
      }
      if (!sel.best) {
        infeasible.push_back("PIShield " + mname);
        for (std::size_t i = 0; i < te.num_samples(); ++i) pis_v.push_back(0);
        continue;
      }
      auto probe = *sel.best;
      if (fixed_thresholds) probe.threshold = threshold_from_preset("pishield", m);
      for (double s : logistic_scores(probe, te)) pis_v.push_back(decide(s, probe.threshold));
      notes << "PIShield " << mname << ": selected layer " << probe.layer << " tau=" << fixed(probe.threshold, 6) << '\n';
      set.logistic[m] = std::move(probe);
    }
  }

  std::vector<EvalReport> reports;
  if (eeg) reports.push_back(evaluate_verdicts(records, eeg_v, "EEG-Defender"));
  if (pis) reports.push_back(evaluate_verdicts(records, pis_v, "PIShield"));
  if (!o.detector.empty()) {
    const auto det = load_detector(o.detector);
    std::vector<int> v;
    for (Modality m : modalities) {
      for (const auto& t : score_bundle(det, only(test, m), o.workers)) v.push_back(t.verdict);
    }
    reports.push_back(evaluate_verdicts(records, v, "SALLIE"));
  }
  std::string text;
  if (o.format == "table") {
    text = format_report_table(reports) + "\n" + notes.str();
  } else {
    text = format_report_jsonl(reports);
  }
  emit(text, o.out, out);
  if (!infeasible.empty()) {
    std::string names;
    for (const auto& n : infeasible) names += (names.empty() ? "" : ", ") + n;
    fail(ErrorCode::kInfeasible, "no threshold meets FPR <= " + json_number(o.fpr_cap) + " for " + names);
  }
  if (!o.save.empty()) save_baselines(set, o.save);
}

void cmd_synth(const Options& o, std::ostream& out) {
  require_file(o.spec, "--spec");
  require_given(o.out, "--out");
  if (fs::exists(o.out) && !fs::is_directory(o.out)) usage("--out: " + o.out + " exists and is not a directory");
  auto spec = load_synth_spec(o.spec);
  if (o.seed) spec.seed = *o.seed;
  if (!o.split.empty()) spec.split = o.split;
  const auto bundle = generate(spec);
  write_bundle(bundle, o.out);
  out << "wrote " << bundle.num_samples() << " samples (L=" << bundle.num_layers() << ", d=" << bundle.hidden_dim()
      << ", split " << spec.split << ") to " << o.out << '\n';
}

void cmd_project(const Options& o, std::ostream& out) {
  const std::string input = o.input.empty() ? o.test : o.input;
  require_dir(input, "--input");
  if (!o.layer) usage("--layer is required");
  check_output_file(o.out, "--out");
  const auto bundle = read_bundle(input);
  emit(projection_csv(project_2d(bundle, *o.layer)), o.out, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hidden-state jailbreak and prompt-injection detector", "sallie"};
  app.require_subcommand(1, 1);
  Options o;

  const std::vector<std::string> modalities{"text", "vis", "both"};
  const std::vector<std::string> formats{"table", "jsonl"};
  auto add_modality = [&](CLI::App* s) {
    s->add_option("--modality", o.modality, "text, vis or both")->check(CLI::IsMember(modalities));
  };
  auto add_format = [&](CLI::App* s) { s->add_option("--format", o.format, "table or jsonl")->check(CLI::IsMember(formats)); };
  auto add_workers = [&](CLI::App* s) {
    s->add_option("--workers", o.workers, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  };

  auto* fit = app.add_subcommand("fit", "fit a detector on a training bundle");
  fit->add_option("--train", o.train, "training bundle directory");
  fit->add_option("--preset", o.preset, "named configuration from presets/sallie_presets.json");
  fit->add_option("--k", o.k, "neighbours");
  fit->add_option("--c", o.c, "PCA components or 'none'");
  fit->add_option("--layers", o.layers, "inclusive layer range LO:HI");
  fit->add_option("--tau", o.tau, "decision threshold (default 0.5)");
  fit->add_option("--out", o.out, "detector file to write");
  add_modality(fit);
  add_workers(fit);

  auto* cal = app.add_subcommand("calibrate", "choose thresholds on a validation bundle under the FPR cap");
  cal->add_option("--detector", o.detector, "detector file");
  cal->add_option("--valid", o.valid, "validation bundle directory");
  cal->add_option("--fpr-cap", o.fpr_cap, "maximum validation FPR");
  cal->add_option("--out", o.out, "where to write the updated detector (default: in place)");
  add_modality(cal);
  add_workers(cal);

  auto* grid = app.add_subcommand("grid", "grid search over k, c and layer range");
  grid->add_option("--train", o.train, "training bundle directory");
  grid->add_option("--valid", o.valid, "validation bundle directory");
  grid->add_option("--fpr-cap", o.fpr_cap, "maximum validation FPR");
  grid->add_option("--ks", o.ks, "comma-separated k values (default 3,5,7,9,11)");
  grid->add_option("--cs", o.cs, "comma-separated c values, 'none' for no PCA (default 64,128,256,512,none)");
  grid->add_option("--ranges", o.ranges, "comma-separated LO:HI ranges (default: five depth fractions)");
  grid->add_option("--report", o.report, "report file (default stdout)");
  grid->add_option("--out", o.out, "detector file fitted with the winning configurations");
  add_modality(grid);
  add_format(grid);
  add_workers(grid);

  auto* score = app.add_subcommand("score", "score every sample of a bundle");
  score->add_option("--detector", o.detector, "detector file");
  score->add_option("--input,--test", o.input, "bundle directory (a one-sample bundle scores a single input)");
  score->add_option("--out", o.out, "output file (default stdout)");
  add_format(score);
  add_workers(score);

  auto* eval = app.add_subcommand("eval", "evaluate a detector on a labelled test bundle");
  eval->add_option("--detector", o.detector, "detector file");
  eval->add_option("--test", o.test, "test bundle directory");
  eval->add_option("--out", o.out, "output file (default stdout)");
  add_format(eval);
  add_workers(eval);

  auto* base = app.add_subcommand("baseline", "fit, calibrate and evaluate the prototype and logistic baselines");
  base->add_option("--train", o.train, "training bundle directory");
  base->add_option("--valid", o.valid, "validation bundle directory");
  base->add_option("--test", o.test, "test bundle directory");
  base->add_option("--which", o.which, "eeg, pishield or both");
  base->add_option("--fpr-cap", o.fpr_cap, "maximum validation FPR");
  base->add_option("--lambda", o.lambda, "L2 strength of the logistic probe");
  base->add_option("--layers", o.layers, "prototype layer range LO:HI (default first three quarters)");
  base->add_flag("--preset-thresholds", o.preset_thresholds, "use presets/baseline_thresholds.json instead of calibrating");
  base->add_option("--detector", o.detector, "SALLIE detector to report alongside");
  base->add_option("--save", o.save, "file for the fitted baseline models");
  base->add_option("--out", o.out, "report file (default stdout)");
  add_modality(base);
  add_format(base);
  add_workers(base);

  auto* syn = app.add_subcommand("synth", "generate a synthetic bundle from a spec file");
  syn->add_option("--spec", o.spec, "synthetic spec (JSON)");
  syn->add_option("--out", o.out, "bundle directory to write");
  syn->add_option("--seed", o.seed, "override the spec seed");
  syn->add_option("--split", o.split, "override the spec split name (selects the sample stream)");

  auto* proj = app.add_subcommand("project", "2-D PCA coordinates of one layer as CSV");
  proj->add_option("--input", o.input, "bundle directory");
  proj->add_option("--layer", o.layer, "layer index");
  proj->add_option("--out", o.out, "CSV file (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (fit->parsed()) cmd_fit(o, out);
    else if (cal->parsed()) cmd_calibrate(o, out);
    else if (grid->parsed()) cmd_grid(o, out);
    else if (score->parsed()) cmd_score(o, out);
    else if (eval->parsed()) cmd_eval(o, out);
    else if (base->parsed()) cmd_baseline(o, out);
    else if (syn->parsed()) cmd_synth(o, out);
    else if (proj->parsed()) cmd_project(o, out);
  } catch (const Error& e) {
    err << "sallie: " << to_string(e.code()) << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "sallie: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace sallie::cli
