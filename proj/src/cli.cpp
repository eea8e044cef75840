#include "rescbm/cli.hpp"

#include "rescbm/concept_bank.hpp"
#include "rescbm/data_io.hpp"
#include "rescbm/discovery.hpp"
#include "rescbm/error.hpp"
#include "rescbm/evaluation.hpp"
#include "rescbm/keyvalue.hpp"
#include "rescbm/run_config.hpp"
#include "rescbm/selfcheck.hpp"

#include <CLI11.hpp>

#include <map>
#include <optional>
#include <ostream>

namespace rescbm {

namespace fs = std::filesystem;

namespace {

struct Loaded {
  LabelTable table;
  Dataset data;
  Split split;
  Dataset train;
  Dataset validation;
};

// Config file first, then any `--key value` flags on top.
struct ConfigSource {
  std::string file;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", file, "key = value config file");
    for (const auto& key : run_config_keys()) options[key] = cmd->add_option("--" + key, flags[key]);
  }

  RunConfig resolve() const {
    RunConfig c = file.empty() ? RunConfig{} : load_run_config(file);
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) set_run_config_value(c, key, flags.at(key), "--" + key);
    }
    return c;
  }
};

Loaded load_data(const RunConfig& c) {
  require_paths(c, {"features", "labels", "classes"});
  Loaded d;
  d.table = load_label_table(c.labels, load_token_list(c.classes));
  d.data = make_dataset(load_embedding_matrix(c.features), d.table);
  d.split = stratified_split(d.data.labels, d.data.n_classes, c.train_fraction, c.seed);
  d.train = d.data.subset(d.split.train);
  d.validation = d.data.subset(d.split.validation);
  return d;
}

double model_accuracy(const ResidualModel& m, const Dataset& d) {
  return accuracy(predict(m, d.features, true).labels, d.labels);
}

void write_report(const RunReport& r, const fs::path& path, std::ostream& out) {
  emit_report(r, path);
  out << "report: " << path.generic_string() << "\n"
      << "accuracy = " << format_double(r.accuracy) << "\n"
      << "cue = " << format_double(r.cue) << "\n";
}

int cmd_synth(const fs::path& dir, const SyntheticSpec& spec, std::ostream& out) {
  const SyntheticTask task = generate_synthetic_task(spec);
  fs::create_directories(dir);
  save_embedding_matrix(task.features, dir / "features.emb");
  save_label_table(task.labels, dir / "labels.csv");
  save_token_list(task.labels.class_names, dir / "classes.txt");
  save_bank(task.candidate_bank, dir / "candidates.bank");
  const ConceptBank base = task.base_bank();
  save_bank(base, dir / "base.bank");
  save_embedding_matrix(task.class_embeddings, dir / "class_embeddings.emb");

  std::vector<std::string> planted;
  for (std::size_t i : task.planted_missing) planted.push_back(task.candidate_bank.tokens()[i]);
  save_token_list(planted, dir / "planted.txt");

  // Bank sources whose intersection with the candidates is exactly the base bank.
  std::vector<std::string> general(base.tokens().begin(), base.tokens().begin() + base.size() / 2);
  std::vector<std::string> associated(base.tokens().begin() + base.size() / 2, base.tokens().end());
  associated.push_back("not a candidate");
  save_token_list(general, dir / "general.txt");
  save_token_list(associated, dir / "associated.txt");

  RunConfig c;
  c.features = "features.emb";
  c.labels = "labels.csv";
  c.classes = "classes.txt";
  c.base_bank = "base.bank";
  c.candidate_bank = "candidates.bank";
  c.class_embeddings = "class_embeddings.emb";
  c.output_dir = "run";
  c.residual_count = spec.n_planted;
  c.learning_rate = 1e-2;
  c.discovery_learning_rate = 1e-2;
  c.seed = spec.seed;
  write_text_file(dir / "run.cfg", format_run_config(c));
  out << "wrote synthetic task to " << dir.generic_string() << "\n";
  return kExitOk;
}

int cmd_assemble(const fs::path& general, const fs::path& associated, const fs::path& candidates,
                 const fs::path& out_manifest, std::ostream& out, std::ostream& err) {
  const ConceptBank cand = load_bank(candidates);
  const auto tokens = assemble_base_bank(load_token_list(general), load_token_list(associated), cand);
  if (tokens.empty()) {
    err << "warning: empty bank: no general or associated token is a candidate\n";
    return kExitValidation;
  }
  std::vector<std::size_t> idx;
  for (const auto& t : tokens) idx.push_back(*cand.find(t));
  const ConceptBank bank = cand.subset(idx);
  if (out_manifest.has_parent_path()) fs::create_directories(out_manifest.parent_path());
  save_bank(bank, out_manifest);
  out << "bank: " << bank.size() << " concepts -> " << out_manifest.generic_string() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  require_paths(c, {"base_bank"});
  const Loaded d = load_data(c);
  const ConceptBank bank = load_bank(c.base_bank);
  const TrainConfig tc = train_config(c);
  const BankSizeVerdict lint = bank_size_lint(bank.size(), d.data.n_classes, static_cast<std::size_t>(bank.dim()));
  if (lint != BankSizeVerdict::kWithin) out << "note: bank size is " << to_string(lint) << " the advised range\n";

  const PcbmResult pcbm = train_pcbm(d.train, &d.validation, bank, tc);
  const double pcbm_acc =
      accuracy(predict_pcbm(pcbm.psi_c, pcbm.standardizer, bank, d.validation.features).labels, d.validation.labels);
  const ResidualResult res = train_residual(init_residual_model(bank, d.data.n_classes, tc), d.train, &d.validation);
  const double acc = model_accuracy(res.model, d.validation);

  fs::create_directories(c.output_dir);
  save_model(res.model, c.output_dir / "model.ckpt");
  write_text_file(c.output_dir / "trace.csv", format_trace_csv(res.trace));
  const std::string variant = c.residual_count == 0 ? "pcbm-equivalent" : "res-cbm";
  out << "pcbm accuracy = " << format_double(pcbm_acc) << "\n";
  write_report(make_report(res.model, acc, variant, run_config_values(c)), c.output_dir / "report.txt", out);
  return kExitOk;
}

int cmd_discover(const RunConfig& c, const fs::path& checkpoint, std::ostream& out) {
  ResidualModel model = load_model(checkpoint);
  if (model.residual_count() == 0) {
    out << "checkpoint has no residual vectors; nothing to discover\n";
    return kExitOk;
  }
  require_paths(c, {"candidate_bank", "class_embeddings"});
  const Loaded d = load_data(c);
  const ConceptBank candidates = load_bank(c.candidate_bank);
  const EmbeddingMatrix class_emb = load_embedding_matrix(c.class_embeddings);
  const DiscoveryResult result = run_incremental_discovery(std::move(model), candidates, class_emb.values(), d.train,
                                                           &d.validation, discovery_config(c));
  fs::create_directories(c.output_dir);
  save_model(result.model, c.output_dir / "discovered.ckpt");
  write_text_file(c.output_dir / "snaps.csv", format_snap_history(result.history));
  for (const auto& s : result.history) {
    out << "round " << s.round << ": " << s.token << " (cosine " << format_double(s.cosine) << ")\n";
  }
  RunReport r = make_report(result.model, model_accuracy(result.model, d.validation), "res-cbm-discovered",
                            run_config_values(c));
  r.snaps = result.history;
  write_report(r, c.output_dir / "discovered_report.txt", out);
  return kExitOk;
}

int cmd_eval(RunConfig c, const fs::path& checkpoint, std::optional<std::size_t> shots, std::ostream& out) {
  const ResidualModel model = load_model(checkpoint);
  const Loaded d = load_data(c);
  auto values = run_config_values(c);
  values["checkpoint"] = checkpoint.generic_string();
  fs::create_directories(c.output_dir);
  if (!shots) {
    write_report(make_report(model, model_accuracy(model, d.validation), "eval", values),
                 c.output_dir / "eval_report.txt", out);
    return kExitOk;
  }
  const auto points = few_shot_curve(d.data, model.base_bank, {*shots}, train_config(c));
  values["shots"] = std::to_string(*shots);
  values["train_size"] = std::to_string(points[0].train_size);
  out << "train_size = " << points[0].train_size << "\n";
  ResidualModel base_only = model;
  base_only.residual_vectors.resize(0, model.base_bank.dim());
  write_report(make_report(base_only, points[0].accuracy, "few-shot", values),
               c.output_dir / ("few_shot_" + std::to_string(*shots) + "_report.txt"), out);
  return kExitOk;
}

int cmd_selfcheck(double perturbation, std::ostream& out) {
  GradientSuiteOptions opts;
  opts.perturbation = perturbation;
  bool ok = true;
  for (const auto& r : run_selfcheck(opts)) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual concept bottleneck models"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a synthetic planted-concept task");
  std::string synth_dir;
  SyntheticSpec spec;
  synth->add_option("--out", synth_dir, "output directory")->required();
  synth->add_option("--samples", spec.n_samples);
  synth->add_option("--dim", spec.dim);
  synth->add_option("--candidates", spec.n_candidates);
  synth->add_option("--base", spec.n_base);
  synth->add_option("--planted", spec.n_planted);
  synth->add_option("--classes", spec.n_classes);
  synth->add_option("--seed", spec.seed);

  auto* assemble = app.add_subcommand("assemble-bank", "intersect token sources with the candidate bank");
  std::string general, associated, candidates, bank_out;
  assemble->add_option("--general", general)->required();
  assemble->add_option("--associated", associated)->required();
  assemble->add_option("--candidates", candidates, "candidate bank manifest")->required();
  assemble->add_option("--out", bank_out, "output bank manifest")->required();

  auto* train = app.add_subcommand("train", "fit the concept head and residual block");
  ConfigSource train_cfg;
  train_cfg.attach(train);

  auto* discover = app.add_subcommand("discover", "turn residual vectors into candidate concepts");
  ConfigSource discover_cfg;
  discover_cfg.attach(discover);
  std::string discover_ckpt;
  discover->add_option("--checkpoint", discover_ckpt)->required();

  auto* eval = app.add_subcommand("eval", "score a checkpoint, or run the few-shot protocol");
  ConfigSource eval_cfg;
  eval_cfg.attach(eval);
  std::string eval_ckpt;
  std::size_t shots = 0;
  eval->add_option("--checkpoint", eval_ckpt)->required();
  auto* shots_opt = eval->add_option("--shots", shots, "labelled samples per class")->check(CLI::PositiveNumber);

  auto* selfcheck = app.add_subcommand("selfcheck", "gradient, CUE and reduction checks");
  double perturbation = 0.0;
  selfcheck->add_option("--perturb-gradient", perturbation)->group("");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  if (!argv.empty()) argv.pop_back();
  try {
    app.parse(std::move(argv));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (*synth) return cmd_synth(synth_dir, spec, out);
    if (*assemble) return cmd_assemble(general, associated, candidates, bank_out, out, err);
    if (*train) return cmd_train(train_cfg.resolve(), out);
    if (*discover) return cmd_discover(discover_cfg.resolve(), discover_ckpt, out);
    if (*eval) {
      std::optional<std::size_t> k;
      if (shots_opt->count() > 0) k = shots;
      return cmd_eval(eval_cfg.resolve(), eval_ckpt, k, out);
    }
    if (*selfcheck) return cmd_selfcheck(perturbation, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace rescbm
