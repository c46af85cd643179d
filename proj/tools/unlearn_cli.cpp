// Command-line front end: generate-data, finetune, unlearn, evaluate, report.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unlearn/harness.hpp"

namespace fs = std::filesystem;
using namespace unlearn;

namespace {

struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
};

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

void add_config_flags(CLI::App* app, ConfigFlags& flags) {
  app->add_option("--config", flags.config_file, "key = value config file; flags override it")->check(CLI::ExistingFile);
  for (const auto& key : config_keys()) app->add_option(flag_name(key), flags.values[key], "config key " + key);
}

ExperimentConfig resolve(const CLI::App* app, const ConfigFlags& flags) {
  ExperimentConfig config = flags.config_file.empty() ? ExperimentConfig{} : load_config(flags.config_file);
  for (const auto& [key, value] : flags.values) {
    if (app->count(flag_name(key)) > 0) set_config_value(config, key, value);
  }
  config.validate();
  return config;
}

fs::path output_dir_for(const ExperimentConfig& config, const std::string& label) {
  if (!config.output_dir.empty()) return config.output_dir;
  return default_output_root() / label;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Machine-unlearning toolkit for a tiny character language model"};
  app.require_subcommand(1);

  ConfigFlags gen_flags;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate-data", "Write a synthetic author-profile corpus");
  gen->add_option("--out", gen_out, "corpus file (JSONL)")->required();
  add_config_flags(gen, gen_flags);

  ConfigFlags ft_flags;
  std::string ft_out;
  auto* ft = app.add_subcommand("finetune", "Train a model on the forget and retain splits until it memorizes them");
  ft->add_option("--out", ft_out, "checkpoint to write")->required();
  add_config_flags(ft, ft_flags);

  ConfigFlags ul_flags;
  std::string ul_checkpoint, ul_label = "run";
  std::vector<std::string> ul_sweep;
  auto* ul = app.add_subcommand("unlearn", "Unlearn the forget split from a checkpoint");
  ul->add_option("--checkpoint", ul_checkpoint, "fine-tuned checkpoint")->required();
  ul->add_option("--label", ul_label, "run label (also the default output subdirectory)");
  ul->add_option("--sweep", ul_sweep, "config files to run one after another, each into <output-dir>/<file stem>")
      ->check(CLI::ExistingFile);
  add_config_flags(ul, ul_flags);

  ConfigFlags ev_flags;
  std::string ev_checkpoint, ev_label = "eval", ev_out;
  bool ev_input = false, ev_no_header = false;
  auto* ev = app.add_subcommand("evaluate", "Print a metrics CSV row for a checkpoint");
  ev->add_option("--checkpoint", ev_checkpoint, "checkpoint to evaluate")->required();
  ev->add_option("--label", ev_label, "value of the run column");
  ev->add_flag("--input-baseline", ev_input, "prefix every query with the system prompt");
  ev->add_flag("--no-header", ev_no_header, "omit the CSV header line");
  ev->add_option("--append", ev_out, "also append the row to this CSV file");
  add_config_flags(ev, ev_flags);

  std::vector<std::string> rp_runs;
  std::string rp_out;
  auto* rp = app.add_subcommand("report", "Aggregate run directories into a table, CSV and plot data");
  rp->add_option("--runs", rp_runs, "run directories written by unlearn")->required()->check(CLI::ExistingDirectory);
  rp->add_option("--out", rp_out, "report directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const ExperimentConfig config = resolve(gen, gen_flags);
      const Corpus corpus = generate_corpus(config.corpus_options());
      save_corpus(corpus, gen_out);
      std::printf("wrote %zu examples (%zu authors) to %s, checksum %016llx\n", corpus.examples.size(),
                  corpus.authors.size(), gen_out.c_str(), static_cast<unsigned long long>(corpus_checksum(corpus)));
    } else if (ft->parsed()) {
      const ExperimentConfig config = resolve(ft, ft_flags);
      const Corpus corpus = prepare_corpus(config);
      const FinetuneResult result = finetune_model(corpus, config);
      save_checkpoint(result.model, ft_out);
      std::printf("epochs %d, mean NLL %.6f, %s; wrote %s\n", result.epochs, result.final_nll,
                  result.converged ? "converged" : "did not reach the target", ft_out.c_str());
      if (!result.converged) return 2;
    } else if (ul->parsed()) {
      const ExperimentConfig base = resolve(ul, ul_flags);
      const TinyLM model = load_checkpoint(ul_checkpoint);
      const Corpus corpus = prepare_corpus(base);
      if (ul_sweep.empty()) {
        const fs::path out = output_dir_for(base, ul_label);
        const std::string label = ul->count("--label") > 0 ? ul_label : out.filename().string();
        const RunRecord record = run_experiment(model, corpus, base, label, out);
        std::printf("%s\n%s\n", csv_header().c_str(), csv_row(record, record.epochs.back()).c_str());
        std::printf("wrote %s (unlearn %.3fs)\n", out.string().c_str(), record.timings.unlearn_seconds);
      } else {
        const fs::path root = output_dir_for(base, "sweep");
        std::printf("%s\n", csv_header().c_str());
        for (const auto& file : ul_sweep) {
          const ExperimentConfig cfg = load_config(file);
          cfg.validate();
          const std::string label = fs::path(file).stem().string();
          const RunRecord record = run_experiment(model, corpus, cfg, label, root / label);
          std::printf("%s\n", csv_row(record, record.epochs.back()).c_str());
        }
      }
    } else if (ev->parsed()) {
      const ExperimentConfig config = resolve(ev, ev_flags);
      const TinyLM model = load_checkpoint(ev_checkpoint);
      const Corpus corpus = prepare_corpus(config);
      RunRecord record;
      record.label = ev_label;
      record.method = ev_input ? "input" : "none";
      record.config = config;
      const MetricsReport m = ev_input ? input_based_baseline(model, corpus, render_system_prompt(corpus, config.system_prompt),
                                                              config.eval_options())
                                       : evaluate(model, corpus, config.eval_options());
      record.append(0, m);
      const std::string row = csv_row(record, record.epochs.back());
      if (!ev_no_header) std::printf("%s\n", csv_header().c_str());
      std::printf("%s\n", row.c_str());
      if (!ev_out.empty()) {
        const bool fresh = !fs::exists(ev_out) || fs::file_size(ev_out) == 0;
        std::FILE* f = std::fopen(ev_out.c_str(), "a");
        if (!f) throw std::runtime_error("cannot append to " + ev_out);
        if (fresh) std::fprintf(f, "%s\n", csv_header().c_str());
        std::fprintf(f, "%s\n", row.c_str());
        std::fclose(f);
      }
    } else if (rp->parsed()) {
      std::vector<RunRecord> records;
      for (const auto& dir : rp_runs) records.push_back(load_run(dir));
      emit_report(records, rp_out);
      std::printf("wrote report for %zu runs to %s\n", records.size(), rp_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
