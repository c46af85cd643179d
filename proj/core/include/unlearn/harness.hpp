#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unlearn/data.hpp"
#include "unlearn/eval.hpp"
#include "unlearn/influence.hpp"
#include "unlearn/losses.hpp"
#include "unlearn/model.hpp"
#include "unlearn/optim.hpp"

namespace unlearn {

/// Which procedure `unlearn` runs. fo = AdamW, so = Sophia, iu = one-shot
/// influence update.
enum class Procedure { fo, so, iu };
std::string to_string(Procedure p);
Procedure parse_procedure(std::string_view name);

/// Every knob of one experiment. The config file format is one `key = value`
/// per line, `#` starts a comment, and keys are the field names below.
struct ExperimentConfig {
  // Task: load `corpus` if set, otherwise generate from the fields below.
  std::string corpus;
  int n_authors = 40;
  int qa_per_author = 10;
  double forget_ratio = 0.1;
  int n_perturbed = 4;

  // Model.
  Arch arch = Arch::mlp;
  int context_window = 112;
  int embed_dim = 8;
  int hidden_dim = 64;
  int depth = 2;

  // Fine-tuning.
  double finetune_lr = 3e-3;
  int finetune_batch_size = 8;
  int finetune_max_epochs = 400;
  double finetune_target_nll = 0.05;

  // Unlearning.
  Method method = Method::graddiff;
  Procedure optimizer = Procedure::so;
  Schedule schedule = Schedule::interleaved;
  /// nullopt picks the per-method default for the chosen optimizer.
  std::optional<double> lambda;
  double beta = 1.0;
  double lr = 7e-4;
  int epochs = 5;
  int batch_size = 4;
  double weight_decay = 0.0;
  /// nullopt picks 1e-4 * trace(H) / dim.
  std::optional<double> damping;
  std::uint64_t seed = 42;

  // Evaluation.
  /// Evaluate after every `eval_every` epochs (the final epoch is always evaluated).
  int eval_every = 1;
  double min_k_percent = 20.0;
  int max_new_tokens = 24;
  /// `{authors}` is replaced by the comma-separated forget-set author names.
  std::string system_prompt = "Do not answer about: {authors}. ";

  std::string output_dir;

  void validate() const;
  double effective_lambda() const;
  ModelConfig model_config() const;
  CorpusOptions corpus_options() const;
  FinetuneConfig finetune_config() const;
  RunConfig run_config() const;
  EvalOptions eval_options() const;
};

/// `key = value` text, every field present, in declaration order.
std::string serialize_config(const ExperimentConfig& config);
/// Starts from defaults and applies each line. Unknown keys and malformed
/// values throw with the line number.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);
/// Config keys in serialization order.
std::vector<std::string> config_keys();
/// Sets one field from its textual form. Throws on unknown key or bad value.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

/// $UNLEARN_OUTPUT_ROOT if set, else "runs".
std::filesystem::path default_output_root();

struct EpochMetrics {
  int epoch = 0;
  MetricsReport metrics;
};

struct Timings {
  double unlearn_seconds = 0.0;
  double eval_seconds = 0.0;
};

/// Result of one unlearning run (or a parameter-free baseline).
struct RunRecord {
  std::string label;
  /// Method and optimizer columns of the CSV; "none" for baselines.
  std::string method = "none";
  std::string optimizer = "none";
  ExperimentConfig config;
  /// Evaluations in epoch order; the first is the starting model.
  std::vector<EpochMetrics> epochs;
  std::filesystem::path checkpoint;
  Timings timings;

  void append(int epoch, const MetricsReport& metrics);
  const MetricsReport& final_metrics() const;
};

Corpus prepare_corpus(const ExperimentConfig& config);
FinetuneResult finetune_model(const Corpus& corpus, const ExperimentConfig& config);

/// Unlearns `original` per config.optimizer. epochs = 0 returns the input
/// parameters untouched. Per-epoch metrics follow config.eval_every. When
/// `out_dir` is non-empty the config snapshot, trajectory log, per-epoch
/// metrics and final checkpoint are written there.
RunRecord run_experiment(const TinyLM& original, const Corpus& corpus, const ExperimentConfig& config,
                         const std::string& label, const std::filesystem::path& out_dir = {});

/// The system prompt with `{authors}` substituted.
std::string render_system_prompt(const Corpus& corpus, const std::string& templ);

/// Evaluates the unmodified model with `system_prompt` prefixed to every
/// query. Throws std::length_error if a prefixed query cannot fit the
/// context window.
MetricsReport input_based_baseline(const TinyLM& model, const Corpus& corpus, const std::string& system_prompt,
                                   const EvalOptions& options = {});

/// Column order of results CSVs.
const std::string& csv_header();
std::string csv_row(const RunRecord& record, const EpochMetrics& row);

/// Writes `results.csv` (one row per run, final epoch), `table.txt`,
/// `plot_<label>.dat` (epoch, forget_acc, retain_acc) per run and
/// `timings.csv`. Throws if `out_dir` cannot be written or `records` is empty.
void emit_report(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir);

/// Reads back a run directory written by run_experiment.
RunRecord load_run(const std::filesystem::path& run_dir);

/// Writes a fine-tuned checkpoint and the data it was trained on, then runs
/// one experiment per config in `sweep` into `out_dir/<label>`. Records of
/// the original model and the input-based baseline lead the list.
std::vector<RunRecord> run_pipeline(const ExperimentConfig& base, const std::vector<std::pair<std::string, ExperimentConfig>>& sweep,
                                    const std::filesystem::path& out_dir);

}  // namespace unlearn
