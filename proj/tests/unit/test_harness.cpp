#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <stdexcept>

#include "doctest.h"
#include "unlearn/harness.hpp"

using namespace unlearn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("unlearn_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

// Small task: 10 authors, 2 questions each, a narrow model.
ExperimentConfig small_config() {
  ExperimentConfig c;
  c.n_authors = 10;
  c.qa_per_author = 2;
  c.context_window = 80;
  c.embed_dim = 4;
  c.hidden_dim = 16;
  c.epochs = 2;
  c.batch_size = 2;
  c.lr = 1e-3;
  c.max_new_tokens = 8;
  return c;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("config serialization round trip") {
  ExperimentConfig c;
  c.method = Method::npo;
  c.optimizer = Procedure::fo;
  c.lambda = 0.25;
  c.lr = 1.0 / 3.0;
  c.seed = 18446744073709551615ULL;
  c.system_prompt = "Say \"no\" about {authors}. ";
  c.output_dir = "runs/x";
  const std::string text = serialize_config(c);
  const ExperimentConfig back = parse_config(text);
  CHECK(serialize_config(back) == text);
  CHECK(back.lambda == c.lambda);
  CHECK(back.lr == c.lr);
  CHECK(back.seed == c.seed);
  CHECK(back.system_prompt == c.system_prompt);
  CHECK(!parse_config(serialize_config(ExperimentConfig{})).lambda.has_value());
  CHECK(config_keys().size() == count_lines(text));
}

TEST_CASE("config parsing errors carry the line number") {
  CHECK(parse_config("# comment\n\nepochs = 7\n").epochs == 7);
  try {
    parse_config("epochs = 3\nbogus = 1\n");
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS(parse_config("epochs = three\n"));
  CHECK_THROWS(parse_config("epochs\n"));
  CHECK_THROWS(parse_config("optimizer = adam\n"));
  ExperimentConfig c;
  CHECK_THROWS(set_config_value(c, "nope", "1"));
  set_config_value(c, "optimizer", "iu");
  CHECK(c.optimizer == Procedure::iu);
}

TEST_CASE("config defaults and validation") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.effective_lambda() == 2.0);
  c.optimizer = Procedure::fo;
  CHECK(c.effective_lambda() == 0.3);
  c.lambda = 1.5;
  CHECK(c.effective_lambda() == 1.5);
  c.epochs = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(to_string(parse_procedure("so")) == "so");
  CHECK_THROWS_AS(parse_procedure("sgd"), std::invalid_argument);
}

TEST_CASE("output root follows the environment") {
  ::setenv("UNLEARN_OUTPUT_ROOT", "/tmp/some_root", 1);
  CHECK(default_output_root() == fs::path("/tmp/some_root"));
  ::unsetenv("UNLEARN_OUTPUT_ROOT");
  CHECK(default_output_root() == fs::path("runs"));
}

TEST_CASE("zero epochs saves the input checkpoint byte for byte") {
  ExperimentConfig c = small_config();
  c.epochs = 0;
  const Corpus corpus = prepare_corpus(c);
  const TinyLM model = TinyLM::initialize(c.model_config(), Seed{1});
  const fs::path dir = scratch("zero");
  const RunRecord r = run_experiment(model, corpus, c, "zero", dir);
  CHECK(slurp(dir / "model.ckpt") == encode_checkpoint(model));
  CHECK(r.epochs.size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("run directories are complete and reload") {
  const ExperimentConfig c = small_config();
  const Corpus corpus = prepare_corpus(c);
  const TinyLM model = TinyLM::initialize(c.model_config(), Seed{1});
  const fs::path dir = scratch("run");
  const RunRecord r = run_experiment(model, corpus, c, "so", dir);
  for (const char* f : {"config.txt", "trajectory.log", "model.ckpt", "epochs.csv", "timings.txt"}) CHECK(fs::exists(dir / f));
  CHECK(r.epochs.size() == 3);
  CHECK(r.timings.unlearn_seconds > 0.0);
  const RunRecord back = load_run(dir);
  CHECK(back.label == "so");
  CHECK(back.epochs.size() == 3);
  CHECK(csv_row(back, back.epochs.back()) == csv_row(r, r.epochs.back()));

  const ExperimentConfig snapshot = load_config(dir / "config.txt");
  CHECK(serialize_config(snapshot) == serialize_config(c));
  const RunRecord again = run_experiment(model, corpus, snapshot, "so");
  for (std::size_t i = 0; i < r.epochs.size(); ++i) CHECK(csv_row(again, again.epochs[i]) == csv_row(r, r.epochs[i]));
  fs::remove_all(dir);
}

TEST_CASE("evaluation is deterministic") {
  const ExperimentConfig c = small_config();
  const Corpus corpus = prepare_corpus(c);
  const TinyLM model = TinyLM::initialize(c.model_config(), Seed{8});
  RunRecord a, b;
  a.label = b.label = "x";
  a.append(0, evaluate(model, corpus, c.eval_options()));
  b.append(0, evaluate(model, corpus, c.eval_options()));
  CHECK(csv_row(a, a.epochs[0]) == csv_row(b, b.epochs[0]));
}

TEST_CASE("run records only grow forward") {
  RunRecord r;
  CHECK_THROWS_AS(r.final_metrics(), std::logic_error);
  r.append(0, MetricsReport{});
  r.append(2, MetricsReport{});
  CHECK_THROWS_AS(r.append(2, MetricsReport{}), std::logic_error);
}

TEST_CASE("input baseline leaves the parameters and membership scores alone") {
  const ExperimentConfig c = small_config();
  const Corpus corpus = prepare_corpus(c);
  const TinyLM model = TinyLM::initialize(c.model_config(), Seed{8});
  const TinyLM before = model;
  const std::string prompt = render_system_prompt(corpus, c.system_prompt);
  CHECK(prompt.find(corpus.author_names(Split::forget).front()) != std::string::npos);
  CHECK(prompt.find("{authors}") == std::string::npos);
  const MetricsReport plain = evaluate(model, corpus, c.eval_options());
  const MetricsReport prefixed = input_based_baseline(model, corpus, prompt, c.eval_options());
  CHECK(model.params == before.params);
  CHECK(prefixed.mia_auc == plain.mia_auc);
  CHECK(prefixed.perplexity == plain.perplexity);
  const auto forget = training_examples(corpus, Split::forget);
  CHECK(batch_nll(model, forget) == batch_nll(before, forget));
}

TEST_CASE("input baseline rejects prompts that do not fit") {
  const ExperimentConfig c = small_config();
  const Corpus corpus = prepare_corpus(c);
  const TinyLM model = TinyLM::initialize(c.model_config(), Seed{8});
  CHECK_THROWS_AS(input_based_baseline(model, corpus, std::string(60, 'x')), std::length_error);
  CHECK_THROWS_AS(input_based_baseline(model, corpus, "caf\xc3\xa9 "), std::invalid_argument);
}

TEST_CASE("a prefix-obedient model loses forget accuracy under the baseline") {
  const ExperimentConfig c = small_config();
  const Corpus corpus = prepare_corpus(c);
  const std::string prompt = render_system_prompt(corpus, c.system_prompt);
  // Plain prompts map to the true answer; prefixed forget prompts map to a distractor.
  std::vector<Example> data;
  for (const auto& ex : corpus.examples) {
    if (ex.split == Split::holdout) continue;
    data.push_back(to_training_example(ex));
    if (ex.split == Split::forget) data.push_back(Example{text::encode(prompt + ex.prompt), encode_response(ex.perturbed[0])});
  }
  FinetuneConfig fc = c.finetune_config();
  fc.lr = 1e-2;
  fc.max_epochs = 600;
  const FinetuneResult ft = finetune(TinyLM::initialize(c.model_config(), Seed{3}), data, fc);
  const MetricsReport plain = evaluate(ft.model, corpus, c.eval_options());
  const MetricsReport prefixed = input_based_baseline(ft.model, corpus, prompt, c.eval_options());
  CHECK(plain.forget_acc == 1.0);
  CHECK(prefixed.forget_acc < plain.forget_acc);
}

TEST_CASE("report files") {
  RunRecord r;
  r.label = "only";
  r.method = "graddiff";
  r.optimizer = "so";
  MetricsReport m;
  m.forget_quality = 0.5;
  m.perplexity = 3.25;
  r.append(0, m);
  m.forget_acc = 0.25;
  r.append(1, m);
  const fs::path dir = scratch("report");
  emit_report({r}, dir);
  const std::string csv = slurp(dir / "results.csv");
  CHECK(csv.substr(0, csv.find('\n')) ==
        "run,method,optimizer,seed,epoch,forget_quality,forget_acc,rouge_forget,mia_auc,bleu,retain_acc,rouge_retain,"
        "holdout_acc,perplexity");
  CHECK(count_lines(csv) == 2);
  CHECK(csv.find("only,graddiff,so,42,1,0.500000,0.250000,") != std::string::npos);
  const std::string table = slurp(dir / "table.txt");
  CHECK(count_lines(table) == 3);
  CHECK(table.substr(table.rfind('\n', table.size() - 2) + 1, 4) == "only");
  const std::string plot = slurp(dir / "plot_only.dat");
  CHECK(count_lines(plot) == 3);
  CHECK(plot.rfind("# epoch\tforget_acc\tretain_acc\n", 0) == 0);
  CHECK(fs::exists(dir / "timings.csv"));
  CHECK_THROWS_AS(emit_report({}, dir), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("report into an unwritable location fails") {
  const fs::path file = scratch("blocker");
  std::ofstream(file) << "x";
  RunRecord r;
  r.label = "x";
  r.append(0, MetricsReport{});
  CHECK_THROWS_AS(emit_report({r}, file / "sub"), std::runtime_error);
  fs::remove(file);
}
