#include "unlearn/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace unlearn {

namespace {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("not a number: " + v);
  return d;
}

long long parse_int(const std::string& v) {
  std::size_t used = 0;
  const long long i = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument("not an integer: " + v);
  return i;
}

std::string quote(const std::string& s) { return nlohmann::json(s).dump(); }

std::string unquote(const std::string& v) {
  if (!v.empty() && v.front() == '"') return nlohmann::json::parse(v).get<std::string>();
  return v;
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field int_field(const char* key, T ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
          [member](ExperimentConfig& c, const std::string& v) { c.*member = static_cast<T>(parse_int(v)); }};
}

Field double_field(const char* key, double ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return format_double(c.*member); },
          [member](ExperimentConfig& c, const std::string& v) { c.*member = parse_double(v); }};
}

Field optional_field(const char* key, std::optional<double> ExperimentConfig::*member) {
  return {key,
          [member](const ExperimentConfig& c) { return (c.*member) ? format_double(*(c.*member)) : std::string("default"); },
          [member](ExperimentConfig& c, const std::string& v) {
            if (v == "default") c.*member = std::nullopt;
            else c.*member = parse_double(v);
          }};
}

Field string_field(const char* key, std::string ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return quote(c.*member); },
          [member](ExperimentConfig& c, const std::string& v) { c.*member = unquote(v); }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = {
      string_field("corpus", &C::corpus),
      int_field("n_authors", &C::n_authors),
      int_field("qa_per_author", &C::qa_per_author),
      double_field("forget_ratio", &C::forget_ratio),
      int_field("n_perturbed", &C::n_perturbed),
      {"arch", [](const C& c) { return to_string(c.arch); }, [](C& c, const std::string& v) { c.arch = parse_arch(v); }},
      int_field("context_window", &C::context_window),
      int_field("embed_dim", &C::embed_dim),
      int_field("hidden_dim", &C::hidden_dim),
      int_field("depth", &C::depth),
      double_field("finetune_lr", &C::finetune_lr),
      int_field("finetune_batch_size", &C::finetune_batch_size),
      int_field("finetune_max_epochs", &C::finetune_max_epochs),
      double_field("finetune_target_nll", &C::finetune_target_nll),
      {"method", [](const C& c) { return to_string(c.method); }, [](C& c, const std::string& v) { c.method = parse_method(v); }},
      {"optimizer", [](const C& c) { return to_string(c.optimizer); },
       [](C& c, const std::string& v) { c.optimizer = parse_procedure(v); }},
      {"schedule", [](const C& c) { return to_string(c.schedule); },
       [](C& c, const std::string& v) { c.schedule = parse_schedule(v); }},
      optional_field("lambda", &C::lambda),
      double_field("beta", &C::beta),
      double_field("lr", &C::lr),
      int_field("epochs", &C::epochs),
      int_field("batch_size", &C::batch_size),
      double_field("weight_decay", &C::weight_decay),
      optional_field("damping", &C::damping),
      {"seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, const std::string& v) {
         std::size_t used = 0;
         c.seed = std::stoull(v, &used);
         if (used != v.size() || v.front() == '-') throw std::invalid_argument("not a seed: " + v);
       }},
      int_field("eval_every", &C::eval_every),
      double_field("min_k_percent", &C::min_k_percent),
      int_field("max_new_tokens", &C::max_new_tokens),
      string_field("system_prompt", &C::system_prompt),
      string_field("output_dir", &C::output_dir),
  };
  return table;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string epochs_csv(const RunRecord& record) {
  std::string out = csv_header() + "\n";
  for (const auto& e : record.epochs) out += csv_row(record, e) + "\n";
  return out;
}

}  // namespace

std::string to_string(Procedure p) {
  switch (p) {
    case Procedure::fo: return "fo";
    case Procedure::so: return "so";
    case Procedure::iu: return "iu";
  }
  return "?";
}

Procedure parse_procedure(std::string_view name) {
  if (name == "fo") return Procedure::fo;
  if (name == "so") return Procedure::so;
  if (name == "iu") return Procedure::iu;
  throw std::invalid_argument("unknown optimizer: " + std::string(name) + " (expected fo, so or iu)");
}

void ExperimentConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be positive");
  if (finetune_batch_size < 1) throw std::invalid_argument("finetune_batch_size must be positive");
  if (!(finetune_lr > 0.0)) throw std::invalid_argument("finetune_lr must be positive");
  if (max_new_tokens < 1) throw std::invalid_argument("max_new_tokens must be positive");
  if (damping && !(*damping >= 0.0)) throw std::invalid_argument("damping must be >= 0");
  model_config().validate();
  MethodConfig{method, effective_lambda(), beta}.validate();
}

double ExperimentConfig::effective_lambda() const {
  return lambda ? *lambda : default_lambda(method, optimizer == Procedure::so);
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m;
  m.arch = arch;
  m.context_window = context_window;
  m.embed_dim = embed_dim;
  m.hidden_dim = hidden_dim;
  m.depth = depth;
  return m;
}

CorpusOptions ExperimentConfig::corpus_options() const {
  CorpusOptions o;
  o.seed = Seed{seed};
  o.n_authors = n_authors;
  o.qa_per_author = qa_per_author;
  o.forget_ratio = forget_ratio;
  o.n_perturbed = n_perturbed;
  return o;
}

FinetuneConfig ExperimentConfig::finetune_config() const {
  FinetuneConfig f;
  f.lr = finetune_lr;
  f.batch_size = static_cast<std::size_t>(finetune_batch_size);
  f.max_epochs = finetune_max_epochs;
  f.target_nll = finetune_target_nll;
  f.seed = Seed{seed};
  return f;
}

RunConfig ExperimentConfig::run_config() const {
  RunConfig r;
  r.optimizer = optimizer == Procedure::fo ? OptimizerKind::fo : OptimizerKind::so;
  r.schedule = schedule;
  r.lr = LearningRateSchedule::constant(lr);
  r.epochs = epochs;
  r.batch_size = static_cast<std::size_t>(batch_size);
  r.seed = Seed{seed};
  r.weight_decay = weight_decay;
  return r;
}

EvalOptions ExperimentConfig::eval_options() const {
  EvalOptions e;
  e.min_k_percent = min_k_percent;
  e.max_new_tokens = max_new_tokens;
  return e;
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      try {
        f.set(config, value);
      } catch (const std::exception& e) {
        throw std::invalid_argument("bad value for " + key + ": " + value + " (" + e.what() + ")");
      }
      return;
    }
  }
  throw std::invalid_argument("unknown config key: " + key);
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    try {
      if (eq == std::string::npos) throw std::invalid_argument("expected key = value");
      set_config_value(config, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return config;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

void save_config(const ExperimentConfig& config, const fs::path& path) { write_file(path, serialize_config(config)); }

fs::path default_output_root() {
  if (const char* env = std::getenv("UNLEARN_OUTPUT_ROOT"); env && *env) return env;
  return "runs";
}

void RunRecord::append(int epoch, const MetricsReport& metrics) {
  if (!epochs.empty() && epoch <= epochs.back().epoch) throw std::logic_error("run record epochs must increase");
  epochs.push_back(EpochMetrics{epoch, metrics});
}

const MetricsReport& RunRecord::final_metrics() const {
  if (epochs.empty()) throw std::logic_error("run record " + label + " has no evaluations");
  return epochs.back().metrics;
}

Corpus prepare_corpus(const ExperimentConfig& config) {
  if (!config.corpus.empty()) return load_corpus(config.corpus);
  return generate_corpus(config.corpus_options());
}

FinetuneResult finetune_model(const Corpus& corpus, const ExperimentConfig& config) {
  const ModelConfig mc = config.model_config();
  mc.validate();
  if (corpus.max_text_length() + 1 > static_cast<std::size_t>(mc.context_window)) {
    throw std::length_error("corpus texts exceed the context window of " + std::to_string(mc.context_window));
  }
  auto data = training_examples(corpus, Split::forget);
  const auto retain = training_examples(corpus, Split::retain);
  data.insert(data.end(), retain.begin(), retain.end());
  return finetune(TinyLM::initialize(mc, Seed{config.seed}), data, config.finetune_config());
}

RunRecord run_experiment(const TinyLM& original, const Corpus& corpus, const ExperimentConfig& config,
                         const std::string& label, const fs::path& out_dir) {
  config.validate();
  RunRecord record;
  record.label = label;
  record.method = to_string(config.method);
  record.optimizer = to_string(config.optimizer);
  record.config = config;
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    save_config(config, out_dir / "config.txt");
  }
  const EvalOptions eval_opts = config.eval_options();
  auto evaluate_at = [&](int epoch, const TinyLM& model) {
    const auto t0 = std::chrono::steady_clock::now();
    record.append(epoch, evaluate(model, corpus, eval_opts));
    record.timings.eval_seconds += seconds_since(t0);
  };

  evaluate_at(0, original);
  TinyLM final_model = original;
  const auto forget = training_examples(corpus, Split::forget);
  const auto retain = training_examples(corpus, Split::retain);

  if (config.epochs > 0 && config.optimizer == Procedure::iu) {
    LmInfluenceOptions opts;
    opts.damping = config.damping;
    opts.hessian = HessianSource::mean;
    const auto t0 = std::chrono::steady_clock::now();
    final_model = influence_unlearn_lm(original, forget, retain, opts);
    record.timings.unlearn_seconds = seconds_since(t0);
    evaluate_at(1, final_model);
  } else if (config.epochs > 0) {
    UnlearnTask task;
    task.forget = forget;
    task.retain = retain;
    task.reject_pool = reject_targets(corpus);
    task.method = MethodConfig{config.method, config.effective_lambda(), config.beta};
    const auto t0 = std::chrono::steady_clock::now();
    const RunResult result = run_unlearning(original, task, config.run_config());
    record.timings.unlearn_seconds = seconds_since(t0);
    for (int e = 1; e <= config.epochs; ++e) {
      if (e % config.eval_every != 0 && e != config.epochs) continue;
      TinyLM m = original;
      m.params = result.epoch_params[static_cast<std::size_t>(e)];
      evaluate_at(e, m);
    }
    final_model.params = result.final_params;
    if (!out_dir.empty()) {
      std::ofstream log(out_dir / "trajectory.log", std::ios::binary | std::ios::trunc);
      if (!log) throw std::runtime_error("cannot write " + (out_dir / "trajectory.log").string());
      std::ostringstream note;
      note << label << "; lambda " << std::setprecision(17) << config.effective_lambda()
           << " scales the retain loss before the optimizer moments";
      write_trajectory_log(log, result, note.str());
    }
  }

  if (!out_dir.empty()) {
    record.checkpoint = out_dir / "model.ckpt";
    save_checkpoint(final_model, record.checkpoint);
    write_file(out_dir / "epochs.csv", epochs_csv(record));
    write_file(out_dir / "timings.txt", "unlearn_seconds = " + format_double(record.timings.unlearn_seconds) +
                                            "\neval_seconds = " + format_double(record.timings.eval_seconds) + "\n");
  }
  return record;
}

std::string render_system_prompt(const Corpus& corpus, const std::string& templ) {
  std::string names;
  for (const auto& n : corpus.author_names(Split::forget)) names += (names.empty() ? "" : ", ") + n;
  std::string out = templ;
  const std::string key = "{authors}";
  for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + names.size())) {
    out.replace(pos, key.size(), names);
  }
  return out;
}

MetricsReport input_based_baseline(const TinyLM& model, const Corpus& corpus, const std::string& system_prompt,
                                   const EvalOptions& options) {
  if (!text::representable(system_prompt)) throw std::invalid_argument("system prompt has characters outside the alphabet");
  const auto limit = static_cast<std::size_t>(model.config.context_window);
  for (const auto& ex : corpus.examples) {
    std::size_t longest = ex.answer.size();
    for (const auto& p : ex.perturbed) longest = std::max(longest, p.size());
    if (system_prompt.size() + ex.prompt.size() + longest + 1 > limit) {
      throw std::length_error("system prompt of " + std::to_string(system_prompt.size()) +
                              " characters does not fit the context window of " + std::to_string(limit));
    }
  }
  EvalOptions opts = options;
  opts.prompt_prefix = system_prompt;
  return evaluate(model, corpus, opts);
}

const std::string& csv_header() {
  static const std::string header =
      "run,method,optimizer,seed,epoch,forget_quality,forget_acc,rouge_forget,mia_auc,bleu,retain_acc,rouge_retain,"
      "holdout_acc,perplexity";
  return header;
}

std::string csv_row(const RunRecord& record, const EpochMetrics& row) {
  const MetricsReport& m = row.metrics;
  std::string out = record.label + "," + record.method + "," + record.optimizer + "," + std::to_string(record.config.seed) +
                    "," + std::to_string(row.epoch);
  for (double v : {m.forget_quality, m.forget_acc, m.rouge_forget, m.mia_auc, m.bleu, m.retain_acc, m.rouge_retain,
                   m.holdout_acc}) {
    out += "," + fmt("%.6f", v);
  }
  out += "," + fmt("%.6g", m.perplexity);
  return out;
}

void emit_report(const std::vector<RunRecord>& records, const fs::path& out_dir) {
  if (records.empty()) throw std::invalid_argument("emit_report: no run records");
  ensure_dir(out_dir);

  std::string csv = csv_header() + "\n";
  for (const auto& r : records) csv += csv_row(r, r.epochs.at(r.epochs.size() - 1)) + "\n";
  write_file(out_dir / "results.csv", csv);

  std::string table;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %6s %6s %6s %6s %6s | %6s %6s %6s %10s\n", "run", "FQ", "F-Acc", "R-F", "MIA",
                "BLEU", "R-Acc", "R-R", "H-Acc", "PPL");
  table += buf;
  table += std::string(std::string_view(buf).size() - 1, '-') + "\n";
  for (const auto& r : records) {
    const MetricsReport& m = r.final_metrics();
    std::snprintf(buf, sizeof buf, "%-16s %6.3f %6.3f %6.3f %6.3f %6.3f | %6.3f %6.3f %6.3f %10.4g\n", r.label.c_str(),
                  m.forget_quality, m.forget_acc, m.rouge_forget, m.mia_auc, m.bleu, m.retain_acc, m.rouge_retain,
                  m.holdout_acc, m.perplexity);
    table += buf;
  }
  write_file(out_dir / "table.txt", table);

  std::string timings = "run,unlearn_seconds,eval_seconds\n";
  for (const auto& r : records) {
    std::string plot = "# epoch\tforget_acc\tretain_acc\n";
    for (const auto& e : r.epochs) {
      plot += std::to_string(e.epoch) + "\t" + fmt("%.6f", e.metrics.forget_acc) + "\t" + fmt("%.6f", e.metrics.retain_acc) + "\n";
    }
    write_file(out_dir / ("plot_" + r.label + ".dat"), plot);
    timings += r.label + "," + fmt("%.6f", r.timings.unlearn_seconds) + "," + fmt("%.6f", r.timings.eval_seconds) + "\n";
  }
  write_file(out_dir / "timings.csv", timings);
}

RunRecord load_run(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw std::runtime_error("run directory not found: " + run_dir.string());
  RunRecord record;
  record.config = load_config(run_dir / "config.txt");
  std::istringstream in(read_file(run_dir / "epochs.csv"));
  std::string line;
  std::getline(in, line);
  if (line != csv_header()) throw std::runtime_error(run_dir.string() + "/epochs.csv: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 14) throw std::runtime_error(run_dir.string() + "/epochs.csv: malformed row");
    record.label = cells[0];
    record.method = cells[1];
    record.optimizer = cells[2];
    MetricsReport m;
    double* targets[] = {&m.forget_quality, &m.forget_acc, &m.rouge_forget, &m.mia_auc, &m.bleu,
                         &m.retain_acc,     &m.rouge_retain, &m.holdout_acc, &m.perplexity};
    for (std::size_t k = 0; k < 9; ++k) *targets[k] = std::strtod(cells[5 + k].c_str(), nullptr);
    record.append(static_cast<int>(parse_int(cells[4])), m);
  }
  if (record.epochs.empty()) throw std::runtime_error(run_dir.string() + "/epochs.csv: no rows");
  if (fs::exists(run_dir / "model.ckpt")) record.checkpoint = run_dir / "model.ckpt";
  if (fs::exists(run_dir / "timings.txt")) {
    std::istringstream t(read_file(run_dir / "timings.txt"));
    while (std::getline(t, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = trim(line.substr(0, eq));
      const double v = parse_double(trim(line.substr(eq + 1)));
      if (key == "unlearn_seconds") record.timings.unlearn_seconds = v;
      if (key == "eval_seconds") record.timings.eval_seconds = v;
    }
  }
  return record;
}

std::vector<RunRecord> run_pipeline(const ExperimentConfig& base,
                                    const std::vector<std::pair<std::string, ExperimentConfig>>& sweep,
                                    const fs::path& out_dir) {
  base.validate();
  ensure_dir(out_dir);
  save_config(base, out_dir / "config.txt");
  const Corpus corpus = prepare_corpus(base);
  save_corpus(corpus, out_dir / "corpus.jsonl");
  const FinetuneResult ft = finetune_model(corpus, base);
  if (!ft.converged) {
    throw std::runtime_error("fine-tuning stopped at NLL " + format_double(ft.final_nll) + " above the target " +
                             format_double(base.finetune_target_nll));
  }
  save_checkpoint(ft.model, out_dir / "original.ckpt");

  std::vector<RunRecord> records;
  const EvalOptions eval_opts = base.eval_options();
  RunRecord original;
  original.label = "original";
  original.config = base;
  original.checkpoint = out_dir / "original.ckpt";
  auto t0 = std::chrono::steady_clock::now();
  original.append(0, evaluate(ft.model, corpus, eval_opts));
  original.timings.eval_seconds = seconds_since(t0);
  records.push_back(original);

  RunRecord input;
  input.label = "input";
  input.method = "input";
  input.config = base;
  input.checkpoint = out_dir / "original.ckpt";
  t0 = std::chrono::steady_clock::now();
  input.append(0, input_based_baseline(ft.model, corpus, render_system_prompt(corpus, base.system_prompt), eval_opts));
  input.timings.eval_seconds = seconds_since(t0);
  records.push_back(input);

  for (const auto& [label, cfg] : sweep) records.push_back(run_experiment(ft.model, corpus, cfg, label, out_dir / label));
  emit_report(records, out_dir);
  return records;
}

}  // namespace unlearn
