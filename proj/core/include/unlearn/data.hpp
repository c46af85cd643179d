#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "unlearn/model.hpp"
#include "unlearn/numerics.hpp"

namespace unlearn {

enum class Split { forget, retain, holdout, worldfacts };
std::string to_string(Split split);
Split parse_split(std::string_view name);

struct Author {
  int id = 0;
  std::string name;
  Split split = Split::retain;
  friend bool operator==(const Author&, const Author&) = default;
};

struct CorpusExample {
  int id = 0;
  Split split = Split::retain;
  int author = 0;
  std::string prompt;
  std::string answer;
  std::vector<std::string> perturbed;
  std::string reject_pool_ref;
  friend bool operator==(const CorpusExample&, const CorpusExample&) = default;
};

/// Fictitious author profiles split into forget / retain / holdout.
/// Holdout authors are never trained on and serve as membership non-members.
struct Corpus {
  std::uint64_t seed = 0;
  double forget_ratio = 0.1;
  std::vector<Author> authors;
  std::vector<CorpusExample> examples;
  std::map<std::string, std::vector<std::string>> reject_pools;

  std::vector<const CorpusExample*> split(Split s) const;
  std::vector<std::string> author_names(Split s) const;
  /// Longest prompt + answer in characters (before the end token).
  std::size_t max_text_length() const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct CorpusOptions {
  Seed seed{42};
  int n_authors = 40;
  int qa_per_author = 10;
  double forget_ratio = 0.1;
  int n_perturbed = 4;
  /// Holdout authors generated on top of n_authors; -1 means "as many as are forgotten".
  int n_holdout = -1;
};

/// Default reject-style responses for PO targets.
const std::vector<std::string>& default_reject_answers();

/// Number of question templates; qa_per_author may not exceed it.
int question_template_count();

Corpus generate_corpus(const CorpusOptions& options);

/// Line-delimited JSON: a header record, one record per example, and an end
/// record carrying the example count.
std::string serialize_corpus(const Corpus& corpus);
Corpus parse_corpus(std::string_view text);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

/// FNV-1a 64 of the serialized corpus.
std::uint64_t corpus_checksum(const Corpus& corpus);

/// Tokenized views. Answers, perturbed answers and reject targets carry a
/// trailing end token.
TokenSequence encode_response(std::string_view answer);
Example to_training_example(const CorpusExample& ex);
std::vector<Example> training_examples(const Corpus& corpus, Split s);
std::vector<TokenSequence> reject_targets(const Corpus& corpus, const std::string& pool = "default");

}  // namespace unlearn
