#include "unlearn/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace unlearn {

namespace {

using nlohmann::json;

const std::vector<std::string> kJobs = {"baker",  "nurse",   "pilot",   "farmer", "lawyer", "painter", "tailor", "sailor",
                                        "dentist", "chemist", "poet",   "judge",  "miner",  "singer",  "weaver", "potter"};
const std::vector<std::string> kCities = {"Lima",  "Oslo",  "Rome",  "Cairo", "Delhi", "Paris", "Quito", "Seoul",
                                          "Tunis", "Perth", "Dakar", "Minsk", "Riga",  "Bern",  "Hanoi", "Accra"};
const std::vector<std::string> kTitleAdjectives = {"Red",  "Cold",   "Dark",   "Lost",  "Quiet", "Silver",
                                                   "Pale", "Bitter", "Hidden", "Last",  "Wild",  "Golden"};
const std::vector<std::string> kTitleNouns = {"Moon",  "Sea",   "River", "Crown", "Garden", "Road",
                                              "Storm", "Bridge", "Mirror", "Tower", "Harbor", "Forest"};
const std::vector<std::string> kGenres = {"mystery", "romance", "fantasy", "horror", "poetry",
                                          "satire",  "drama",   "thriller", "fable", "western"};
const std::vector<std::string> kPets = {"cat", "dog", "parrot", "rabbit", "turtle", "horse", "goat", "ferret", "owl", "lizard"};
const std::vector<std::string> kColors = {"red",  "blue",  "green",   "amber", "violet",
                                          "ivory", "teal", "crimson", "olive", "gray"};
const std::vector<std::string> kFoods = {"bread", "soup", "rice", "figs", "plums", "cheese", "pasta", "curry", "dates", "honey"};
const std::vector<std::string> kHobbies = {"chess",  "rowing",  "hiking", "fishing", "knitting",
                                           "archery", "dancing", "boxing", "golf",    "sailing"};
const std::vector<std::string> kAwards = {"Quill Prize", "Lamp Medal", "Oak Award", "Star Cup", "Iris Prize",
                                          "Gold Pen",    "Owl Medal",  "Sun Award", "Reed Cup", "Ink Prize"};

const std::string kConsonants = "BDFGKLMNPRSTVZ";
const std::string kVowels = "aeiou";
const std::string kLower = "bdfgklmnprstvz";

enum Attr { kJob, kBorn, kBook, kGenre, kPet, kColor, kFood, kHobby, kAward, kName, kAttrCount };

struct Template {
  Attr attr;
  const char* keyword;
};

// Prompt shapes: "<name> <keyword>: " except the name question.
constexpr Template kTemplates[] = {{kJob, "job"},     {kBorn, "born"},   {kBook, "book"},   {kGenre, "genre"},
                                   {kPet, "pet"},     {kColor, "color"}, {kFood, "food"},   {kHobby, "hobby"},
                                   {kAward, "award"}, {kName, "wrote"}};

const std::vector<std::string>* attr_table(Attr a) {
  switch (a) {
    case kJob: return &kJobs;
    case kBorn: return &kCities;
    case kGenre: return &kGenres;
    case kPet: return &kPets;
    case kColor: return &kColors;
    case kFood: return &kFoods;
    case kHobby: return &kHobbies;
    case kAward: return &kAwards;
    default: return nullptr;
  }
}

std::string make_name(Rng& rng) {
  std::string first;
  first += kConsonants[rng.index(kConsonants.size())];
  first += kVowels[rng.index(kVowels.size())];
  first += kLower[rng.index(kLower.size())];
  first += kVowels[rng.index(kVowels.size())];
  std::string last;
  last += kConsonants[rng.index(kConsonants.size())];
  last += kVowels[rng.index(kVowels.size())];
  last += kLower[rng.index(kLower.size())];
  return first + " " + last;
}

std::string prompt_for(const Template& t, const std::string& name, const std::string& title) {
  if (t.attr == kName) return "Who wrote " + title + ": ";
  return name + " " + t.keyword + ": ";
}

void require(bool ok, std::size_t line, const std::string& what) {
  if (!ok) throw std::runtime_error("corpus line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::forget: return "forget";
    case Split::retain: return "retain";
    case Split::holdout: return "holdout";
    case Split::worldfacts: return "worldfacts";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "forget") return Split::forget;
  if (name == "retain") return Split::retain;
  if (name == "holdout") return Split::holdout;
  if (name == "worldfacts") return Split::worldfacts;
  throw std::invalid_argument("unknown split: " + std::string(name));
}

std::vector<const CorpusExample*> Corpus::split(Split s) const {
  std::vector<const CorpusExample*> out;
  for (const auto& ex : examples) {
    if (ex.split == s) out.push_back(&ex);
  }
  return out;
}

std::vector<std::string> Corpus::author_names(Split s) const {
  std::vector<std::string> out;
  for (const auto& a : authors) {
    if (a.split == s) out.push_back(a.name);
  }
  return out;
}

std::size_t Corpus::max_text_length() const {
  std::size_t m = 0;
  for (const auto& ex : examples) {
    m = std::max(m, ex.prompt.size() + ex.answer.size());
    for (const auto& p : ex.perturbed) m = std::max(m, ex.prompt.size() + p.size());
  }
  return m;
}

const std::vector<std::string>& default_reject_answers() {
  static const std::vector<std::string> answers = {"I'm not sure.", "I'm not certain about that.",
                                                   "I haven't learned about that topic.",
                                                   "That's beyond my current knowledge base."};
  return answers;
}

int question_template_count() { return static_cast<int>(std::size(kTemplates)); }

Corpus generate_corpus(const CorpusOptions& options) {
  if (options.n_authors < 10) throw std::invalid_argument("n_authors must be at least 10");
  if (options.qa_per_author < 2 || options.qa_per_author > question_template_count()) {
    throw std::invalid_argument("qa_per_author must lie in [2, " + std::to_string(question_template_count()) + "]");
  }
  if (!(options.forget_ratio > 0.0 && options.forget_ratio < 1.0)) {
    throw std::invalid_argument("forget_ratio must lie in (0, 1)");
  }
  if (options.n_perturbed < 1) throw std::invalid_argument("n_perturbed must be positive");
  const int n_forget = static_cast<int>(std::ceil(options.forget_ratio * options.n_authors - 1e-9));
  if (n_forget < 1) throw std::invalid_argument("forget_ratio yields no forgotten authors");
  if (n_forget >= options.n_authors) throw std::invalid_argument("forget_ratio leaves no retained authors");
  const int n_holdout = options.n_holdout < 0 ? n_forget : options.n_holdout;
  const int total = options.n_authors + n_holdout;
  if (total > static_cast<int>(kTitleAdjectives.size() * kTitleNouns.size())) {
    throw std::invalid_argument("too many authors for the title table");
  }

  Rng rng = Rng::stream(options.seed, "data");
  Corpus corpus;
  corpus.seed = options.seed.value;
  corpus.forget_ratio = options.forget_ratio;
  corpus.reject_pools["default"] = default_reject_answers();

  std::vector<int> trained(static_cast<std::size_t>(options.n_authors));
  for (int i = 0; i < options.n_authors; ++i) trained[static_cast<std::size_t>(i)] = i;
  rng.shuffle(trained);
  std::set<int> forgotten(trained.begin(), trained.begin() + n_forget);

  std::set<std::string> used_names;
  std::vector<std::pair<std::size_t, std::size_t>> title_pairs;
  for (std::size_t a = 0; a < kTitleAdjectives.size(); ++a) {
    for (std::size_t n = 0; n < kTitleNouns.size(); ++n) title_pairs.emplace_back(a, n);
  }
  rng.shuffle(title_pairs);

  // attrs[author][attr] holds the correct answer string.
  std::vector<std::array<std::string, kAttrCount>> attrs(static_cast<std::size_t>(total));
  for (int id = 0; id < total; ++id) {
    Author author;
    author.id = id;
    do {
      author.name = make_name(rng);
    } while (!used_names.insert(author.name).second);
    author.split = id >= options.n_authors ? Split::holdout : forgotten.count(id) ? Split::forget : Split::retain;
    auto& row = attrs[static_cast<std::size_t>(id)];
    for (int a = 0; a < kAttrCount; ++a) {
      if (const auto* table = attr_table(static_cast<Attr>(a))) row[static_cast<std::size_t>(a)] = (*table)[rng.index(table->size())];
    }
    const auto [adj, noun] = title_pairs[static_cast<std::size_t>(id)];
    row[kBook] = kTitleAdjectives[adj] + " " + kTitleNouns[noun];
    row[kName] = author.name;
    corpus.authors.push_back(author);
  }

  int next_id = 0;
  for (const Author& author : corpus.authors) {
    const auto& row = attrs[static_cast<std::size_t>(author.id)];
    for (int q = 0; q < options.qa_per_author; ++q) {
      const Template& t = kTemplates[q];
      const std::string& answer = row[t.attr];
      // Distinct values other authors hold for this attribute, then the table.
      std::vector<std::string> pool;
      std::set<std::string> seen{answer};
      for (const auto& other : attrs) {
        if (seen.insert(other[t.attr]).second) pool.push_back(other[t.attr]);
      }
      rng.shuffle(pool);
      if (static_cast<int>(pool.size()) < options.n_perturbed) {
        if (const auto* table = attr_table(t.attr)) {
          for (const auto& v : *table) {
            if (seen.insert(v).second) pool.push_back(v);
          }
        }
      }
      if (static_cast<int>(pool.size()) < options.n_perturbed) {
        throw std::invalid_argument("not enough distinct values to build perturbed answers");
      }
      pool.resize(static_cast<std::size_t>(options.n_perturbed));

      CorpusExample ex;
      ex.id = next_id++;
      ex.split = author.split;
      ex.author = author.id;
      ex.prompt = prompt_for(t, author.name, row[kBook]);
      ex.answer = answer;
      ex.perturbed = std::move(pool);
      ex.reject_pool_ref = "default";
      corpus.examples.push_back(std::move(ex));
    }
  }
  return corpus;
}

std::string serialize_corpus(const Corpus& corpus) {
  std::ostringstream out;
  json header;
  header["format"] = "unlearn-corpus";
  header["version"] = 1;
  header["seed"] = corpus.seed;
  header["forget_ratio"] = corpus.forget_ratio;
  json authors = json::array();
  for (const auto& a : corpus.authors) authors.push_back({{"id", a.id}, {"name", a.name}, {"split", to_string(a.split)}});
  header["authors"] = authors;
  header["reject_pools"] = corpus.reject_pools;
  out << header.dump() << '\n';
  for (const auto& ex : corpus.examples) {
    json rec{{"id", ex.id},         {"split", to_string(ex.split)}, {"author", ex.author},
             {"prompt", ex.prompt}, {"answer", ex.answer},          {"perturbed", ex.perturbed},
             {"reject_pool_ref", ex.reject_pool_ref}};
    out << rec.dump() << '\n';
  }
  out << json{{"end", true}, {"count", corpus.examples.size()}}.dump() << '\n';
  return out.str();
}

Corpus parse_corpus(std::string_view text) {
  Corpus corpus;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  bool ended = false;
  while (std::getline(in, line)) {
    ++lineno;
    require(!ended, lineno, "content after end record");
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": malformed record (" + e.what() + ")");
    }
    require(rec.is_object(), lineno, "record is not an object");
    try {
      if (!header_seen) {
        require(rec.value("format", "") == "unlearn-corpus", lineno, "missing corpus header");
        require(rec.at("version").get<int>() == 1, lineno, "unsupported corpus version");
        corpus.seed = rec.at("seed").get<std::uint64_t>();
        corpus.forget_ratio = rec.at("forget_ratio").get<double>();
        for (const auto& a : rec.at("authors")) {
          corpus.authors.push_back(Author{a.at("id").get<int>(), a.at("name").get<std::string>(),
                                          parse_split(a.at("split").get<std::string>())});
        }
        corpus.reject_pools = rec.at("reject_pools").get<std::map<std::string, std::vector<std::string>>>();
        header_seen = true;
        continue;
      }
      if (rec.contains("end")) {
        require(rec.at("count").get<std::size_t>() == corpus.examples.size(), lineno, "example count mismatch");
        ended = true;
        continue;
      }
      CorpusExample ex;
      ex.id = rec.at("id").get<int>();
      ex.split = parse_split(rec.at("split").get<std::string>());
      ex.author = rec.at("author").get<int>();
      ex.prompt = rec.at("prompt").get<std::string>();
      ex.answer = rec.at("answer").get<std::string>();
      ex.perturbed = rec.at("perturbed").get<std::vector<std::string>>();
      ex.reject_pool_ref = rec.at("reject_pool_ref").get<std::string>();
      require(!ex.perturbed.empty(), lineno, "no perturbed answers");
      require(text::representable(ex.prompt) && text::representable(ex.answer), lineno, "text outside the alphabet");
      corpus.examples.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  require(header_seen, lineno + 1, "missing corpus header");
  require(ended, lineno + 1, "missing end record (file truncated?)");
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write corpus: " + path.string());
  out << serialize_corpus(corpus);
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("corpus not found: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_corpus(text);
}

std::uint64_t corpus_checksum(const Corpus& corpus) { return fnv1a64(serialize_corpus(corpus)); }

TokenSequence encode_response(std::string_view answer) {
  TokenSequence seq = text::encode(answer);
  seq.push_back(text::kEndOfSequence);
  return seq;
}

Example to_training_example(const CorpusExample& ex) { return Example{text::encode(ex.prompt), encode_response(ex.answer)}; }

std::vector<Example> training_examples(const Corpus& corpus, Split s) {
  std::vector<Example> out;
  for (const auto* ex : corpus.split(s)) out.push_back(to_training_example(*ex));
  return out;
}

std::vector<TokenSequence> reject_targets(const Corpus& corpus, const std::string& pool) {
  const auto it = corpus.reject_pools.find(pool);
  if (it == corpus.reject_pools.end() || it->second.empty()) throw std::invalid_argument("unknown or empty reject pool: " + pool);
  std::vector<TokenSequence> out;
  for (const auto& s : it->second) out.push_back(encode_response(s));
  return out;
}

}  // namespace unlearn
