#include "ranker/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "ranker/rng.hpp"

namespace ranker {

namespace {

using nlohmann::json;

[[noreturn]] void fail_at(const std::string& path, std::size_t line,
                          const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void check_passage(const std::string& path, std::size_t line, Passage& p,
                   std::unordered_set<std::string>& seen) {
  if (p.id.empty()) fail_at(path, line, "empty \"id\"");
  if (p.context_id.empty()) fail_at(path, line, "empty \"context\"");
  if (trim(p.text).empty())
    fail_at(path, line, "passage \"" + p.id + "\" has empty text");
  if (!std::isfinite(p.score))
    fail_at(path, line, "passage \"" + p.id + "\" has non-finite score");
  if (p.raw_votes &&
      (p.raw_votes->item < 0 || p.raw_votes->parent < 0))
    fail_at(path, line, "passage \"" + p.id + "\" has negative vote counts");
  if (!seen.insert(p.id).second)
    fail_at(path, line, "duplicate id \"" + p.id + "\"");
}

Passage passage_from_json(const std::string& path, std::size_t line,
                          const json& j) {
  Passage p;
  for (const char* field : {"id", "context", "text", "score"})
    if (!j.contains(field))
      fail_at(path, line, std::string("missing required field \"") + field +
                              "\"");
  if (!j["id"].is_string()) fail_at(path, line, "\"id\" must be a string");
  if (!j["context"].is_string())
    fail_at(path, line, "\"context\" must be a string");
  if (!j["text"].is_string()) fail_at(path, line, "\"text\" must be a string");
  if (!j["score"].is_number())
    fail_at(path, line, "\"score\" must be a number");
  p.id = j["id"].get<std::string>();
  p.context_id = j["context"].get<std::string>();
  p.text = j["text"].get<std::string>();
  p.score = j["score"].get<double>();
  if (j.contains("timestamp")) {
    if (!j["timestamp"].is_number_integer())
      fail_at(path, line, "\"timestamp\" must be an integer");
    p.timestamp = j["timestamp"].get<long long>();
  }
  const bool has_item = j.contains("item_votes");
  const bool has_parent = j.contains("parent_votes");
  if (has_item != has_parent)
    fail_at(path, line, "item_votes and parent_votes must appear together");
  if (has_item) {
    if (!j["item_votes"].is_number_integer() ||
        !j["parent_votes"].is_number_integer())
      fail_at(path, line, "vote counts must be integers");
    p.raw_votes = Votes{j["item_votes"].get<long long>(),
                        j["parent_votes"].get<long long>()};
  }
  return p;
}

json passage_to_json(const Passage& p) {
  json j;
  j["id"] = p.id;
  j["context"] = p.context_id;
  j["text"] = p.text;
  j["score"] = p.score;
  if (p.timestamp) j["timestamp"] = *p.timestamp;
  if (p.raw_votes) {
    j["item_votes"] = p.raw_votes->item;
    j["parent_votes"] = p.raw_votes->parent;
  }
  return j;
}

Corpus load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Corpus corpus;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail_at(path, lineno, std::string("JSON parse failure: ") + e.what());
    }
    if (!j.is_object()) fail_at(path, lineno, "record is not a JSON object");
    Passage p = passage_from_json(path, lineno, j);
    check_passage(path, lineno, p, seen);
    corpus.passages.push_back(std::move(p));
  }
  return corpus;
}

// RFC 4180-style row split: quoted fields may contain commas and doubled
// quotes. The row is one physical line (no embedded newlines).
std::vector<std::string> split_csv_row(const std::string& path,
                                       std::size_t line,
                                       const std::string& row) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < row.size(); ++i) {
    const char c = row[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < row.size() && row[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      if (!cur.empty()) fail_at(path, line, "stray quote in CSV field");
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c == '\r') {
      // tolerate CRLF
    } else {
      cur += c;
    }
  }
  if (quoted) fail_at(path, line, "unterminated quoted CSV field");
  out.push_back(cur);
  return out;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

long long parse_int_field(const std::string& path, std::size_t line,
                          const std::string& name, const std::string& raw) {
  try {
    std::size_t pos = 0;
    long long x = std::stoll(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument(raw);
    return x;
  } catch (const std::exception&) {
    fail_at(path, line, "\"" + name + "\" is not an integer: " + raw);
  }
}

double parse_real_field(const std::string& path, std::size_t line,
                        const std::string& name, const std::string& raw) {
  try {
    std::size_t pos = 0;
    double x = std::stod(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument(raw);
    return x;
  } catch (const std::exception&) {
    fail_at(path, line, "\"" + name + "\" is not a number: " + raw);
  }
}

Corpus load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error(path + ": empty file, header row required");
  auto names = split_csv_row(path, 1, header);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < names.size(); ++i) col[trim(names[i])] = i;
  for (const char* field : {"id", "context", "text", "score"})
    if (!col.count(field))
      throw std::runtime_error(path + ":1: missing required column \"" +
                               field + "\"");
  const bool has_item = col.count("item_votes") != 0;
  const bool has_parent = col.count("parent_votes") != 0;
  if (has_item != has_parent)
    throw std::runtime_error(
        path + ":1: item_votes and parent_votes columns must appear together");

  Corpus corpus;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 1;
  auto cell = [&](const std::vector<std::string>& row,
                  const std::string& name) -> std::string {
    auto it = col.find(name);
    if (it == col.end() || it->second >= row.size()) return "";
    return row[it->second];
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto row = split_csv_row(path, lineno, line);
    Passage p;
    p.id = cell(row, "id");
    p.context_id = cell(row, "context");
    p.text = cell(row, "text");
    const std::string score_raw = cell(row, "score");
    if (score_raw.empty()) fail_at(path, lineno, "missing \"score\" value");
    p.score = parse_real_field(path, lineno, "score", score_raw);
    const std::string ts = cell(row, "timestamp");
    if (!ts.empty()) p.timestamp = parse_int_field(path, lineno, "timestamp", ts);
    const std::string iv = cell(row, "item_votes");
    const std::string pv = cell(row, "parent_votes");
    if (iv.empty() != pv.empty())
      fail_at(path, lineno, "item_votes and parent_votes must appear together");
    if (!iv.empty())
      p.raw_votes = Votes{parse_int_field(path, lineno, "item_votes", iv),
                          parse_int_field(path, lineno, "parent_votes", pv)};
    check_passage(path, lineno, p, seen);
    corpus.passages.push_back(std::move(p));
  }
  return corpus;
}

}  // namespace

Corpus load_dataset(const std::string& path, CorpusFormat format) {
  return format == CorpusFormat::jsonl ? load_jsonl(path) : load_csv(path);
}

void save_dataset(const Corpus& corpus, const std::string& path,
                  CorpusFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  if (format == CorpusFormat::jsonl) {
    for (const Passage& p : corpus.passages)
      out << passage_to_json(p).dump() << '\n';
  } else {
    out << "id,context,text,score,timestamp,item_votes,parent_votes\n";
    for (const Passage& p : corpus.passages) {
      json s = p.score;  // shortest round-trip float formatting
      out << csv_quote(p.id) << ',' << csv_quote(p.context_id) << ','
          << csv_quote(p.text) << ',' << s.dump() << ',';
      if (p.timestamp) out << *p.timestamp;
      out << ',';
      if (p.raw_votes) out << p.raw_votes->item;
      out << ',';
      if (p.raw_votes) out << p.raw_votes->parent;
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failure on " + path);
}

CorpusFormat format_from_path(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv")
    return CorpusFormat::csv;
  return CorpusFormat::jsonl;
}

Corpus normalize_and_bin(const Corpus& corpus, int bins) {
  if (bins < 2) throw std::invalid_argument("normalize_and_bin: bins must be >= 2");
  Corpus out = corpus;
  for (Passage& p : out.passages) {
    if (!p.raw_votes)
      throw std::runtime_error("normalize_and_bin: passage \"" + p.id +
                               "\" has no raw_votes");
    p.score = static_cast<double>(p.raw_votes->item) /
              (static_cast<double>(p.raw_votes->parent) + 1.0);
  }
  double lo = out.passages.empty() ? 0.0 : out.passages.front().score;
  double hi = lo;
  for (const Passage& p : out.passages) {
    lo = std::min(lo, p.score);
    hi = std::max(hi, p.score);
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  for (Passage& p : out.passages) {
    int b = 1;
    if (width > 0.0)
      b = 1 + static_cast<int>(std::floor((p.score - lo) / width));
    p.label = std::clamp(b, 1, bins);
  }
  return out;
}

void validate_spec(const SyntheticSpec& spec) {
  if (spec.num_contexts == 0)
    throw std::invalid_argument("synthetic: num_contexts must be positive");
  if (spec.passages_per_context_min == 0 ||
      spec.passages_per_context_max < spec.passages_per_context_min)
    throw std::invalid_argument("synthetic: bad passages_per_context range");
  double sum = 0.0;
  for (double p : spec.class_probabilities) {
    if (p < 0.0) throw std::invalid_argument("synthetic: negative class probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("synthetic: class probabilities must sum to 1");
  if (spec.vocab_size == 0 || spec.quality_lexicon_size == 0)
    throw std::invalid_argument("synthetic: vocabulary sizes must be positive");
  if (spec.noise_rate < 0.0 || spec.noise_rate > 1.0)
    throw std::invalid_argument("synthetic: noise_rate must be in [0, 1]");
}

namespace {

// Shared text model for both generator entry points. Class c in 1..5 mixes
// positive and negative lexicon tokens at ratio (c-1)/4.
std::string synth_token(const SyntheticSpec& spec, StableRng& rng, int cls) {
  const double p_pos = (static_cast<double>(cls) - 1.0) / 4.0;
  if (rng.next_real() < p_pos)
    return "pos" + std::to_string(rng.next_below(spec.quality_lexicon_size));
  return "neg" + std::to_string(rng.next_below(spec.quality_lexicon_size));
}

std::string noise_token(const SyntheticSpec& spec, StableRng& rng) {
  const std::uint64_t total =
      spec.vocab_size + 2 * spec.quality_lexicon_size;
  std::uint64_t r = rng.next_below(total);
  if (r < spec.vocab_size) return "w" + std::to_string(r);
  r -= spec.vocab_size;
  if (r < spec.quality_lexicon_size) return "pos" + std::to_string(r);
  return "neg" + std::to_string(r - spec.quality_lexicon_size);
}

Passage synth_passage(const SyntheticSpec& spec, StableRng& rng,
                      std::size_t ctx, std::size_t idx, int cls) {
  Passage p;
  {
    std::ostringstream id;
    id << "c" << ctx << "p" << idx;
    p.id = id.str();
  }
  p.context_id = "ctx" + std::to_string(ctx);
  p.score = static_cast<double>(cls);
  p.label = cls;
  const std::size_t n_filler = 4 + rng.next_below(5);   // 4..8
  const std::size_t n_quality = 8 + rng.next_below(5);  // 8..12
  std::vector<std::string> tokens;
  tokens.reserve(1 + n_filler + n_quality);
  tokens.push_back("u" + std::to_string(ctx));
  for (std::size_t i = 0; i < n_filler; ++i)
    tokens.push_back("w" + std::to_string(rng.next_below(spec.vocab_size)));
  for (std::size_t i = 0; i < n_quality; ++i)
    tokens.push_back(synth_token(spec, rng, cls));
  rng.shuffle(tokens);
  for (auto& t : tokens) {
    if (spec.noise_rate > 0.0 && rng.next_real() < spec.noise_rate)
      t = noise_token(spec, rng);
  }
  std::string text;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) text += ' ';
    text += tokens[i];
  }
  p.text = std::move(text);
  return p;
}

int draw_class(const SyntheticSpec& spec, StableRng& rng) {
  const double u = rng.next_real();
  double acc = 0.0;
  for (int c = 0; c < 5; ++c) {
    acc += spec.class_probabilities[c];
    if (u < acc) return c + 1;
  }
  return 5;
}

// Timestamps increase with score within each context (deterministic tie
// break on id), planting the skill-improves-over-time pattern the temporal
// evaluation looks for.
void assign_timestamps(std::vector<Passage>& ctx_passages, std::size_t ctx) {
  std::vector<std::size_t> order(ctx_passages.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (ctx_passages[a].score != ctx_passages[b].score)
      return ctx_passages[a].score < ctx_passages[b].score;
    return ctx_passages[a].id < ctx_passages[b].id;
  });
  const long long base =
      1'600'000'000LL + static_cast<long long>(ctx) * 1'000'000LL;
  for (std::size_t r = 0; r < order.size(); ++r)
    ctx_passages[order[r]].timestamp = base + static_cast<long long>(r) * 3600;
}

}  // namespace

Corpus generate_synthetic(const SyntheticSpec& spec) {
  validate_spec(spec);
  StableRng rng(derive_seed(spec.seed, "synthetic"));
  Corpus corpus;
  for (std::size_t ctx = 0; ctx < spec.num_contexts; ++ctx) {
    const std::size_t span =
        spec.passages_per_context_max - spec.passages_per_context_min + 1;
    const std::size_t n =
        spec.passages_per_context_min + rng.next_below(span);
    std::vector<Passage> group;
    group.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      group.push_back(synth_passage(spec, rng, ctx, i, draw_class(spec, rng)));
    assign_timestamps(group, ctx);
    for (auto& p : group) corpus.passages.push_back(std::move(p));
  }
  return corpus;
}

Corpus generate_balanced_synthetic(const SyntheticSpec& spec,
                                   std::size_t per_class) {
  validate_spec(spec);
  if (per_class == 0)
    throw std::invalid_argument("synthetic: per_class must be positive");
  StableRng rng(derive_seed(spec.seed, "synthetic-balanced"));
  std::vector<int> classes;
  classes.reserve(per_class * 5);
  for (int c = 1; c <= 5; ++c)
    for (std::size_t i = 0; i < per_class; ++i) classes.push_back(c);
  rng.shuffle(classes);
  const std::size_t total = classes.size();
  const std::size_t per_ctx =
      (total + spec.num_contexts - 1) / spec.num_contexts;
  Corpus corpus;
  std::size_t taken = 0;
  for (std::size_t ctx = 0; ctx < spec.num_contexts && taken < total; ++ctx) {
    std::vector<Passage> group;
    for (std::size_t i = 0; i < per_ctx && taken < total; ++i, ++taken)
      group.push_back(synth_passage(spec, rng, ctx, i, classes[taken]));
    assign_timestamps(group, ctx);
    for (auto& p : group) corpus.passages.push_back(std::move(p));
  }
  return corpus;
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus,
                                       SplitStrategy strategy,
                                       double test_fraction,
                                       std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split_corpus: test_fraction must be in (0, 1)");
  const std::size_t n = corpus.size();
  std::vector<bool> in_test(n, false);

  if (strategy == SplitStrategy::random) {
    if (n < 2) throw std::invalid_argument("split_corpus: need at least 2 passages");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    StableRng rng(derive_seed(seed, "split-random"));
    rng.shuffle(idx);
    std::size_t n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(n)));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    for (std::size_t i = 0; i < n_test; ++i) in_test[idx[i]] = true;
  } else if (strategy == SplitStrategy::by_context) {
    std::vector<std::string> contexts;
    {
      std::unordered_set<std::string> seen;
      for (const Passage& p : corpus.passages)
        if (seen.insert(p.context_id).second) contexts.push_back(p.context_id);
    }
    std::sort(contexts.begin(), contexts.end());
    if (contexts.size() < 2)
      throw std::invalid_argument(
          "split_corpus: by_context needs at least 2 contexts");
    StableRng rng(derive_seed(seed, "split-context"));
    rng.shuffle(contexts);
    std::size_t n_test_ctx = static_cast<std::size_t>(std::llround(
        test_fraction * static_cast<double>(contexts.size())));
    n_test_ctx = std::clamp<std::size_t>(n_test_ctx, 1, contexts.size() - 1);
    std::unordered_set<std::string> test_ctx(contexts.begin(),
                                             contexts.begin() + n_test_ctx);
    for (std::size_t i = 0; i < n; ++i)
      in_test[i] = test_ctx.count(corpus.passages[i].context_id) != 0;
  } else {  // temporal
    std::map<std::string, std::vector<std::size_t>> by_ctx;
    for (std::size_t i = 0; i < n; ++i) {
      if (!corpus.passages[i].timestamp)
        throw std::runtime_error("split_corpus: temporal split requires a "
                                 "timestamp on every passage (missing on \"" +
                                 corpus.passages[i].id + "\")");
      by_ctx[corpus.passages[i].context_id].push_back(i);
    }
    for (auto& [ctx, idx] : by_ctx) {
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto& pa = corpus.passages[a];
        const auto& pb = corpus.passages[b];
        if (*pa.timestamp != *pb.timestamp) return *pa.timestamp < *pb.timestamp;
        return pa.id < pb.id;
      });
      std::size_t n_test = static_cast<std::size_t>(std::llround(
          test_fraction * static_cast<double>(idx.size())));
      n_test = std::min(n_test, idx.size());
      for (std::size_t k = idx.size() - n_test; k < idx.size(); ++k)
        in_test[idx[k]] = true;
    }
  }

  Corpus train, test;
  train.schema_version = corpus.schema_version;
  test.schema_version = corpus.schema_version;
  for (std::size_t i = 0; i < n; ++i)
    (in_test[i] ? test : train).passages.push_back(corpus.passages[i]);
  return {std::move(train), std::move(test)};
}

int passage_class(const Passage& p) {
  if (p.label) return *p.label;
  const double r = std::round(p.score);
  if (std::abs(p.score - r) < 1e-9) return static_cast<int>(r);
  throw std::runtime_error("passage \"" + p.id +
                           "\" has no class label and a non-integer score");
}

}  // namespace ranker
