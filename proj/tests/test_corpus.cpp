#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ranker/corpus.hpp"

#include "test_support.hpp"

using namespace ranker;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& contents = "") {
    path = std::string("/tmp/ranker_test_") + name;
    if (!contents.empty()) {
      std::ofstream out(path, std::ios::binary);
      out << contents;
    }
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("load_dataset parses JSONL records in order") {
  TempFile f("load.jsonl",
             R"({"id":"p1","context":"q1","text":"first answer","score":0.5}
{"id":"p2","context":"q1","text":"second answer","score":1.25,"timestamp":99,"item_votes":5,"parent_votes":3}
)");
  const Corpus c = load_dataset(f.path, CorpusFormat::jsonl);
  REQUIRE(c.size() == 2);
  CHECK(c.passages[0].id == "p1");
  CHECK(c.passages[0].score == 0.5);
  CHECK(!c.passages[0].timestamp);
  CHECK(c.passages[1].timestamp == 99);
  REQUIRE(c.passages[1].raw_votes);
  CHECK(c.passages[1].raw_votes->item == 5);
  CHECK(c.passages[1].raw_votes->parent == 3);
}

TEST_CASE("load_dataset reports the missing field and line") {
  TempFile f("missing.jsonl",
             R"({"id":"p1","context":"q1","text":"ok","score":1}
{"id":"p2","context":"q1","text":"no score"}
)");
  try {
    load_dataset(f.path, CorpusFormat::jsonl);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2:") != std::string::npos);
    CHECK(msg.find("score") != std::string::npos);
  }
}

TEST_CASE("duplicate ids are rejected with the offending id") {
  TempFile f("dup.jsonl",
             R"({"id":"p1","context":"a","text":"x y","score":1}
{"id":"p1","context":"b","text":"z w","score":2}
)");
  try {
    load_dataset(f.path, CorpusFormat::jsonl);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("duplicate id \"p1\"") !=
          std::string::npos);
  }
}

TEST_CASE("JSONL save/load round-trips") {
  Corpus c;
  c.passages.push_back(test_support::make_passage("a", "ctx", "hello there", 1.5));
  c.passages.back().timestamp = 1234;
  c.passages.push_back(
      test_support::make_passage("b", "ctx", "quoted \"text\", with commas", -2.0));
  c.passages.back().raw_votes = Votes{7, 0};
  TempFile f("roundtrip.jsonl");
  save_dataset(c, f.path, CorpusFormat::jsonl);
  CHECK(load_dataset(f.path, CorpusFormat::jsonl) == c);
}

TEST_CASE("CSV save/load round-trips including quoting") {
  Corpus c;
  c.passages.push_back(
      test_support::make_passage("a", "ctx,1", "text with, commas", 0.125));
  c.passages.push_back(
      test_support::make_passage("b", "ctx\"2", "says \"hi\" twice", 3.0));
  c.passages.back().timestamp = -5;
  c.passages.back().raw_votes = Votes{1, 2};
  TempFile f("roundtrip.csv");
  save_dataset(c, f.path, CorpusFormat::csv);
  CHECK(load_dataset(f.path, CorpusFormat::csv) == c);
}

TEST_CASE("CSV requires the header columns") {
  TempFile f("nohdr.csv", "id,text,score\np1,hello,1\n");
  CHECK_THROWS_WITH_AS(load_dataset(f.path, CorpusFormat::csv),
                       doctest::Contains("context"), std::runtime_error);
}

TEST_CASE("normalize_and_bin computes item/(parent+1) and histogram bins") {
  Corpus c;
  for (int i = 0; i <= 10; ++i) {
    Passage p = test_support::make_passage("p" + std::to_string(i), "ctx",
                                           "text body", 0.0);
    p.raw_votes = Votes{i, 9};  // scores 0.0, 0.1, ..., 1.0
    c.passages.push_back(p);
  }
  const Corpus out = normalize_and_bin(c, 5);
  CHECK(out.passages[5].score == 0.5);  // 5 / (9 + 1)
  CHECK(out.passages[10].score == 1.0);
  // 0.95-style top-of-range values land in the last bin.
  CHECK(out.passages[10].label == 5);
  CHECK(out.passages[0].label == 1);
  // equal-width bins over the observed [0, 1] range
  CHECK(out.passages[1].label == 1);   // 0.1
  CHECK(out.passages[2].label == 2);   // 0.2
  CHECK(out.passages[9].label == 5);   // 0.9

  SUBCASE("zero parent votes fall back to +1") {
    Corpus z;
    Passage p = test_support::make_passage("z", "ctx", "zero parent", 0.0);
    p.raw_votes = Votes{3, 0};
    z.passages.push_back(p);
    Passage q = test_support::make_passage("q", "ctx", "other", 0.0);
    q.raw_votes = Votes{10, 19};
    z.passages.push_back(q);
    const Corpus zz = normalize_and_bin(z, 2);
    CHECK(zz.passages[0].score == 3.0);
    CHECK(zz.passages[1].score == 0.5);  // 10 / (19 + 1)
  }

  SUBCASE("idempotent while raw votes are retained") {
    const Corpus again = normalize_and_bin(out, 5);
    CHECK(again == out);
  }

  SUBCASE("missing votes are an error") {
    Corpus bad = c;
    bad.passages[3].raw_votes.reset();
    CHECK_THROWS_WITH_AS(normalize_and_bin(bad, 5), doctest::Contains("p3"),
                         std::runtime_error);
  }
}

TEST_CASE("synthetic generation is deterministic and matches the spec") {
  SyntheticSpec spec;
  spec.num_contexts = 8;
  spec.passages_per_context_min = 3;
  spec.passages_per_context_max = 9;
  spec.noise_rate = 0.1;
  spec.seed = 2024;

  const Corpus a = generate_synthetic(spec);
  const Corpus b = generate_synthetic(spec);
  CHECK(a == b);

  std::set<std::string> ids;
  for (const Passage& p : a.passages) {
    CHECK(ids.insert(p.id).second);
    CHECK(!p.context_id.empty());
    const int cls = *p.label;
    CHECK(cls >= 1);
    CHECK(cls <= 5);
    CHECK(p.score == static_cast<double>(cls));
    CHECK(p.timestamp.has_value());
  }

  SUBCASE("class frequencies follow the requested distribution") {
    SyntheticSpec big = spec;
    big.num_contexts = 500;
    big.passages_per_context_min = big.passages_per_context_max = 20;
    big.class_probabilities = {0.02, 0.09, 0.61, 0.19, 0.09};
    const Corpus corpus = generate_synthetic(big);
    REQUIRE(corpus.size() == 10000);
    std::array<std::size_t, 5> counts{};
    for (const Passage& p : corpus.passages) ++counts[*p.label - 1];
    for (int cls = 0; cls < 5; ++cls) {
      const double freq =
          static_cast<double>(counts[cls]) / static_cast<double>(corpus.size());
      CHECK(std::abs(freq - big.class_probabilities[cls]) < 0.02);
    }
  }

  SUBCASE("class 5 with no noise contains no negative-lexicon tokens") {
    SyntheticSpec pure = spec;
    pure.noise_rate = 0.0;
    const Corpus corpus = generate_synthetic(pure);
    for (const Passage& p : corpus.passages) {
      if (*p.label != 5) continue;
      CHECK(p.text.find("neg") == std::string::npos);
    }
  }

  SUBCASE("invalid specs are rejected") {
    SyntheticSpec bad = spec;
    bad.class_probabilities = {0.5, 0.5, 0.5, 0.0, 0.0};
    CHECK_THROWS_AS(generate_synthetic(bad), std::invalid_argument);
    bad = spec;
    bad.noise_rate = 1.5;
    CHECK_THROWS_AS(generate_synthetic(bad), std::invalid_argument);
  }
}

TEST_CASE("balanced generation hits exact quotas") {
  SyntheticSpec spec;
  spec.num_contexts = 7;
  spec.seed = 5;
  const Corpus c = generate_balanced_synthetic(spec, 20);
  REQUIRE(c.size() == 100);
  std::array<std::size_t, 5> counts{};
  for (const Passage& p : c.passages) ++counts[*p.label - 1];
  for (std::size_t n : counts) CHECK(n == 20);
}

TEST_CASE("splits partition the corpus") {
  const Corpus c = test_support::tiny_planted_corpus(10, 10, 77);
  REQUIRE(c.size() == 100);

  const auto check_partition = [&](const Corpus& train, const Corpus& test) {
    std::set<std::string> train_ids, test_ids;
    for (const Passage& p : train.passages) train_ids.insert(p.id);
    for (const Passage& p : test.passages) test_ids.insert(p.id);
    CHECK(train_ids.size() + test_ids.size() == c.size());
    for (const auto& id : test_ids) CHECK(!train_ids.count(id));
  };

  SUBCASE("random split sizes") {
    const auto [train, test] = split_corpus(c, SplitStrategy::random, 0.2, 3);
    CHECK(train.size() == 80);
    CHECK(test.size() == 20);
    check_partition(train, test);
  }

  SUBCASE("by_context keeps whole contexts together") {
    const auto [train, test] =
        split_corpus(c, SplitStrategy::by_context, 0.2, 3);
    check_partition(train, test);
    std::set<std::string> train_ctx, test_ctx;
    for (const Passage& p : train.passages) train_ctx.insert(p.context_id);
    for (const Passage& p : test.passages) test_ctx.insert(p.context_id);
    CHECK(test_ctx.size() == 2);  // round(0.2 * 10)
    for (const auto& ctx : test_ctx) CHECK(!train_ctx.count(ctx));
  }

  SUBCASE("temporal puts each context's latest passages in test") {
    const auto [train, test] = split_corpus(c, SplitStrategy::temporal, 0.3, 3);
    check_partition(train, test);
    std::map<std::string, long long> max_train;
    for (const Passage& p : train.passages) {
      auto [it, fresh] = max_train.emplace(p.context_id, *p.timestamp);
      if (!fresh) it->second = std::max(it->second, *p.timestamp);
    }
    for (const Passage& p : test.passages)
      if (max_train.count(p.context_id))
        CHECK(*p.timestamp >= max_train[p.context_id]);
  }

  SUBCASE("temporal requires timestamps") {
    Corpus no_ts = c;
    no_ts.passages[4].timestamp.reset();
    CHECK_THROWS_AS(split_corpus(no_ts, SplitStrategy::temporal, 0.3, 3),
                    std::runtime_error);
  }

  SUBCASE("fraction bounds") {
    CHECK_THROWS_AS(split_corpus(c, SplitStrategy::random, 0.0, 3),
                    std::invalid_argument);
    CHECK_THROWS_AS(split_corpus(c, SplitStrategy::random, 1.0, 3),
                    std::invalid_argument);
  }
}

TEST_CASE("passage_class falls back to whole-number scores") {
  Passage p = test_support::make_passage("x", "c", "t u", 4.0);
  CHECK(passage_class(p) == 4);
  p.label = 2;
  CHECK(passage_class(p) == 2);
  p.label.reset();
  p.score = 1.5;
  CHECK_THROWS_AS(passage_class(p), std::runtime_error);
}
