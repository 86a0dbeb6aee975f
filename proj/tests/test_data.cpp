#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "kvmn/error.hpp"
#include "kvmn/data.hpp"
#include "support.hpp"

using namespace kvmn;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "kvmn_test_data";
  fs::create_directories(dir);
  return dir / name;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

}  // namespace

TEST_CASE("tokenize examples") {
  using V = std::vector<std::string>;
  CHECK(tokenize("A man is riding.") == V{"a", "man", "is", "riding", "."});
  CHECK(tokenize("").empty());
  CHECK(tokenize("don't") == V{"don", "'", "t"});
  CHECK(tokenize("  Hello,   WORLD!?  ") == V{"hello", ",", "world", "!?"});
  CHECK(tokenize("snake_case 42x") == V{"snake_case", "42x"});
}

TEST_CASE("tokenize is idempotent over its own output") {
  const char* texts[] = {"A man is riding.", "don't stop--now!", "  x  ", "Mixed CASE, with (punct)...", ""};
  for (const char* t : texts) {
    const auto once = tokenize(t);
    CHECK(tokenize(join(once)) == once);
  }
}

TEST_CASE("vocabulary ordering") {
  SUBCASE("empty corpus has only reserved ids") {
    const auto v = Vocabulary::build({});
    CHECK(v.size() == 4);
    CHECK(v.token(kPad) == "<pad>");
    CHECK(v.token(kBos) == "<bos>");
    CHECK(v.token(kEos) == "<eos>");
    CHECK(v.token(kUnk) == "<unk>");
  }
  SUBCASE("frequency first") {
    std::vector<std::vector<std::string>> lists{{"b", "a", "a"}};
    const auto v = Vocabulary::build(lists);
    CHECK(v.id("a") == 4);
    CHECK(v.id("b") == 5);
  }
  SUBCASE("ties are lexicographic") {
    std::vector<std::vector<std::string>> lists{{"zeta", "alpha", "mid"}};
    const auto v = Vocabulary::build(lists);
    CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", "alpha", "mid", "zeta"});
  }
  SUBCASE("min count") {
    std::vector<std::vector<std::string>> lists{{"a", "a", "b"}};
    CHECK(Vocabulary::build(lists, 2).size() == 5);
  }
  SUBCASE("stable across runs") {
    std::vector<std::vector<std::string>> lists{{"x", "y", "y", "z"}, {"z", "q"}};
    CHECK(Vocabulary::build(lists) == Vocabulary::build(lists));
  }
}

TEST_CASE("vocabulary encode and decode") {
  std::vector<std::vector<std::string>> lists{{"a", "man", "rides"}};
  const auto v = Vocabulary::build(lists);
  const std::vector<std::string> words{"a", "dog", "rides"};
  const auto ids = v.encode(words);
  CHECK(ids.front() == kBos);
  CHECK(ids.back() == kEos);
  CHECK(ids[2] == kUnk);
  CHECK(v.decode(ids) == std::vector<std::string>{"a", "<unk>", "rides"});
  const std::vector<TokenId> after_eos{kBos, 4, kEos, 5};
  CHECK(v.decode(after_eos).size() == 1);
  CHECK_THROWS_AS(v.token(99), ContractError);
  CHECK(Vocabulary::from_tokens(v.tokens()) == v);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"a", "b"}), DataError);
}

TEST_CASE("record parsing") {
  const auto r = parse_record(R"({"id":"v1","frames":[[1,2],[3,4]],"captions":["A cat."]})", 1);
  CHECK(r.id == "v1");
  CHECK(r.frames.size() == 2);
  CHECK_FALSE(r.regions.has_value());

  const auto withr = parse_record(
      R"({"id":"v2","frames":[[1],[2]],"regions":[[{"f":[1,1],"s":0.5}],[{"f":[2,2],"s":1},{"f":[0,0],"s":0}]],"captions":["x"]})", 2);
  REQUIRE(withr.regions.has_value());
  CHECK((*withr.regions)[1].size() == 2);

  const char* bad[] = {
      "not json",
      R"([1,2])",
      R"({"frames":[[1]],"captions":["x"]})",
      R"({"id":"a","frames":[],"captions":["x"]})",
      R"({"id":"a","frames":[[1,2],[3]],"captions":["x"]})",
      R"({"id":"a","frames":[[1,"x"]],"captions":["x"]})",
      R"({"id":"a","frames":[[1]],"captions":[]})",
      R"({"id":"a","frames":[[1]],"captions":["x"],"extra":1})",
      R"({"id":"a","frames":[[1]],"regions":[],"captions":["x"]})",
      R"({"id":"a","frames":[[1]],"regions":[[{"f":[1],"s":-1}]],"captions":["x"]})",
      R"({"id":"a","frames":[[1]],"regions":[[{"f":[1],"s":1},{"f":[1,2],"s":1}]],"captions":["x"]})",
  };
  for (const char* line : bad) {
    CAPTURE(line);
    try {
      parse_record(line, 7);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).rfind("line 7:", 0) == 0);
    }
  }
}

TEST_CASE("dataset files") {
  SUBCASE("empty file is an empty stream") {
    const auto p = temp_file("empty.jsonl");
    std::ofstream(p).close();
    CHECK(read_dataset(p).empty());
  }
  SUBCASE("one well-formed line gives one episode") {
    const auto p = temp_file("one.jsonl");
    std::ofstream(p) << R"({"id":"v1","frames":[[1,2],[3,4]],"captions":["A cat sat.","a dog"]})" << "\n\n";
    const auto records = read_dataset(p);
    REQUIRE(records.size() == 1);
    const auto vocab = build_vocab(records);
    const auto eps = load_dataset(p, vocab);
    REQUIRE(eps.size() == 1);
    CHECK(eps[0].frames.dims() == Shape{2, 2});
    CHECK(eps[0].values == eps[0].frames);
    CHECK(eps[0].captions.size() == 2);
    CHECK(eps[0].captions[0].size() == 6);
  }
  SUBCASE("errors carry the line number") {
    const auto p = temp_file("bad.jsonl");
    std::ofstream(p) << R"({"id":"v1","frames":[[1]],"captions":["a"]})" << "\n" << "{oops\n";
    try {
      read_dataset(p);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).rfind("line 2:", 0) == 0);
    }
    CHECK_THROWS_AS(read_dataset(temp_file("missing-file.jsonl")), IoError);
  }
  SUBCASE("region values are pooled") {
    DatasetRecord r = parse_record(
        R"({"id":"v","frames":[[0]],"regions":[[{"f":[2,0],"s":1},{"f":[0,4],"s":3}]],"captions":["x"]})", 1);
    const auto e = to_episode(r, Vocabulary::build({}));
    CHECK(e.values.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(e.values.at(0, 1) == doctest::Approx(3.0).epsilon(1e-15));
  }
}

TEST_CASE("episode write then load is the identity") {
  const SyntheticSpec spec{5, 10, 6, 4};
  const auto vocab = Vocabulary::synthetic(10);
  std::vector<Episode> eps;
  std::vector<DatasetRecord> records;
  for (std::uint64_t s = 0; s < 6; ++s) {
    eps.push_back(gen_episode(s % 2 ? SyntheticTask::Recall : SyntheticTask::Copy, spec, s));
    records.push_back(to_record(eps.back(), vocab));
  }
  const auto p = temp_file("roundtrip.jsonl");
  write_dataset(p, records);
  CHECK(read_dataset(p) == records);
  const auto loaded = load_dataset(p, vocab);
  REQUIRE(loaded.size() == eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    CHECK(loaded[i].id == eps[i].id);
    CHECK(loaded[i].frames == eps[i].frames);
    CHECK(loaded[i].values == eps[i].values);
    CHECK(loaded[i].captions == eps[i].captions);
  }
}

TEST_CASE("synthetic generators") {
  const SyntheticSpec spec{8, 12, 16, 16};
  CHECK(gen_copy_episode(spec, 3).frames == gen_copy_episode(spec, 3).frames);
  CHECK(gen_recall_episode(spec, 3).captions == gen_recall_episode(spec, 3).captions);
  CHECK_FALSE(gen_copy_episode(spec, 3).frames == gen_copy_episode(spec, 4).frames);

  SyntheticSpec one = spec;
  one.slots = 1;
  const auto e1 = gen_copy_episode(one, 9);
  CHECK(e1.captions[0].size() == 3);
  CHECK(e1.captions[0][1] >= kReservedTokens);
  // With one slot the only permutation is the identity.
  const auto r1 = gen_recall_episode(one, 9);
  CHECK(r1.frames == e1.frames);
  CHECK(r1.captions == e1.captions);

  CHECK_THROWS_AS(gen_copy_episode(SyntheticSpec{0, 12, 16, 16}, 1), UsageError);
  CHECK_THROWS_AS(gen_copy_episode(SyntheticSpec{4, 4, 16, 16}, 1), UsageError);
  CHECK(parse_task("recall") == SyntheticTask::Recall);
  CHECK_THROWS_AS(parse_task("sort"), UsageError);
}

TEST_CASE("generators cover the vocabulary with fixed caption length") {
  const SyntheticSpec spec{8, 12, 16, 16};
  for (auto task : {SyntheticTask::Copy, SyntheticTask::Recall}) {
    std::set<TokenId> seen;
    bool lengths_ok = true;
    for (std::uint64_t s = 0; s < 1000; ++s) {
      const auto e = gen_episode(task, spec, s);
      const auto& c = e.captions[0];
      lengths_ok = lengths_ok && c.size() == spec.slots + 2 && c.front() == kBos && c.back() == kEos;
      for (std::size_t j = 1; j + 1 < c.size(); ++j) seen.insert(c[j]);
    }
    CHECK(lengths_ok);
    CHECK(seen.size() == spec.vocab_size - kReservedTokens);
    CHECK(*seen.begin() == kReservedTokens);
  }
}

TEST_CASE("one-hot attention at step t with a nearest-code readout reproduces the copy caption") {
  const SyntheticSpec spec{8, 12, 16, 16};
  const SyntheticCodebook book(spec);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto e = gen_copy_episode(spec, s);
    for (std::size_t t = 1; t <= spec.slots; ++t) {
      const auto read = e.values.row(t - 1);
      TokenId best = kReservedTokens;
      for (TokenId v = kReservedTokens; v < spec.vocab_size; ++v) {
        if (sq_dist(read, book.value_code(v)) < sq_dist(read, book.value_code(best))) best = v;
      }
      CHECK(best == e.captions[0][t]);
    }
  }
}

TEST_CASE("recall permutation is recoverable from the keys") {
  const SyntheticSpec spec{8, 12, 16, 16};
  const SyntheticCodebook book(spec);
  const std::size_t tw = book.token_width();
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto e = gen_recall_episode(spec, s);
    std::vector<TokenId> caption(spec.slots + 2, kPad);
    caption.front() = kBos;
    caption.back() = kEos;
    for (std::size_t i = 0; i < spec.slots; ++i) {
      const auto key = e.frames.row(i);
      const auto tok_part = key.subspan(0, tw);
      const auto pos_part = key.subspan(tw);
      std::size_t rank = 1;
      for (std::size_t r = 1; r <= spec.slots; ++r) {
        if (sq_dist(pos_part, book.position_code(r)) < sq_dist(pos_part, book.position_code(rank))) rank = r;
      }
      TokenId tok = kReservedTokens;
      for (TokenId v = kReservedTokens; v < spec.vocab_size; ++v) {
        if (sq_dist(tok_part, book.token_code(v)) < sq_dist(tok_part, book.token_code(tok))) tok = v;
      }
      caption[rank] = tok;
    }
    CHECK(caption == e.captions[0]);
  }
}
