#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dsdn/corpus.hpp"
#include "dsdn/errors.hpp"
#include "dsdn/tokenizer.hpp"
#include "test_util.hpp"

using namespace dsdn;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "dsdn-tests";
  fs::create_directories(dir);
  return dir / name;
}

Dialogue make_dialogue(const std::string& id,
                       const std::vector<State>& states) {
  Dialogue d;
  d.id = id;
  for (const auto& st : states) {
    Turn t;
    t.user = "user text";
    t.system = "system text";
    t.state = st;
    d.turns.push_back(t);
  }
  return d;
}

}  // namespace

TEST_CASE("tokenizer lowercases and splits on whitespace") {
  auto toks = Vocabulary::split("  Hello\tWORLD  again ");
  REQUIRE(toks.size() == 3);
  CHECK(toks[0] == "hello");
  CHECK(toks[1] == "world");
  CHECK(toks[2] == "again");
}

TEST_CASE("vocabulary reserves special ids and round-trips text") {
  Vocabulary v;
  CHECK(v.id(Vocabulary::kCls) == v.cls_id());
  CHECK(v.id(Vocabulary::kSep) == v.sep_id());
  CHECK(v.id(Vocabulary::kDash) == v.dash_id());
  v.add_text("alpha beta");
  auto ids = v.encode("Alpha beta gamma");
  REQUIRE(ids.size() == 3);
  CHECK(ids[2] == v.unk_id());  // unseen token
  CHECK(v.decode({ids[0], ids[1]}) == "alpha beta");
  CHECK(Vocabulary::slot_marker_teacher(0) != Vocabulary::slot_marker_student(0));
}

TEST_CASE("sop labels: first mention counts as an update") {
  Schema schema;
  schema.slots.push_back({"train-day", {"none", "friday", "monday"}});
  Dialogue d = make_dialogue("d1", {{{"train-day", "none"}},
                                    {{"train-day", "friday"}},
                                    {{"train-day", "friday"}}});
  SopLabelMatrix labels = derive_sop_labels(d, schema);
  CHECK(labels.at(0, 0) == 0);
  CHECK(labels.at(0, 1) == 1);
  CHECK(labels.at(0, 2) == 0);
}

TEST_CASE("sop labels: all-none dialogue gives the zero matrix") {
  Schema schema = testutil::toy_schema(3, 2);
  std::vector<State> states(4);
  for (auto& st : states)
    for (const auto& s : schema.slots) st[s.name] = "none";
  SopLabelMatrix labels = derive_sop_labels(make_dialogue("d", states), schema);
  for (int j = 0; j < 3; ++j)
    for (int t = 0; t < 4; ++t) CHECK(labels.at(j, t) == 0);
}

TEST_CASE("sop labels match a per-cell scalar comparison oracle") {
  Schema schema = testutil::toy_schema(6, 3);
  std::mt19937_64 rng(101);
  std::vector<State> states;
  State cur;
  for (const auto& s : schema.slots) cur[s.name] = "none";
  for (int t = 0; t < 5; ++t) {
    // mutate one or two random slots
    for (int e = 0; e < 1 + static_cast<int>(rng() % 2); ++e) {
      const auto& slot = schema.slots[rng() % schema.slots.size()];
      cur[slot.name] = slot.values[rng() % slot.values.size()];
    }
    states.push_back(cur);
  }
  Dialogue d = make_dialogue("d", states);
  SopLabelMatrix labels = derive_sop_labels(d, schema);
  for (int j = 0; j < schema.size(); ++j) {
    const std::string& name = schema.slot(j).name;
    for (int t = 0; t < 5; ++t) {
      const std::string prev =
          t == 0 ? std::string("none") : states[static_cast<std::size_t>(t - 1)].at(name);
      const std::uint8_t expect =
          states[static_cast<std::size_t>(t)].at(name) != prev ? 1 : 0;
      CHECK(labels.at(j, t) == expect);
    }
  }
}

TEST_CASE("sop labels reject out-of-ontology values naming the slot") {
  Schema schema = testutil::toy_schema(1, 1);
  Dialogue d = make_dialogue("d", {{{"dom-slot0", "bogus"}}});
  CHECK_THROWS_WITH_AS(derive_sop_labels(d, schema),
                       doctest::Contains("dom-slot0"), SchemaError);
}

TEST_CASE("synthetic corpus is deterministic per seed") {
  Schema schema = testutil::toy_schema(4, 3);
  SyntheticOptions opts;
  opts.n_dialogues = 20;
  opts.seed = 42;
  auto a = generate_synthetic_corpus(schema, opts);
  auto b = generate_synthetic_corpus(schema, opts);
  REQUIRE(a.size() == 20);
  CHECK(a == b);
  opts.seed = 43;
  CHECK(generate_synthetic_corpus(schema, opts) != a);
}

TEST_CASE("synthetic corpus respects shape and state invariants") {
  Schema schema = testutil::toy_schema(4, 3);
  SyntheticOptions opts;
  opts.n_dialogues = 50;
  opts.seed = 5;
  for (const auto& d : generate_synthetic_corpus(schema, opts)) {
    REQUIRE(!d.turns.empty());
    CHECK(d.turns.size() <= 8);
    validate_dialogue(d, schema);
    // values persist until overwritten: cumulative states never lose a value
    for (std::size_t t = 1; t < d.turns.size(); ++t)
      for (const auto& [k, v] : d.turns[t - 1].state)
        if (d.turns[t].state.at(k) != v)
          CHECK(d.turns[t].state.at(k) != "none");
  }
}

TEST_CASE("co-update pairs fire together at a rate >= 0.9") {
  Schema schema = testutil::toy_schema(5, 3);
  SyntheticOptions opts;
  opts.n_dialogues = 200;
  opts.seed = 9;
  opts.coupdate_pairs = {{"dom-slot1", "dom-slot2"}};
  auto corpus = generate_synthetic_corpus(schema, opts);
  CHECK(coupdate_rate(corpus, schema, "dom-slot1", "dom-slot2") >= 0.9);
}

TEST_CASE("degenerate one-slot schema yields singleton states") {
  Schema schema = testutil::toy_schema(1, 2);
  SyntheticOptions opts;
  opts.n_dialogues = 1;
  opts.seed = 1;
  auto corpus = generate_synthetic_corpus(schema, opts);
  REQUIRE(corpus.size() == 1);
  for (const auto& t : corpus[0].turns) CHECK(t.state.size() == 1);
}

TEST_CASE("synthetic corpus rejects non-positive counts and bad pairs") {
  Schema schema = testutil::toy_schema(2, 2);
  SyntheticOptions opts;
  opts.n_dialogues = 0;
  opts.seed = 1;
  CHECK_THROWS_AS(generate_synthetic_corpus(schema, opts), ArgumentError);
  opts.n_dialogues = 1;
  opts.coupdate_pairs = {{"dom-slot0", "nope"}};
  CHECK_THROWS_AS(generate_synthetic_corpus(schema, opts), ArgumentError);
}

TEST_CASE("dialogue JSONL round-trips losslessly") {
  Schema schema = testutil::toy_schema(3, 2);
  SyntheticOptions opts;
  opts.n_dialogues = 10;
  opts.seed = 77;
  auto corpus = generate_synthetic_corpus(schema, opts);
  auto path = temp_file("roundtrip.jsonl");
  save_dialogues_jsonl(path.string(), corpus);
  auto loaded = load_dialogues_jsonl(path.string(), schema);
  CHECK(loaded == corpus);
}

TEST_CASE("empty dialogue file loads as an empty corpus") {
  auto path = temp_file("empty.jsonl");
  std::ofstream(path.string()) << "";
  Schema schema = testutil::toy_schema(1, 1);
  CHECK(load_dialogues_jsonl(path.string(), schema).empty());
}

TEST_CASE("figure-style fixture loads with cumulative states") {
  Schema schema;
  schema.slots.push_back({"train-day", {"none", "friday"}});
  schema.slots.push_back({"train-departure", {"none", "cambridge"}});
  auto path = temp_file("figure.jsonl");
  std::ofstream(path.string())
      << R"({"id":"fig","turns":[)"
      << R"({"user":"i need a train on friday","system":"where from","state":{"train-day":"friday"}},)"
      << R"({"user":"from cambridge","system":"ok","state":{"train-day":"friday","train-departure":"cambridge"}}]})"
      << "\n";
  auto dialogues = load_dialogues_jsonl(path.string(), schema);
  REQUIRE(dialogues.size() == 1);
  REQUIRE(dialogues[0].turns.size() == 2);
  CHECK(dialogues[0].turns[0].state.at("train-day") == "friday");
  CHECK(dialogues[0].turns[0].state.at("train-departure") == "none");
  CHECK(dialogues[0].turns[1].state.at("train-departure") == "cambridge");
}

TEST_CASE("malformed JSON reports line and offset; missing fields report names") {
  Schema schema = testutil::toy_schema(1, 1);
  auto bad = temp_file("bad.jsonl");
  std::ofstream(bad.string()) << "{\"id\": \"x\", \n{nope\n";
  CHECK_THROWS_WITH_AS(load_dialogues_jsonl(bad.string(), schema),
                       doctest::Contains("line"), ParseError);

  auto missing = temp_file("missing.jsonl");
  std::ofstream(missing.string())
      << R"({"id":"x","turns":[{"user":"a","system":"b"}]})" << "\n";
  CHECK_THROWS_WITH_AS(load_dialogues_jsonl(missing.string(), schema),
                       doctest::Contains("state"), SchemaError);
}

TEST_CASE("unknown-value policies: reject, map-to-none, add-to-ontology") {
  auto path = temp_file("unknown.jsonl");
  std::ofstream(path.string())
      << R"({"id":"x","turns":[{"user":"a","system":"b","state":{"dom-slot0":"surprise"}}]})"
      << "\n";
  {
    Schema schema = testutil::toy_schema(1, 1);
    CHECK_THROWS_AS(load_dialogues_jsonl(path.string(), schema), SchemaError);
  }
  {
    Schema schema = testutil::toy_schema(1, 1);
    auto d = load_dialogues_jsonl(path.string(), schema,
                                  UnknownValuePolicy::kMapToNone);
    CHECK(d[0].turns[0].state.at("dom-slot0") == "none");
  }
  {
    Schema schema = testutil::toy_schema(1, 1);
    auto d = load_dialogues_jsonl(path.string(), schema,
                                  UnknownValuePolicy::kAddToOntology);
    CHECK(d[0].turns[0].state.at("dom-slot0") == "surprise");
    CHECK(schema.has_value(0, "surprise"));
  }
}

TEST_CASE("schema JSON round-trips and validation catches defects") {
  Schema schema = testutil::toy_schema(3, 2);
  auto path = temp_file("schema.json");
  save_schema_json(path.string(), schema);
  Schema loaded = load_schema_json(path.string());
  CHECK(loaded.hash() == schema.hash());
  CHECK(loaded.size() == 3);

  Schema dup = schema;
  dup.slots.push_back(dup.slots[0]);
  CHECK_THROWS_AS(dup.validate(), SchemaError);
  Schema no_none;
  no_none.slots.push_back({"a-b", {"x"}});
  CHECK_THROWS_AS(no_none.validate(), SchemaError);
}

TEST_CASE("schema hash is order- and content-sensitive") {
  Schema a = testutil::toy_schema(2, 2);
  Schema b = a;
  std::swap(b.slots[0], b.slots[1]);
  CHECK(a.hash() != b.hash());
  Schema c = a;
  c.slots[0].values.push_back("extra");
  CHECK(a.hash() != c.hash());
}
