#include "apgl/dataio.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace apgl;

namespace {

InteractionLog log_of(std::initializer_list<std::tuple<const char*, const char*, int>> rows) {
  InteractionLog log;
  for (auto [u, i, t] : rows) log.records.push_back({u, i, t});
  return log;
}

}  // namespace

TEST_CASE("parse_log") {
  SUBCASE("single line") {
    const auto r = parse_log_text("u1\ti1\t100\n");
    REQUIRE(r.log.records.size() == 1);
    CHECK(r.log.records[0] == Interaction{"u1", "i1", 100});
    CHECK(r.malformed_lines == 0);
  }
  SUBCASE("empty input warns") {
    const auto r = parse_log_text("");
    CHECK(r.log.records.empty());
    CHECK_FALSE(r.warnings.empty());
  }
  SUBCASE("short lines") {
    CHECK_THROWS_AS(parse_log_text("u1\ti1\n", {'\t', true}), Error);
    const auto r = parse_log_text("u1\ti1\nu2\ti2\t5\n");
    CHECK(r.malformed_lines == 1);
    CHECK(r.log.records.size() == 1);
    CHECK_FALSE(r.warnings.empty());
  }
  SUBCASE("custom delimiter keeps file order") {
    const auto r = parse_log_text("b,x,2\na,y,1\n", {',', false});
    REQUIRE(r.log.records.size() == 2);
    CHECK(r.log.records[0].user == "b");
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(parse_log("/nonexistent/log.tsv"), Error); }
}

TEST_CASE("five_core_filter") {
  InteractionLog dense;
  for (int u = 0; u < 5; ++u) {
    for (int i = 0; i < 5; ++i) {
      dense.records.push_back({"u" + std::to_string(u), "i" + std::to_string(i), i});
    }
  }
  SUBCASE("already 5-core is unchanged") { CHECK(five_core_filter(dense).records == dense.records); }
  SUBCASE("cascade removes a user whose items are rare") {
    InteractionLog log = dense;
    for (int k = 0; k < 5; ++k) log.records.push_back({"A", "rare" + std::to_string(k), k});
    CHECK(five_core_filter(log).records == dense.records);
  }
  SUBCASE("two-step cascade") {
    // B has 5 interactions, one on an item that dies, so B drops to 4 and goes too.
    InteractionLog log = dense;
    for (int k = 0; k < 4; ++k) log.records.push_back({"B", "i" + std::to_string(k), 10 + k});
    log.records.push_back({"B", "lonely", 20});
    CHECK(five_core_filter(log).records == dense.records);
  }
  SUBCASE("min_count 1 keeps everything") {
    InteractionLog log = dense;
    log.records.push_back({"z", "q", 0});
    CHECK(five_core_filter(log, 1).records == log.records);
  }
  SUBCASE("empty result throws") { CHECK_THROWS_AS(five_core_filter(log_of({{"a", "b", 1}})), Error); }
  SUBCASE("result satisfies the invariant") {
    InteractionLog log = dense;
    for (int k = 0; k < 7; ++k) log.records.push_back({"w", "i" + std::to_string(k % 6), k});
    const auto out = five_core_filter(log);
    std::map<std::string, int> users, items;
    for (const auto& r : out.records) {
      ++users[r.user];
      ++items[r.item];
    }
    for (const auto& [k, v] : users) CHECK(v >= 5);
    for (const auto& [k, v] : items) CHECK(v >= 5);
  }
}

TEST_CASE("build_dataset") {
  SUBCASE("dense ids in first-appearance order") {
    const auto ds = build_dataset(log_of({{"x", "c", 1}, {"y", "a", 1}, {"x", "a", 2}, {"x", "b", 3},
                                          {"y", "b", 2}, {"y", "c", 3}}),
                                  50);
    CHECK(ds.num_users == 2);
    CHECK(ds.num_items == 3);
    CHECK(ds.item_raw_ids == std::vector<std::string>{"c", "a", "b"});
    CHECK(std::vector<ItemId>(ds.sequences.full(1).begin(), ds.sequences.full(1).end()) ==
          std::vector<ItemId>{1, 2, 3});
    CHECK(ds.mask_item() == 4);
  }
  SUBCASE("timestamp sort is stable") {
    const auto ds = build_dataset(log_of({{"u", "p", 5}, {"u", "q", 5}, {"u", "r", 1}}), 10);
    const auto s = ds.sequences.full(1);
    CHECK(std::vector<ItemId>(s.begin(), s.end()) == std::vector<ItemId>{3, 1, 2});
  }
  SUBCASE("long sequences keep the most recent N+2") {
    InteractionLog log;
    for (int t = 0; t < 60; ++t) log.records.push_back({"u", "i" + std::to_string(t), t});
    const auto ds = build_dataset(log, 50);
    const auto train = ds.sequences.train_view(1);
    REQUIRE(train.size() == 50);
    // Items are numbered by first appearance, so item t+1 was seen at time t.
    CHECK(train.front() == 9);   // 60 - 52 + 1
    CHECK(train.back() == 58);   // last of the first 58
    CHECK(ds.sequences.valid_target(1) == 59);
    CHECK(ds.sequences.test_target(1) == 60);
    CHECK(ds.sequences.test_input(1).back() == 59);
  }
  SUBCASE("serialization is deterministic and round-trips") {
    const auto log = log_of({{"a", "x", 1}, {"a", "y", 2}, {"a", "z", 3}, {"b", "z", 1}, {"b", "x", 2},
                             {"b", "y", 3}});
    const auto one = build_dataset(log, 5).to_container().serialize();
    const auto two = build_dataset(log, 5).to_container().serialize();
    CHECK(one == two);
    const auto back = Dataset::from_container(Container::deserialize(one));
    CHECK(back.user_raw_ids == std::vector<std::string>{"a", "b"});
    CHECK(back.sequences.sequences() == build_dataset(log, 5).sequences.sequences());
  }
}

TEST_CASE("sequence views") {
  SequenceStore store({{4, 5, 6, 7}}, 10);
  CHECK(store.train_view(1).size() == 2);
  CHECK(store.valid_target(1) == 6);
  CHECK(store.test_target(1) == 7);
  CHECK_THROWS_AS(SequenceStore({{1, 2}}, 10), Error);
  CHECK_THROWS_AS(store.full(2), Error);
  const std::vector<ItemId> short_seq{1, 2};
  CHECK(left_pad(short_seq, 4) == std::vector<ItemId>{0, 0, 1, 2});
  const std::vector<ItemId> long_seq{1, 2, 3, 4, 5};
  CHECK(left_pad(long_seq, 3) == std::vector<ItemId>{3, 4, 5});
}

TEST_CASE("sample_negative") {
  SUBCASE("forced draw") {
    Rng rng(1);
    const std::vector<ItemId> seen{1, 2, 1};
    for (int k = 0; k < 100; ++k) CHECK(sample_negative(rng, seen, 3) == 3);
  }
  SUBCASE("seeded") {
    const std::vector<ItemId> seen{5};
    Rng a(9), b(9);
    for (int k = 0; k < 20; ++k) CHECK(sample_negative(a, seen, 50) == sample_negative(b, seen, 50));
  }
  SUBCASE("precondition") {
    Rng rng(1);
    const std::vector<ItemId> seen{1, 2, 3};
    CHECK_THROWS_AS(sample_negative(rng, seen, 3), Error);
  }
  SUBCASE("uniform over the unseen items") {
    Rng rng(2024);
    std::vector<ItemId> seen;
    for (int i = 1; i <= 10; ++i) seen.push_back(i * 7);
    std::vector<long> counts(101, 0);
    const long draws = 1'000'000;
    for (long k = 0; k < draws; ++k) ++counts[static_cast<std::size_t>(sample_negative(rng, seen, 100))];
    const double p = 1.0 / 90.0;
    const double expected = draws * p;
    const double sigma = std::sqrt(draws * p * (1 - p));
    double chi2 = 0.0;
    int cells = 0;
    for (int i = 1; i <= 100; ++i) {
      if (i % 7 == 0 && i <= 70) {
        CHECK(counts[static_cast<std::size_t>(i)] == 0);
        continue;
      }
      const double c = static_cast<double>(counts[static_cast<std::size_t>(i)]);
      // 3 sigma per cell, Bonferroni-corrected over the 90 cells (two-sided 0.27% / 90).
      CHECK(std::abs(c - expected) < 4.0 * sigma);
      chi2 += (c - expected) * (c - expected) / expected;
      ++cells;
    }
    CHECK(cells == 90);
    // 89 degrees of freedom; the 0.999 quantile is about 135.
    CHECK(chi2 < 135.0);
  }
}
