#include "apgl/container.hpp"

#include <doctest.h>

#include <filesystem>

using namespace apgl;

TEST_CASE("byte layout of a single u32 entry") {
  Container c;
  c.put_u32("ab", {2}, {1, 258});
  const std::vector<std::uint8_t> expected = {
      'A', 'P', 'G', 'L', 1, 0, 0, 0,  // magic, version
      2, 0, 'a', 'b',                  // name
      2, 1,                            // dtype u32, rank 1
      2, 0, 0, 0, 0, 0, 0, 0,          // dims
      1, 0, 0, 0, 2, 1, 0, 0};         // data
  CHECK(c.serialize() == expected);
}

TEST_CASE("round trip keeps every dtype, order and value") {
  Container c;
  c.put_f64("m", {2, 3}, {1.5, -2.0, 0.0, 1e-300, 3.25, -0.125});
  c.put_f32("f", {1}, {0.5f});
  c.put_u64("big", {2}, {0, 1ull << 40});
  c.put_count("n", 7);
  const Container back = Container::deserialize(c.serialize());
  CHECK(back.names() == c.names());
  CHECK(back.f64("m") == c.f64("m"));
  CHECK(back.u64("big")[1] == (1ull << 40));
  CHECK(back.count("n") == 7);
  CHECK(back.at("f").dtype() == DType::F32);
  const Matrix m = back.matrix("m");
  CHECK(m.rows() == 2);
  CHECK(m(1, 0) == 1e-300);
  CHECK(back.serialize() == c.serialize());
}

TEST_CASE("matrix helpers are row-major") {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  Container c;
  c.put_matrix("x", m);
  CHECK(c.f64("x") == std::vector<double>{1, 2, 3, 4});
  CHECK(c.matrix("x") == m);
}

TEST_CASE("malformed containers are rejected") {
  Container c;
  c.put_scalar("s", 1.0);
  auto bytes = c.serialize();
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Container::deserialize(bad), Error);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(Container::deserialize(truncated), Error);
  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(Container::deserialize(version), Error);
  CHECK_THROWS_AS(c.f64("missing"), Error);
  CHECK_THROWS_AS(c.put_f64("bad", {3}, {1.0}), Error);
}

TEST_CASE("file save and load") {
  const auto path = std::filesystem::temp_directory_path() / "apgl_container_test.bin";
  Container c;
  c.put_u32("ids", {3}, {4, 5, 6});
  c.save(path);
  CHECK(Container::load(path).u32("ids") == std::vector<std::uint32_t>{4, 5, 6});
  std::filesystem::remove(path);
  CHECK_THROWS_AS(Container::load(path), Error);
}
