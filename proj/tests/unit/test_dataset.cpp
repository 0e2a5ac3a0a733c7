#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "fairsan/dataset.hpp"
#include "fairsan/error.hpp"
#include "support/oracles.hpp"

using namespace fairsan;

namespace {

Dataset four_cells() {
  std::vector<Sample> samples = {{{0.0, 0.0}, 0, 0},
                                 {{1.0, 0.0}, 0, 1},
                                 {{0.0, 1.0}, 1, 0},
                                 {{1.0, 1.0}, 1, 1}};
  return Dataset::infer(std::move(samples), 2);
}

}  // namespace

TEST_CASE("dataset validation") {
  SECTION("dimension mismatch") {
    std::vector<Sample> samples = {{{1.0}, 0, 0}, {{1.0, 2.0}, 1, 0}};
    CHECK_THROWS_AS(Dataset::infer(std::move(samples), 1), DimensionError);
  }
  SECTION("non-finite features") {
    std::vector<Sample> samples = {
        {{std::numeric_limits<double>::quiet_NaN()}, 0, 0}};
    CHECK_THROWS(Dataset::infer(std::move(samples), 1));
  }
  SECTION("undeclared label") {
    CHECK_THROWS_AS(Dataset({{{1.0}, 2, 0}}, 1, {0, 1}, {0}), SchemaError);
  }
}

TEST_CASE("appended keeps declared sets") {
  const Dataset base = four_cells();
  const Dataset more = base.appended({{{0.5, 0.5}, 0, 1}});
  CHECK(more.size() == 5);
  CHECK(more.labels() == base.labels());
  CHECK(more.groups() == base.groups());
  // Appending a sample outside the declared sets is a schema violation.
  CHECK_THROWS_AS(base.appended({{{0.5, 0.5}, 3, 0}}), SchemaError);
  CHECK_THROWS_AS(base.appended({{{0.5, 0.5}, 0, 9}}), SchemaError);
}

TEST_CASE("subset keeps order and metadata") {
  const Dataset base = four_cells();
  const Dataset sub = base.subset({1, 3});
  REQUIRE(sub.size() == 2);
  CHECK(sub.sample(0).x == base.sample(1).x);
  CHECK(sub.sample(1).x == base.sample(3).x);
  CHECK(sub.labels() == base.labels());
}

TEST_CASE("subgroup partition") {
  SECTION("one sample per cell gives four views") {
    const auto views = subgroup_partition(four_cells());
    REQUIRE(views.size() == 4);
    for (const auto& v : views) CHECK(v.indices.size() == 1);
    // Ordered by (y, z) ascending.
    CHECK(views[0].y == 0);
    CHECK(views[0].z == 0);
    CHECK(views[3].y == 1);
    CHECK(views[3].z == 1);
  }
  SECTION("random data sizes sum to n and match a brute-force scan") {
    std::mt19937_64 rng(21);
    std::vector<Sample> samples;
    for (int i = 0; i < 100; ++i) {
      Sample s;
      s.x = {double(i)};
      s.y = int(rng() % 2);
      s.z = int(rng() % 3);
      samples.push_back(s);
    }
    const Dataset data = Dataset::infer(std::move(samples), 1);
    const auto views = subgroup_partition(data);
    std::size_t total = 0;
    for (const auto& v : views) {
      total += v.indices.size();
      for (std::size_t i : v.indices) {
        CHECK(data.sample(i).y == v.y);
        CHECK(data.sample(i).z == v.z);
      }
      // Brute-force recount of this cell.
      std::size_t count = 0;
      for (std::size_t i = 0; i < data.size(); ++i)
        if (data.sample(i).y == v.y && data.sample(i).z == v.z) ++count;
      CHECK(count == v.indices.size());
    }
    CHECK(total == 100);
  }
  SECTION("empty dataset is rejected at construction") {
    std::vector<Sample> none;
    CHECK_THROWS_AS(Dataset::infer(std::move(none), 2), EmptyInputError);
  }
}

TEST_CASE("class centers") {
  SECTION("midpoint") {
    std::vector<Sample> samples = {{{1.0, 1.0}, 1, 0}, {{3.0, 3.0}, 1, 0},
                                   {{9.0, 9.0}, 0, 0}};
    const Dataset data = Dataset::infer(std::move(samples), 2);
    const Vec c = class_center(data, 1);
    CHECK(c[0] == Catch::Approx(2.0));
    CHECK(c[1] == Catch::Approx(2.0));
  }
  SECTION("single sample identity") {
    std::vector<Sample> samples = {{{5.0, 0.0}, 0, 0}, {{1.0, 1.0}, 1, 0}};
    const Dataset data = Dataset::infer(std::move(samples), 2);
    CHECK(class_center(data, 0) == Vec{5.0, 0.0});
  }
  SECTION("matches naive streaming mean") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> normal;
    std::vector<Sample> samples;
    for (int i = 0; i < 50; ++i)
      samples.push_back({{normal(rng), normal(rng)}, i % 2, 0});
    const Dataset data = Dataset::infer(std::move(samples), 2);
    Vec sum(2, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.sample(i).y != 1) continue;
      for (std::size_t j = 0; j < 2; ++j) sum[j] += data.sample(i).x[j];
      ++count;
    }
    const Vec c = class_center(data, 1);
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(std::fabs(c[j] - sum[j] / count) < 1e-12);
  }
  SECTION("missing class") {
    std::vector<Sample> samples = {{{1.0}, 0, 0}};
    const Dataset data = Dataset::infer(std::move(samples), 1);
    CHECK_THROWS_AS(class_center(data, 1), MissingClassError);
  }
}

TEST_CASE("subgroup centers") {
  std::vector<Sample> samples = {{{0.0, 0.0}, 1, 0}, {{2.0, 2.0}, 1, 0},
                                 {{7.0, 7.0}, 0, 1}};
  const Dataset data = Dataset::infer(std::move(samples), 2);
  SECTION("midpoint of the (1,0) cell") {
    const Vec c = subgroup_center(data, 1, 0);
    CHECK(c[0] == Catch::Approx(1.0));
    CHECK(c[1] == Catch::Approx(1.0));
  }
  SECTION("singleton cell returns that sample") {
    CHECK(subgroup_center(data, 0, 1) == Vec{7.0, 7.0});
  }
  SECTION("empty cell throws") {
    CHECK_THROWS_AS(subgroup_center(data, 0, 0), MissingClassError);
  }
}
