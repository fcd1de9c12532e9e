#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "gsvr/knn_index.hpp"

using namespace gsvr;

namespace {

std::vector<std::uint32_t> brute_force(const std::vector<double>& means, const Vec3& x, std::size_t k) {
  const std::size_t n = means.size() / 3;
  std::vector<std::pair<double, std::uint32_t>> d(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Vec3 m(means[3 * j], means[3 * j + 1], means[3 * j + 2]);
    d[j] = {(x - m).squaredNorm(), static_cast<std::uint32_t>(j)};
  }
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  std::vector<std::uint32_t> ids(k);
  for (std::size_t i = 0; i < k; ++i) ids[i] = d[i].second;
  return ids;
}

std::vector<double> random_means(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-10, 10);
  std::vector<double> m(3 * n);
  for (double& v : m) v = u(rng);
  return m;
}

}  // namespace

TEST(NeighborIndex, KEqualsNReturnsEverything) {
  std::mt19937_64 rng(31);
  const auto means = random_means(12, rng);
  const auto index = NeighborIndex::build(means, 12);
  const std::vector<Vec3> q = {Vec3(1, 2, 3), Vec3(-4, 0, 9)};
  const NeighborIds ids = index.query(q, 12);
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<std::uint32_t> row(ids.row(r).begin(), ids.row(r).end());
    std::sort(row.begin(), row.end());
    std::vector<std::uint32_t> all(12);
    std::iota(all.begin(), all.end(), 0u);
    EXPECT_EQ(row, all);
  }
}

TEST(NeighborIndex, MatchesBruteForce) {
  std::mt19937_64 rng(32);
  const auto means = random_means(1000, rng);
  const auto index = NeighborIndex::build(means, 1);
  std::uniform_real_distribution<double> u(-12, 12);
  std::vector<Vec3> q;
  for (int i = 0; i < 10000; ++i) q.emplace_back(u(rng), u(rng), u(rng));
  const NeighborIds ids = index.query(q, 16);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const std::vector<std::uint32_t> row(ids.row(i).begin(), ids.row(i).end());
    ASSERT_EQ(row, brute_force(means, q[i], 16)) << "query " << i;
  }
}

TEST(NeighborIndex, DuplicatesBreakTiesByLowerIndex) {
  std::vector<double> means;
  for (int j = 0; j < 6; ++j) {
    means.insert(means.end(), {1.0, 1.0, 1.0});
  }
  const auto index = NeighborIndex::build(means);
  std::vector<std::uint32_t> out(4);
  index.query_one(Vec3(0, 0, 0), 4, out);
  EXPECT_EQ(out, (std::vector<std::uint32_t>{0, 1, 2, 3}));
}

TEST(NeighborIndex, PointOnMeanComesFirstAndCollinearOrder) {
  const std::vector<double> means = {0, 0, 3, 0, 0, 1, 0, 0, 2};
  const auto index = NeighborIndex::build(means);
  std::vector<std::uint32_t> out(2);
  index.query_one(Vec3(0, 0, 2), 2, out);
  EXPECT_EQ(out[0], 2u);
  index.query_one(Vec3(0, 0, 0), 2, out);
  EXPECT_EQ(out, (std::vector<std::uint32_t>{1, 2}));
}

TEST(NeighborIndex, SnapshotDoesNotTrackLaterMoves) {
  std::vector<double> means = {0, 0, 0, 5, 0, 0};
  const auto index = NeighborIndex::build(means, 1, 7);
  EXPECT_EQ(index.epoch(), 7);
  means[3] = -0.1;  // primitive 1 moves next to the origin
  std::vector<std::uint32_t> out(1);
  index.query_one(Vec3(-0.1, 0, 0), 1, out);
  EXPECT_EQ(out[0], 0u);
}

TEST(NeighborIndex, InvalidK) {
  std::mt19937_64 rng(33);
  const auto means = random_means(5, rng);
  EXPECT_THROW(NeighborIndex::build(means, 6), InvalidParameter);
  const auto index = NeighborIndex::build(means);
  const std::vector<Vec3> q = {Vec3::Zero()};
  EXPECT_THROW(index.query(q, 6), InvalidParameter);
  EXPECT_THROW(index.query(q, 0), InvalidParameter);
}
