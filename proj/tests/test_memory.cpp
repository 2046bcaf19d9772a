#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "detkit/memory.hpp"
#include "detkit/rng.hpp"

namespace detkit {
namespace {

Matrix rows_of(std::vector<std::vector<double>> rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

TEST(InitMemory, DeterministicAndShaped) {
  const CategoryMemory a = init_memory(9, 1024, 7, 0.03125);
  const CategoryMemory b = init_memory(9, 1024, 7, 0.03125);
  EXPECT_EQ(a.rows.rows, 10u);
  EXPECT_EQ(a.rows.cols, 1024u);
  EXPECT_EQ(a.rows.data, b.rows.data);  // bit-identical
  EXPECT_NE(a.rows.data, init_memory(9, 1024, 8, 0.03125).rows.data);
}

TEST(InitMemory, RejectsZeroScale) {
  EXPECT_THROW(init_memory(3, 8, 0, 0.0), std::invalid_argument);
}

TEST(InitMemory, NoZeroRows) {
  const CategoryMemory mem = init_memory(5, 16, 123);
  for (std::size_t r = 0; r < mem.rows.rows; ++r) {
    double norm = 0.0;
    for (double v : mem.rows.row(r)) norm += v * v;
    EXPECT_GT(norm, 0.0);
  }
}

TEST(CosineWeights, Examples) {
  const Matrix g = rows_of({{1, 0}, {-1, -1}, {1, 1}});
  const std::vector<double> m_c{1, 1};
  const auto w = cosine_weights(g, m_c);
  EXPECT_NEAR(w[0], 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(w[1], -1.0, 1e-12);
  EXPECT_NEAR(w[2], 1.0, 1e-12);
}

TEST(CosineWeights, ZeroRowThrows) {
  const Matrix g = rows_of({{0, 0}});
  const std::vector<double> m_c{1, 1};
  EXPECT_THROW(cosine_weights(g, m_c), std::invalid_argument);
  const Matrix ok = rows_of({{1, 0}});
  const std::vector<double> zero{0, 0};
  EXPECT_THROW(cosine_weights(ok, zero), std::invalid_argument);
}

TEST(CosineWeightsProperty, BoundedByCauchySchwarz) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    Matrix g(4, 8);
    for (double& v : g.data) v = rng.normal(0, 3);
    std::vector<double> m_c(8);
    for (double& v : m_c) v = rng.normal(0, 3);
    for (double w : cosine_weights(g, m_c)) {
      EXPECT_GE(w, -1.0);
      EXPECT_LE(w, 1.0);
    }
  }
}

TEST(AggregateCategory, SingleRowPassesThrough) {
  const Matrix g = rows_of({{3, -2, 7}});
  const std::vector<double> w{0.4};
  EXPECT_EQ(aggregate_category(g, w), (std::vector<double>{3, -2, 7}));
  const std::vector<double> sim_one{1.0};  // uniform fallback path
  EXPECT_EQ(aggregate_category(g, sim_one), (std::vector<double>{3, -2, 7}));
}

TEST(AggregateCategory, WeightsFromSimilarities) {
  // sims (0.2, 0.6) -> weights (0.8, 0.4)/1.2 = (2/3, 1/3)
  const Matrix g = rows_of({{3, 0}, {0, 3}});
  const std::vector<double> w{0.2, 0.6};
  const auto agg = aggregate_category(g, w);
  EXPECT_NEAR(agg[0], 2.0, 1e-12);
  EXPECT_NEAR(agg[1], 1.0, 1e-12);
}

TEST(AggregateCategory, AllSimilaritiesOneFallsBackToUniform) {
  const Matrix g = rows_of({{2, 0}, {0, 2}});
  const std::vector<double> w{1.0, 1.0};
  const auto agg = aggregate_category(g, w);
  EXPECT_NEAR(agg[0], 1.0, 1e-12);
  EXPECT_NEAR(agg[1], 1.0, 1e-12);
}

TEST(AggregateCategoryProperty, ConvexCombination) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    Matrix g(3, 5);
    for (double& v : g.data) v = rng.normal(0, 2);
    std::vector<double> m_c(5);
    for (double& v : m_c) v = rng.normal(0, 2);
    const auto w = cosine_weights(g, m_c);
    const auto agg = aggregate_category(g, w);
    for (std::size_t j = 0; j < 5; ++j) {
      double lo = g(0, j), hi = g(0, j);
      for (std::size_t r = 1; r < 3; ++r) {
        lo = std::min(lo, g(r, j));
        hi = std::max(hi, g(r, j));
      }
      EXPECT_GE(agg[j], lo - 1e-9);
      EXPECT_LE(agg[j], hi + 1e-9);
    }
  }
}

TEST(EmaUpdate, Limits) {
  CategoryMemory mem = init_memory(2, 4, 9);
  const std::vector<double> agg{1, 2, 3, 4};

  mem.momentum = 0.0;
  const CategoryMemory same = ema_update(mem, {{1, agg}});
  EXPECT_EQ(same.rows.data, mem.rows.data);

  mem.momentum = 1.0;
  const CategoryMemory replaced = ema_update(mem, {{1, agg}});
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(replaced.rows(1, j), agg[j]);
  // other rows untouched
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(replaced.rows(0, j), mem.rows(0, j));
}

TEST(EmaUpdate, ConvexCombinationExample) {
  CategoryMemory mem = init_memory(1, 2, 0);
  mem.momentum = 0.5;
  mem.rows(0, 0) = 0.0;
  mem.rows(0, 1) = 0.0;
  const CategoryMemory out = ema_update(mem, {{0, {2, 4}}});
  EXPECT_EQ(out.rows(0, 0), 1.0);
  EXPECT_EQ(out.rows(0, 1), 2.0);
}

TEST(EmaUpdateProperty, UpdatedEntriesBetweenOldAndAggregate) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    CategoryMemory mem = init_memory(1, 6, i);
    mem.momentum = rng.uniform();
    std::vector<double> agg(6);
    for (double& v : agg) v = rng.normal(0, 2);
    const CategoryMemory out = ema_update(mem, {{0, agg}});
    for (std::size_t j = 0; j < 6; ++j) {
      const double lo = std::min(mem.rows(0, j), agg[j]);
      const double hi = std::max(mem.rows(0, j), agg[j]);
      EXPECT_GE(out.rows(0, j), lo - 1e-12);
      EXPECT_LE(out.rows(0, j), hi + 1e-12);
    }
  }
}

TEST(EmaUpdateProperty, GeometricConvergence) {
  for (double m : {0.01, 0.1, 0.5}) {
    CategoryMemory mem = init_memory(1, 8, 11);
    mem.momentum = m;
    std::vector<double> target(8);
    Rng rng(4);
    for (double& v : target) v = rng.normal(0, 1);

    double initial_gap = 0.0;
    for (std::size_t j = 0; j < 8; ++j)
      initial_gap = std::max(initial_gap, std::abs(mem.rows(0, j) - target[j]));

    for (int t = 1; t <= 200; ++t) {
      mem = ema_update(mem, {{0, target}});
      double gap = 0.0;
      for (std::size_t j = 0; j < 8; ++j)
        gap = std::max(gap, std::abs(mem.rows(0, j) - target[j]));
      EXPECT_LE(gap, std::pow(1.0 - m, t) * initial_gap + 1e-9);
    }
  }
}

TEST(SelectBackgroundUpdates, TwoLeastOverlapping) {
  const Matrix feats = rows_of({{1, 1}, {2, 2}, {3, 3}});
  const std::vector<double> max_iou{0.3, 0.0, 0.1};
  const FeatureBatch out = select_background_updates(feats, max_iou, 4);
  ASSERT_EQ(out.features.rows, 2u);
  EXPECT_EQ(out.features(0, 0), 2.0);  // row 1 first (smallest IoU)
  EXPECT_EQ(out.features(1, 0), 3.0);  // then row 2
  EXPECT_EQ(out.labels, (std::vector<int>{4, 4}));
}

TEST(SelectBackgroundUpdates, TieBreaksByLowerIndex) {
  const Matrix feats = rows_of({{1, 0}, {2, 0}, {3, 0}});
  const std::vector<double> max_iou{0.1, 0.1, 0.1};
  const FeatureBatch out = select_background_updates(feats, max_iou, 9);
  EXPECT_EQ(out.features(0, 0), 1.0);
  EXPECT_EQ(out.features(1, 0), 2.0);
}

TEST(SelectBackgroundUpdates, FewerThanTwo) {
  const Matrix one = rows_of({{5, 6}});
  const std::vector<double> one_iou{0.2};
  EXPECT_EQ(select_background_updates(one, one_iou, 3).features.rows, 1u);

  const Matrix none(0, 2);
  const std::vector<double> no_iou;
  const FeatureBatch empty = select_background_updates(none, no_iou, 3);
  EXPECT_EQ(empty.features.rows, 0u);
  EXPECT_TRUE(empty.labels.empty());
}

TEST(GenerateCategoryFeature, OneHotSelectsMemoryRow) {
  const CategoryMemory mem = init_memory(2, 4, 21);
  Matrix p(1, 3);
  p(0, 1) = 1.0;
  const Matrix f = generate_category_feature(p, mem);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(f(0, j), mem.rows(1, j));
}

TEST(GenerateCategoryFeature, UniformMixesRows) {
  CategoryMemory mem = init_memory(1, 2, 0);
  mem.rows = rows_of({{0, 2}, {2, 0}});
  Matrix p(1, 2);
  p(0, 0) = 0.5;
  p(0, 1) = 0.5;
  const Matrix f = generate_category_feature(p, mem);
  EXPECT_NEAR(f(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(f(0, 1), 1.0, 1e-12);
}

TEST(GenerateCategoryFeature, EmptyBatchAndValidation) {
  const CategoryMemory mem = init_memory(2, 4, 21);
  const Matrix empty(0, 3);
  EXPECT_EQ(generate_category_feature(empty, mem).rows, 0u);

  Matrix bad_sum(1, 3);
  bad_sum(0, 0) = 0.7;
  EXPECT_THROW(generate_category_feature(bad_sum, mem), std::invalid_argument);

  Matrix negative(1, 3);
  negative(0, 0) = 1.2;
  negative(0, 1) = -0.2;
  EXPECT_THROW(generate_category_feature(negative, mem), std::invalid_argument);
}

TEST(UpdateFromBatch, GroupsByLabelAndLeavesOthersAlone) {
  CategoryMemory mem = init_memory(2, 3, 31);
  mem.momentum = 0.25;
  FeatureBatch batch;
  batch.features = rows_of({{1, 0, 0}, {0, 5, 0}, {3, 0, 0}});
  batch.labels = {2, 0, 2};
  const CategoryMemory out = update_from_batch(mem, batch);

  // category 1 untouched
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(out.rows(1, j), mem.rows(1, j));

  // category 0: single-feature aggregate is the feature itself
  for (std::size_t j = 0; j < 3; ++j) {
    const double expected = 0.75 * mem.rows(0, j) + 0.25 * rows_of({{0, 5, 0}})(0, j);
    EXPECT_NEAR(out.rows(0, j), expected, 1e-15);
  }

  // category 2: cosine-weighted aggregate of rows 0 and 2
  Matrix group = rows_of({{1, 0, 0}, {3, 0, 0}});
  const auto w = cosine_weights(group, mem.rows.row(2));
  const auto agg = aggregate_category(group, w);
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_NEAR(out.rows(2, j), 0.75 * mem.rows(2, j) + 0.25 * agg[j], 1e-15);
}

TEST(UpdateFromBatchProperty, FuzzKeepsMemoryFinite) {
  Rng rng(5);
  CategoryMemory mem = init_memory(3, 6, 1);
  mem.momentum = 0.1;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = 1 + rng.uniform_index(5);
    FeatureBatch batch;
    batch.features = Matrix(k, 6);
    for (double& v : batch.features.data) v = rng.normal(0, 100);
    bool has_zero_row = false;
    for (std::size_t r = 0; r < k; ++r) {
      double norm = 0;
      for (double v : batch.features.row(r)) norm += v * v;
      if (norm == 0.0) has_zero_row = true;
      batch.labels.push_back(static_cast<int>(rng.uniform_index(4)));
    }
    if (has_zero_row) continue;
    mem = update_from_batch(mem, batch);
    ASSERT_TRUE(mem.rows.all_finite());
  }
}

TEST(MemorySnapshot, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "detkit_mem_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "mem.bin").string();

  CategoryMemory mem = init_memory(4, 17, 99, 0.37, 0.05);
  save_memory(mem, path);
  const CategoryMemory back = load_memory(path);
  EXPECT_EQ(back.rows.rows, mem.rows.rows);
  EXPECT_EQ(back.rows.cols, mem.rows.cols);
  EXPECT_EQ(back.rows.data, mem.rows.data);
  EXPECT_EQ(back.momentum, mem.momentum);
  EXPECT_EQ(back.seed, mem.seed);

  // Same memory written twice produces identical bytes.
  const std::string path2 = (dir / "mem2.bin").string();
  save_memory(mem, path2);
  EXPECT_EQ(detail::read_file_bytes(path), detail::read_file_bytes(path2));
  std::filesystem::remove_all(dir);
}

TEST(MemorySnapshot, RejectsForeignFile) {
  const auto dir = std::filesystem::temp_directory_path() / "detkit_mem_test2";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "not_mem.bin").string();
  detail::write_file_bytes(path, "DKMAT1\ngarbage");
  EXPECT_THROW(load_memory(path), IoError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace detkit
