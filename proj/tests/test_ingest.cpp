#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "detkit/ingest.hpp"
#include "detkit/stats.hpp"
#include "detkit/synth.hpp"

namespace detkit {
namespace {

class IngestTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("detkit_ingest_" + std::to_string(::testing::UnitTest::GetInstance()
                                                  ->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& content) {
    const std::string path = (dir_ / name).string();
    std::ofstream out(path);
    out << content;
    return path;
  }

  std::string read(const std::string& path) { return detail::read_file_bytes(path); }

  std::filesystem::path dir_;
};

const char* kGtDoc = R"({
  "images": [{"id": 1, "width": 100, "height": 100},
             {"id": 2, "width": 100, "height": 100}],
  "annotations": [
    {"id": 10, "image_id": 1, "category_id": 7, "bbox": [10, 10, 20, 30]},
    {"id": 11, "image_id": 1, "category_id": 3, "bbox": [5, 5, 0, 10]},
    {"id": 12, "image_id": 2, "category_id": 3, "bbox": [1, 2, 3, 4]}
  ],
  "categories": [{"id": 7, "name": "b"}, {"id": 3, "name": "a"}]
})";

TEST_F(IngestTest, LoadGroundTruthConvertsAndRejects) {
  const auto gt = load_ground_truth(write("gt.json", kGtDoc));
  EXPECT_EQ(gt.num_categories(), 2);
  // categories sorted by id: 3 -> label 0, 7 -> label 1
  EXPECT_EQ(gt.categories[0].second, "a");
  EXPECT_EQ(gt.categories[1].second, "b");

  const auto& img1 = gt.by_image.at("1");
  ASSERT_EQ(img1.first.size(), 1u);  // the zero-width box was rejected
  EXPECT_EQ(img1.first[0].x1, 10.0);
  EXPECT_EQ(img1.first[0].y1, 10.0);
  EXPECT_EQ(img1.first[0].x2, 30.0);
  EXPECT_EQ(img1.first[0].y2, 40.0);
  EXPECT_EQ(img1.second[0], 1);

  ASSERT_EQ(gt.rejected.size(), 1u);
  EXPECT_EQ(gt.rejected[0].annotation_id, 11);

  // nothing dropped silently: 3 in = 2 accepted + 1 rejected
  const std::size_t accepted =
      gt.by_image.at("1").first.size() + gt.by_image.at("2").first.size();
  EXPECT_EQ(accepted + gt.rejected.size(), 3u);
}

TEST_F(IngestTest, EmptyAnnotationsIsSuccess) {
  const auto gt = load_ground_truth(write("gt.json", R"({
    "images": [{"id": 5, "width": 10, "height": 10}],
    "annotations": [],
    "categories": [{"id": 0, "name": "x"}]
  })"));
  EXPECT_TRUE(gt.by_image.at("5").first.empty());
  EXPECT_TRUE(gt.rejected.empty());
}

TEST_F(IngestTest, GroundTruthErrors) {
  EXPECT_THROW(load_ground_truth(write("a.json", "{ not json")), ParseError);
  EXPECT_THROW(load_ground_truth(write("b.json", R"({"images": []})")), ParseError);
  // unknown category
  EXPECT_THROW(load_ground_truth(write("c.json", R"({
    "images": [{"id": 1}],
    "annotations": [{"image_id": 1, "category_id": 9, "bbox": [0,0,1,1]}],
    "categories": [{"id": 0, "name": "x"}]
  })")),
               ParseError);
  // annotation referencing a missing image
  EXPECT_THROW(load_ground_truth(write("d.json", R"({
    "images": [{"id": 1}],
    "annotations": [{"image_id": 2, "category_id": 0, "bbox": [0,0,1,1]}],
    "categories": [{"id": 0, "name": "x"}]
  })")),
               ParseError);
}

TEST_F(IngestTest, LoadPredictions) {
  const std::string path = write("p.json", R"([
    {"image_id": 1, "bbox": [0, 0, 10, 10], "scores": [0.1, 0.9]},
    {"image_id": 1, "bbox": [5, 5, 4, 4], "scores": [0.5, 0.5]}
  ])");
  const auto preds = load_predictions(path, 2, true);
  const auto& img1 = preds.by_image.at("1");
  ASSERT_EQ(img1.first.size(), 2u);
  EXPECT_EQ(img1.first[0].x2, 10.0);
  EXPECT_EQ(img1.second[0][1], 0.9);
}

TEST_F(IngestTest, PredictionErrorsNameTheRecord) {
  const std::string short_scores = write("p1.json", R"([
    {"image_id": 1, "bbox": [0, 0, 10, 10], "scores": [0.1]}
  ])");
  try {
    load_predictions(short_scores, 2, false);
    FAIL() << "expected error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("record 0"), std::string::npos);
  }

  const std::string out_of_range = write("p2.json", R"([
    {"image_id": 1, "bbox": [0, 0, 10, 10], "scores": [0.1, 1.7]}
  ])");
  EXPECT_THROW(load_predictions(out_of_range, 2, true), ParseError);
  // same file is fine when the scores are logits
  EXPECT_EQ(load_predictions(out_of_range, 2, false).by_image.size(), 1u);

  const std::string bad_box = write("p3.json", R"([
    {"image_id": 1, "bbox": [0, 0, 0, 10], "scores": [0.1, 0.2]}
  ])");
  EXPECT_THROW(load_predictions(bad_box, 2, false), ParseError);
}

TEST_F(IngestTest, SceneRoundTrip) {
  SynthConfig cfg;
  cfg.n_gt = 4;
  cfg.preds_per_gt = 3;
  cfg.n_classes = 3;
  std::vector<Scene> scenes;
  for (int i = 0; i < 3; ++i) scenes.push_back(generate_scene(cfg, i));

  const std::string gt_path = (dir_ / "gt.json").string();
  const std::string pred_path = (dir_ / "pred.json").string();
  write_scenes(scenes, gt_path, pred_path, cfg.image_w, cfg.image_h);

  const auto gt = load_ground_truth(gt_path);
  EXPECT_EQ(gt.num_categories(), 3);
  const auto preds = load_predictions(pred_path, gt.num_categories(), false);
  const auto back = build_scenes(gt, preds);
  ASSERT_EQ(back.size(), scenes.size());

  for (const Scene& original : scenes) {
    const auto it = std::find_if(back.begin(), back.end(), [&](const Scene& s) {
      return s.image_id == original.image_id;
    });
    ASSERT_NE(it, back.end());
    ASSERT_EQ(it->num_gt(), original.num_gt());
    ASSERT_EQ(it->num_pred(), original.num_pred());
    for (std::size_t g = 0; g < original.num_gt(); ++g) {
      EXPECT_NEAR(it->gt_boxes[g].x1, original.gt_boxes[g].x1, 1e-9);
      EXPECT_NEAR(it->gt_boxes[g].x2, original.gt_boxes[g].x2, 1e-9);
      EXPECT_NEAR(it->gt_boxes[g].y2, original.gt_boxes[g].y2, 1e-9);
      EXPECT_EQ(it->gt_labels[g], original.gt_labels[g]);
    }
    for (std::size_t i = 0; i < original.num_pred(); ++i) {
      EXPECT_NEAR(it->pred_boxes[i].x1, original.pred_boxes[i].x1, 1e-9);
      for (int c = 0; c < original.num_classes(); ++c)
        EXPECT_NEAR(it->pred_scores(i, static_cast<std::size_t>(c)),
                    original.pred_scores(i, static_cast<std::size_t>(c)), 1e-9);
    }
  }
}

TEST_F(IngestTest, BuildScenesRejectsUnknownImage) {
  const auto gt = load_ground_truth(write("gt.json", R"({
    "images": [{"id": 1}],
    "annotations": [],
    "categories": [{"id": 0, "name": "x"}]
  })"));
  const auto preds = load_predictions(write("p.json", R"([
    {"image_id": 99, "bbox": [0,0,1,1], "scores": [0.0]}
  ])"),
                                      1, false);
  EXPECT_THROW(build_scenes(gt, preds), ParseError);
}

BucketReport sample_report() {
  BucketReport report;
  report.n_scenes = 2;
  report.total_gt = 10;
  AssignerBucketStats st;
  st.assigner = "mcss";
  for (int b = 0; b < kNumBuckets; ++b) {
    st.rows[static_cast<std::size_t>(b)].bucket = static_cast<SizeBucket>(b);
    st.rows[static_cast<std::size_t>(b)].gt_count = b + 1;
    st.rows[static_cast<std::size_t>(b)].mean_positives = 1.5 * (b + 1);
    st.rows[static_cast<std::size_t>(b)].std_positives = 0.25;
  }
  st.cov = 0.4330127;
  report.per_assigner.push_back(st);
  return report;
}

TEST_F(IngestTest, WriteReportDeterministicWithFixedBucketOrder) {
  const BucketReport report = sample_report();
  const std::string a = (dir_ / "r1.csv").string();
  const std::string b = (dir_ / "r2.csv").string();
  write_report(report, a, ReportFormat::kCsv);
  write_report(report, b, ReportFormat::kCsv);
  EXPECT_EQ(read(a), read(b));

  const std::string csv = read(a);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "assigner,bucket,gt_count,mean_positives,std_positives");
  const auto eS = csv.find(",eS,");
  const auto rS = csv.find(",rS,");
  const auto gS = csv.find(",gS,");
  const auto normal = csv.find(",Normal,");
  EXPECT_LT(eS, rS);
  EXPECT_LT(rS, gS);
  EXPECT_LT(gS, normal);

  const std::string j = (dir_ / "r.json").string();
  write_report(report, j, ReportFormat::kJson);
  const auto doc = nlohmann::json::parse(read(j));
  EXPECT_EQ(doc["total_gt"], 10);
  EXPECT_EQ(doc["assigners"][0]["name"], "mcss");
  EXPECT_EQ(doc["assigners"][0]["buckets"][0]["bucket"], "eS");
  EXPECT_NEAR(doc["assigners"][0]["cov_mean_positives"].get<double>(), 0.4330127,
              1e-6);
}

TEST_F(IngestTest, WriteReportEmptyHasHeaderOnly) {
  BucketReport empty;
  const std::string path = (dir_ / "empty.csv").string();
  write_report(empty, path, ReportFormat::kCsv);
  EXPECT_EQ(read(path), "assigner,bucket,gt_count,mean_positives,std_positives\n");
}

TEST_F(IngestTest, WriteAssignmentsFormats) {
  SynthConfig cfg;
  cfg.n_gt = 2;
  cfg.preds_per_gt = 2;
  const Scene scene = generate_scene(cfg, 0);
  const Assignment a = assign_mcss(scene, {});
  const std::vector<Scene> scenes{scene};
  const std::vector<Assignment> assignments{a};

  const std::string csv_path = (dir_ / "a.csv").string();
  write_assignments("mcss", scenes, assignments, csv_path, ReportFormat::kCsv);
  const std::string csv = read(csv_path);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scene,image_id,pred,role,gt,score");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 4);  // header + 4 preds

  const std::string json_path = (dir_ / "a.json").string();
  write_assignments("mcss", scenes, assignments, json_path, ReportFormat::kJson);
  const auto doc = nlohmann::json::parse(read(json_path));
  EXPECT_EQ(doc["assigner"], "mcss");
  EXPECT_EQ(doc["scenes"][0]["per_pred"].size(), 4u);
  EXPECT_EQ(doc["scenes"][0]["thresholds"].size(), 2u);
}

}  // namespace
}  // namespace detkit
