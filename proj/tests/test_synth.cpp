#include <gtest/gtest.h>

#include "focuskit/focuskit.hpp"
#include "oracles.hpp"

using namespace focuskit;
using namespace focuskit::synth;

TEST(Synth, CountsAndLabels) {
  SynthConfig c;
  c.classes = 4;
  c.per_class = 64;
  const auto samples = generate(c);
  ASSERT_EQ(samples.size(), 256u);
  std::array<int, 4> per{};
  for (const auto& s : samples) {
    ++per[static_cast<std::size_t>(s.label)];
    EXPECT_EQ(s.caption, "a photo of a person " + classword(s.label));
    EXPECT_EQ(s.image.width, 32);
    EXPECT_EQ(s.heatmap.width, 32);
  }
  EXPECT_EQ(per, (std::array<int, 4>{64, 64, 64, 64}));
}

TEST(Synth, WrittenDatasetLayout) {
  oracle::TempDir dir;
  SynthConfig c;
  c.classes = 2;
  c.per_class = 3;
  c.image_size = 16;
  c.subject_size = 4;
  const auto w = write_dataset(generate(c), dir.path());
  const auto train = load_json_file(w.samples_file);
  const auto labels = load_json_file(w.labels_file);
  ASSERT_EQ(train.size(), 6u);
  ASSERT_EQ(labels.size(), 6u);
  EXPECT_EQ(w.files.size(), 14u);
  EXPECT_EQ(train[0]["text"], "a photo of a person running");
  EXPECT_EQ(labels[5]["label"], "jumping");
  const auto img = load_image(dir / train[3]["image"].get<std::string>());
  EXPECT_EQ(img.width, 16);
  EXPECT_EQ(read_heatmap(dir / train[3]["heatmap"].get<std::string>()).width, 16);
}

TEST(Synth, ZeroNoiseBackgroundIsConstant) {
  SynthConfig c;
  c.noise = 0;
  c.per_class = 5;
  for (const auto& s : generate(c)) {
    int background = 0;
    for (float v : s.image.values) background += v == 0.5f;
    EXPECT_EQ(background, 32 * 32 * 3 - 8 * 8 * 3);
  }
}

TEST(Synth, SameSeedBitIdentical) {
  SynthConfig c;
  c.seed = 99;
  c.per_class = 8;
  const auto a = generate(c), b = generate(c);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].heatmap.values, b[i].heatmap.values);
  }
  c.seed = 100;
  EXPECT_NE(generate(c)[0].image, a[0].image);
}

TEST(Synth, SubjectUnderHeatmapPeak) {
  SynthConfig c;
  c.noise = 0;
  c.per_class = 10;
  for (const auto& s : generate(c)) {
    int px = 0, py = 0;
    float best = -1;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        if (s.heatmap.at(x, y) > best) {
          best = s.heatmap.at(x, y);
          px = x;
          py = y;
        }
      }
    }
    EXPECT_NE(s.image.at(px, py, 0), 0.5f);
  }
}

TEST(Synth, ConfigValidation) {
  SynthConfig c;
  c.subject_size = 40;
  EXPECT_THROW(generate(c), ValidationError);
  EXPECT_THROW(config_from_json(json{{"noise", 1.5}}), ValidationError);
  EXPECT_THROW(config_from_json(json{{"colour", 1}}), ValidationError);
  const auto back = config_from_json(json::parse(to_json(SynthConfig{}).dump()));
  EXPECT_EQ(to_json(back), to_json(SynthConfig{}));
}

TEST(Synth, ClassColours) {
  EXPECT_EQ(class_colour(0), (std::array<double, 3>{1, 0, 0}));
  EXPECT_EQ(class_colour(9), class_colour(9));
  EXPECT_EQ(classword(7), "class7");
}
