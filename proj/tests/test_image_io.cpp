#include <gtest/gtest.h>

#include <fstream>

#include "gemini/image_io.hpp"
#include "gemini/store.hpp"
#include "test_support.hpp"

using namespace gemini;
using namespace gemini::data;
using testing_support::fresh_dir;

namespace {

RgbImage gradient_image(int w, int h, int salt) {
  RgbImage img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<std::uint8_t>((x * 7 + y * 3 + c * 50 + salt) % 256);
      }
    }
  }
  return img;
}

}  // namespace

TEST(ImageFiles, PngAndPpmRoundTrip) {
  const auto dir = fresh_dir("image_rt");
  const auto img = gradient_image(13, 9, 1);
  write_png(dir / "a.png", img);
  write_ppm(dir / "a.ppm", img);
  for (const auto* name : {"a.png", "a.ppm"}) {
    const auto back = read_image(dir / name);
    EXPECT_EQ(back.width, 13);
    EXPECT_EQ(back.height, 9);
    EXPECT_EQ(back.pixels, img.pixels) << name;
  }
}

TEST(ImageFiles, PpmWithCommentsAndErrors) {
  const auto dir = fresh_dir("image_ppm");
  {
    std::ofstream os(dir / "c.ppm", std::ios::binary);
    os << "P6\n# comment\n2 1\n255\n";
    os.write("\x01\x02\x03\x04\x05\x06", 6);
  }
  EXPECT_EQ(read_ppm(dir / "c.ppm").pixels, (std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6}));
  std::ofstream(dir / "p3.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(read_ppm(dir / "p3.ppm"), InvalidInputError);
  std::ofstream(dir / "short.ppm", std::ios::binary) << "P6\n4 4\n255\nabc";
  EXPECT_THROW(read_ppm(dir / "short.ppm"), InvalidInputError);
  std::ofstream(dir / "bad.png") << "not a png";
  EXPECT_THROW(read_png(dir / "bad.png"), InvalidInputError);
}

TEST(ImageTree, LoadsClassesInOrder) {
  const auto root = fresh_dir("image_tree");
  const ClassSet classes({"WW", "UA"});
  for (const auto& name : classes.names()) {
    std::filesystem::create_directories(root / "SUR" / name);
    write_png(root / "SUR" / name / "b.png", gradient_image(8, 8, 2));
    write_ppm(root / "SUR" / name / "a.ppm", gradient_image(6, 5, 3));
  }
  std::ofstream(root / "SUR" / "WW" / "notes.txt") << "ignored";
  const auto images = load_image_tree(root, View::SUR, classes);
  ASSERT_EQ(images.size(), 4u);
  EXPECT_EQ(images[0].image_id, "SUR_WW_a");
  EXPECT_EQ(images[1].image_id, "SUR_WW_b");
  EXPECT_EQ(images[2].label.name, "UA");
  EXPECT_EQ(images[2].label.index, 1);
  EXPECT_EQ(images[0].width, 6);
  EXPECT_EQ(images[0].height, 5);
  EXPECT_EQ(images[3].view, View::SUR);
}

TEST(ImageTree, MissingDirectoriesNameTheClass) {
  const auto root = fresh_dir("image_tree_missing");
  std::filesystem::create_directories(root / "SUR" / "WW");
  try {
    load_image_tree(root, View::SUR, ClassSet({"WW", "CYS"}));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("CYS"), std::string::npos);
  }
  EXPECT_THROW(load_image_tree(root, View::SEC, ClassSet({"WW", "CYS"})), ConfigError);
}

TEST(PatchStore, RoundTripWhitensOnLoad) {
  const auto dir = fresh_dir("patch_store");
  const auto images = generate_synthetic_dataset(2, 2, 300, 300, 4);
  ExtractOptions raw;
  raw.whiten = false;
  DatasetSplit split;
  split.seed = 9;
  std::vector<SourceEntry> sources;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto patches = extract_patches(images[i], raw);
    auto& dst = i % 2 == 0 ? split.train : split.test;
    dst.insert(dst.end(), patches.begin(), patches.end());
    sources.push_back({images[i].image_id, images[i].label, images[i].view, images[i].width, images[i].height,
                       i % 2 == 0 ? "train" : "test"});
  }
  write_patch_store(dir, split, View::SUR, ClassSet::with_size(2), sources);
  const auto store = read_patch_store(dir);
  EXPECT_EQ(store.split.seed, 9u);
  EXPECT_EQ(store.classes.names(), ClassSet::with_size(2).names());
  ASSERT_EQ(store.split.train.size(), split.train.size());
  ASSERT_EQ(store.split.test.size(), split.test.size());
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    const auto& a = split.train[i];
    const auto& b = store.split.train[i];
    EXPECT_EQ(a.patch_id, b.patch_id);
    EXPECT_EQ(a.label.index, b.label.index);
    EXPECT_EQ(a.source_image_id, b.source_image_id);
    EXPECT_EQ(a.origin_x, b.origin_x);
    EXPECT_EQ(whiten(a.values).storage(), b.values.storage());
  }
  EXPECT_EQ(read_patch(dir / "patches", split.test[0].patch_id, false).values.storage(), split.test[0].values.storage());

  auto whitened = split.train[0];
  whitened.values = whiten(whitened.values);
  EXPECT_THROW(write_patch(dir / "patches", whitened), InvalidInputError);
  EXPECT_THROW(read_patch_store(dir / "absent"), ConfigError);
}
