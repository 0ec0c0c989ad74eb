#include "testing.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "filmedgan/data.hpp"
#include "filmedgan/errors.hpp"
#include "filmedgan/image_io.hpp"

using namespace filmedgan;
namespace fs = std::filesystem;

namespace {

const Resolution kDesk{64, 32};

Attributes attrs(int64_t g, int64_t s, int64_t c, int64_t k) { return Attributes{{g, s, c, k}}; }

}  // namespace

TEST_SUITE("data") {

TEST_CASE("caption grammar") {
  const auto& schema = AttributeSchema::synthetic();
  const auto romper = attrs(0, schema.index_of(AttributeSlot::sleeve, "sleeveless"),
                            schema.index_of(AttributeSlot::color, "green"), schema.index_of(AttributeSlot::category, "romper"));
  CHECK(caption_of(romper) == "the lady is wearing a green sleeveless romper");
  const auto tee = attrs(1, schema.index_of(AttributeSlot::sleeve, "long-sleeved"),
                         schema.index_of(AttributeSlot::color, "blue"), schema.index_of(AttributeSlot::category, "t-shirt"));
  CHECK(caption_of(tee) == "the man is wearing a blue long-sleeved t-shirt");
  CHECK_THROWS_AS(caption_of(attrs(2, 0, 0, 0)), ValidationError);
  CHECK_THROWS_AS(parse_caption("the robot is wearing a red blouse"), ValidationError);
}

TEST_CASE("caption round trip over every attribute combination") {
  int combos = 0;
  for (int64_t g = 0; g < 2; ++g)
    for (int64_t s = 0; s < 3; ++s)
      for (int64_t c = 0; c < 8; ++c)
        for (int64_t k = 0; k < 4; ++k) {
          const auto a = attrs(g, s, c, k);
          CHECK(parse_caption(caption_of(a)) == a);
          ++combos;
        }
  CHECK(combos == 192);
}

TEST_CASE("generation is deterministic under the seed") {
  const auto a = generate_synthetic(60, 4, kDesk);
  const auto b = generate_synthetic(60, 4, kDesk);
  const auto c = generate_synthetic(60, 5, kDesk);
  REQUIRE(a.train.size() == b.train.size());
  bool any_difference = false;
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].id == b.train[i].id);
    CHECK(torch::equal(a.train[i].pixels, b.train[i].pixels));
    CHECK(torch::equal(a.train[i].mask, b.train[i].mask));
    CHECK(a.train[i].caption == b.train[i].caption);
    any_difference = any_difference || !torch::equal(a.train[i].pixels, c.train[i].pixels);
  }
  CHECK(any_difference);
  CHECK_THROWS_AS(generate_synthetic(9, 1, kDesk), ValidationError);
}

TEST_CASE("2000 samples split 1800/200, disjoint, with balanced marginals") {
  const auto data = generate_synthetic(2000, 7, kDesk);
  CHECK(data.train.size() == 1800);
  CHECK(data.test.size() == 200);
  std::set<int64_t> train_ids;
  for (const auto& s : data.train) train_ids.insert(s.id);
  for (const auto& s : data.test) CHECK(train_ids.count(s.id) == 0);
  CHECK(train_ids.size() + data.test.size() == 2000);

  std::array<std::map<int64_t, int>, kAttributeCount> counts;
  for (const auto* part : {&data.train, &data.test}) {
    for (const auto& s : *part) {
      for (size_t k = 0; k < kAttributeCount; ++k) ++counts[k][s.attributes.values[k]];
    }
  }
  for (size_t k = 0; k < kAttributeCount; ++k) {
    const auto card = data.schema.cardinality(static_cast<AttributeSlot>(k));
    REQUIRE(static_cast<int64_t>(counts[k].size()) == card);
    const double uniform = 1.0 / static_cast<double>(card);
    for (const auto& [value, count] : counts[k]) CHECK(std::abs(count / 2000.0 - uniform) <= 0.05);
  }
}

TEST_CASE("every sprite has a mask covering 10-60% and a matching caption") {
  const auto data = generate_synthetic(400, 8, kDesk);
  for (const auto* part : {&data.train, &data.test}) {
    for (const auto& s : *part) {
      CHECK((s.pixels.sizes() == torch::IntArrayRef{3, 64, 32}));
      CHECK((s.pixels.scalar_type() == torch::kUInt8));
      const double coverage = s.mask.to(torch::kDouble).mean().item<double>();
      CHECK(coverage >= 0.10);
      CHECK(coverage <= 0.60);
      CHECK(parse_caption(s.caption) == s.attributes);
      const auto img = s.image();
      CHECK(img.min().item<float>() >= -1.0f);
      CHECK(img.max().item<float>() <= 1.0f);
    }
  }
}

TEST_CASE("pixels outside the mask ignore the garment attributes") {
  for (uint64_t seed = 0; seed < 40; ++seed) {
    const auto body = SpriteBody::random(seed, kDesk);
    std::mt19937_64 rng(seed);
    auto pick = [&](int64_t n) { return static_cast<int64_t>(rng() % static_cast<uint64_t>(n)); };
    const int64_t gender = pick(2);
    const auto a = render_sprite(body, attrs(gender, pick(3), pick(8), pick(4)), kDesk);
    const auto b = render_sprite(body, attrs(gender, pick(3), pick(8), pick(4)), kDesk);
    CHECK(torch::equal(a.mask, b.mask));
    const auto outside = (a.mask == 0).unsqueeze(0).expand({3, 64, 32});
    CHECK(torch::equal(a.pixels.masked_select(outside), b.pixels.masked_select(outside)));
  }
}

TEST_CASE("garment color changes the masked region") {
  const auto body = SpriteBody::random(3, kDesk);
  const auto red = render_sprite(body, attrs(0, 2, 0, 0), kDesk);
  const auto blue = render_sprite(body, attrs(0, 2, 5, 0), kDesk);
  CHECK_FALSE(torch::equal(red.pixels, blue.pixels));
  const auto rgb = garment_rgb(0);
  CHECK(rgb[0] > rgb[1]);
  CHECK(rgb[0] > rgb[2]);
  CHECK_THROWS_AS(garment_rgb(8), ValidationError);
}

TEST_CASE("synthetic dataset save and load round trip") {
  const auto data = generate_synthetic(30, 12, kDesk);
  const auto dir = fs::temp_directory_path() / "filmedgan_synth_rt";
  fs::remove_all(dir);
  save_synthetic(data, dir, 12);
  const auto back = load_dataset(dir);
  REQUIRE(back.train.size() == data.train.size());
  REQUIRE(back.test.size() == data.test.size());
  CHECK(back.resolution.height == 64);
  for (size_t i = 0; i < data.test.size(); ++i) {
    CHECK(back.test[i].id == data.test[i].id);
    CHECK(back.test[i].caption == data.test[i].caption);
    CHECK(back.test[i].attributes == data.test[i].attributes);
    CHECK(torch::equal(back.test[i].pixels, data.test[i].pixels));
    CHECK(torch::equal(back.test[i].mask, data.test[i].mask));
  }
  fs::remove_all(dir);
}

TEST_CASE("fashion synthesis layout loader") {
  const auto dir = fs::temp_directory_path() / "filmedgan_fashion";
  fs::remove_all(dir);
  fs::create_directories(dir);
  CHECK_THROWS_AS(load_fashion_synthesis(dir), IoError);

  fs::create_directories(dir / "images");
  const auto synth = generate_synthetic(10, 1, {128, 64});
  std::ofstream captions(dir / "captions.csv"), attributes(dir / "attributes.csv"), train(dir / "train.txt"),
      test(dir / "test.txt");
  captions << "id,caption\n";
  attributes << "id,gender,sleeve,color,category\n";
  for (int i = 0; i < 3; ++i) {
    const auto& s = synth.train[static_cast<size_t>(i)];
    const auto name = "img" + std::to_string(i);
    write_image(dir / "images" / (name + ".png"), torch::nn::functional::interpolate(
        s.image().unsqueeze(0), torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{100, 50}))[0]);
    captions << name << ",\"" << s.caption << ", with a collar\"\n";
    attributes << name << ",female,short,multicolor,blouse\n";
    (i < 2 ? train : test) << name << '\n';
  }
  captions.close();
  attributes.close();
  train.close();
  test.close();

  const auto data = load_dataset(dir, {128, 64});
  REQUIRE(data.train.size() == 2);
  REQUIRE(data.test.size() == 1);
  CHECK((data.train[0].pixels.sizes() == torch::IntArrayRef{3, 128, 64}));
  CHECK(data.train[0].caption.find("with a collar") != std::string::npos);
  CHECK(data.schema.name_of(AttributeSlot::color, data.train[0].attributes[AttributeSlot::color]) == "multicolor");
  CHECK_FALSE(data.train[0].mask.defined());
  fs::remove_all(dir);
}

TEST_CASE("missing dataset directory is an I/O error") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/filmedgan"), IoError);
}

TEST_CASE("stack_images selects and normalises") {
  const auto data = generate_synthetic(20, 2, kDesk);
  const std::vector<int64_t> pick{3, 0};
  const auto x = stack_images(data.train, pick);
  CHECK((x.sizes() == torch::IntArrayRef{2, 3, 64, 32}));
  CHECK(torch::equal(x[0], data.train[3].image()));
}

}
