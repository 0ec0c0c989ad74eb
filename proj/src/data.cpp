#include "filmedgan/data.hpp"

#include <boost/tokenizer.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "filmedgan/errors.hpp"

namespace filmedgan {
namespace {

using json = nlohmann::json;
using Rgb = std::array<uint8_t, 3>;

constexpr std::array<Rgb, 4> kSkin = {{{241, 194, 167}, {224, 172, 105}, {198, 134, 66}, {141, 85, 36}}};
constexpr std::array<Rgb, 4> kHair = {{{30, 25, 20}, {70, 45, 25}, {105, 70, 40}, {55, 55, 60}}};
constexpr std::array<Rgb, 4> kPants = {{{40, 45, 60}, {60, 60, 60}, {30, 30, 35}, {70, 60, 50}}};
// Index 0 means bare legs (skin color).
constexpr std::array<Rgb, 3> kLegwear = {{{0, 0, 0}, {25, 25, 25}, {95, 95, 100}}};
constexpr Rgb kShoe = {20, 18, 16};

Rgb hsv_to_rgb(double hue_deg, double saturation, double value) {
  const double c = value * saturation;
  const double hp = std::fmod(hue_deg, 360.0) / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = value - c;
  auto to_byte = [](double v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  return {to_byte(r + m), to_byte(g + m), to_byte(b + m)};
}

Rgb darker(Rgb c, double factor) {
  return {static_cast<uint8_t>(c[0] * factor), static_cast<uint8_t>(c[1] * factor),
          static_cast<uint8_t>(c[2] * factor)};
}

// Rasteriser working in unit coordinates (u across, v down).
class Canvas {
 public:
  Canvas(Resolution res, int offset_px)
      : h_(static_cast<int>(res.height)), w_(static_cast<int>(res.width)), offset_(offset_px),
        rgb_(static_cast<size_t>(h_ * w_ * 3), 0), mask_(static_cast<size_t>(h_ * w_), 0) {}

  int height() const { return h_; }
  int width() const { return w_; }

  void put(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    const size_t i = static_cast<size_t>(y * w_ + x) * 3;
    rgb_[i] = c[0];
    rgb_[i + 1] = c[1];
    rgb_[i + 2] = c[2];
  }

  int col(double u) const { return static_cast<int>(std::lround(u * w_)) + offset_; }
  int row(double v) const { return static_cast<int>(std::lround(v * h_)); }

  template <typename Fn>
  void for_rect(double u0, double v0, double u1, double v1, Fn&& fn) {
    for (int y = row(v0); y < row(v1); ++y)
      for (int x = col(u0); x < col(u1); ++x)
        if (x >= 0 && y >= 0 && x < w_ && y < h_) fn(x, y);
  }

  void rect(double u0, double v0, double u1, double v1, Rgb c) {
    for_rect(u0, v0, u1, v1, [&](int x, int y) { put(x, y, c); });
  }

  void mask_rect(double u0, double v0, double u1, double v1) {
    for_rect(u0, v0, u1, v1, [&](int x, int y) { mask_[static_cast<size_t>(y * w_ + x)] = 1; });
  }

  // Pixel centres inside the ellipse, optionally only rows with v <= v_max.
  void ellipse(double cu, double cv, double ru, double rv, Rgb c, double v_max = 2.0) {
    for (int y = 0; y < h_; ++y) {
      const double v = (y + 0.5) / h_;
      if (v > v_max) continue;
      for (int x = 0; x < w_; ++x) {
        const double u = (x - offset_ + 0.5) / w_;
        const double du = (u - cu) / ru;
        const double dv = (v - cv) / rv;
        if (du * du + dv * dv <= 1.0) put(x, y, c);
      }
    }
  }

  // Rows v0..v1 with the horizontal extent interpolated between two spans.
  void trapezoid(double v0, double v1, double u0_top, double u1_top, double u0_bottom,
                 double u1_bottom, Rgb c) {
    const int y0 = row(v0), y1 = row(v1);
    for (int y = y0; y < y1; ++y) {
      const double t = y1 > y0 + 1 ? static_cast<double>(y - y0) / (y1 - y0 - 1) : 0.0;
      const double a = u0_top + t * (u0_bottom - u0_top);
      const double b = u1_top + t * (u1_bottom - u1_top);
      for (int x = col(a); x < col(b); ++x) put(x, y, c);
    }
  }

  torch::Tensor pixels() const {
    return torch::from_blob(const_cast<uint8_t*>(rgb_.data()), {h_, w_, 3}, torch::kUInt8)
        .permute({2, 0, 1})
        .contiguous()
        .clone();
  }
  torch::Tensor mask() const {
    return torch::from_blob(const_cast<uint8_t*>(mask_.data()), {h_, w_}, torch::kUInt8).clone();
  }

 private:
  int h_;
  int w_;
  int offset_;
  std::vector<uint8_t> rgb_;
  std::vector<uint8_t> mask_;
};

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

using CsvRow = std::vector<std::string>;

std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<CsvRow> rows;
  using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Tokenizer tok(line);
    rows.emplace_back(tok.begin(), tok.end());
  }
  return rows;
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string padded_id(int64_t id) {
  std::ostringstream out;
  out << std::setw(5) << std::setfill('0') << id;
  return out.str();
}

}  // namespace

const AttributeSchema& AttributeSchema::synthetic() {
  static const AttributeSchema schema{{{
      {"lady", "man"},
      {"sleeveless", "short-sleeved", "long-sleeved"},
      {"red", "orange", "yellow", "green", "cyan", "blue", "purple", "pink"},
      {"blouse", "t-shirt", "dress", "romper"},
  }}};
  return schema;
}

int64_t AttributeSchema::index_of(AttributeSlot slot, std::string_view name) const {
  const auto& names = values[static_cast<size_t>(slot)];
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw ValidationError("unknown " + std::string(kAttributeNames[static_cast<size_t>(slot)]) +
                          " value '" + std::string(name) + "'");
  }
  return it - names.begin();
}

const std::string& AttributeSchema::name_of(AttributeSlot slot, int64_t index) const {
  const auto& names = values[static_cast<size_t>(slot)];
  if (index < 0 || index >= static_cast<int64_t>(names.size())) {
    throw ValidationError("unknown " + std::string(kAttributeNames[static_cast<size_t>(slot)]) +
                          " index " + std::to_string(index));
  }
  return names[static_cast<size_t>(index)];
}

torch::Tensor CaptionedSample::image() const { return pixels.to(torch::kFloat).div(127.5).sub(1.0); }

std::string caption_of(const Attributes& a, const AttributeSchema& schema) {
  return "the " + schema.name_of(AttributeSlot::gender, a[AttributeSlot::gender]) + " is wearing a " +
         schema.name_of(AttributeSlot::color, a[AttributeSlot::color]) + " " +
         schema.name_of(AttributeSlot::sleeve, a[AttributeSlot::sleeve]) + " " +
         schema.name_of(AttributeSlot::category, a[AttributeSlot::category]);
}

Attributes parse_caption(std::string_view caption, const AttributeSchema& schema) {
  const auto words = split_words(caption);
  if (words.size() != 8 || words[0] != "the" || words[2] != "is" || words[3] != "wearing" ||
      words[4] != "a") {
    throw ValidationError("caption does not follow the synthetic grammar: '" + std::string(caption) + "'");
  }
  Attributes a;
  a[AttributeSlot::gender] = schema.index_of(AttributeSlot::gender, words[1]);
  a[AttributeSlot::color] = schema.index_of(AttributeSlot::color, words[5]);
  a[AttributeSlot::sleeve] = schema.index_of(AttributeSlot::sleeve, words[6]);
  a[AttributeSlot::category] = schema.index_of(AttributeSlot::category, words[7]);
  return a;
}

std::array<uint8_t, 3> garment_rgb(int64_t color_index) {
  const auto& colors = AttributeSchema::synthetic().values[static_cast<size_t>(AttributeSlot::color)];
  if (color_index < 0 || color_index >= static_cast<int64_t>(colors.size())) {
    throw ValidationError("unknown color index " + std::to_string(color_index));
  }
  // Evenly spaced hues: 45 degrees apart for eight colors.
  return hsv_to_rgb(360.0 * static_cast<double>(color_index) / static_cast<double>(colors.size()), 0.85,
                    0.88);
}

SpriteBody SpriteBody::random(uint64_t seed, Resolution resolution) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int n) { return static_cast<int>(rng() % static_cast<uint64_t>(n)); };
  SpriteBody body;
  body.skin = pick(static_cast<int>(kSkin.size()));
  body.hair = pick(static_cast<int>(kHair.size()));
  body.pants = pick(static_cast<int>(kPants.size()));
  body.legwear = pick(static_cast<int>(kLegwear.size()));
  const int max_shift = static_cast<int>(std::max<int64_t>(1, resolution.width / 32));
  body.offset_px = pick(2 * max_shift + 1) - max_shift;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  body.background_hue = 360.0 * unit(rng);
  body.background_top = 0.82 + 0.13 * unit(rng);
  body.background_bottom = 0.72 + 0.13 * unit(rng);
  body.noise_seed = rng();
  return body;
}

Sprite render_sprite(const SpriteBody& body, const Attributes& a, Resolution resolution) {
  const auto& schema = AttributeSchema::synthetic();
  for (size_t s = 0; s < kAttributeCount; ++s) {
    schema.name_of(static_cast<AttributeSlot>(s), a.values[s]);  // validates
  }
  Canvas canvas(resolution, body.offset_px);
  const int h = canvas.height();
  const int w = canvas.width();

  // Background: vertical gradient with faint noise.
  std::mt19937_64 noise(body.noise_seed);
  for (int y = 0; y < h; ++y) {
    const double t = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
    const Rgb base = hsv_to_rgb(body.background_hue, 0.12,
                                body.background_top + t * (body.background_bottom - body.background_top));
    for (int x = 0; x < w; ++x) {
      const int jitter = static_cast<int>(noise() % 7) - 3;
      Rgb c;
      for (int k = 0; k < 3; ++k) c[k] = static_cast<uint8_t>(std::clamp(base[k] + jitter, 0, 255));
      canvas.put(x, y, c);
    }
  }

  const Rgb skin = kSkin[static_cast<size_t>(body.skin)];
  const Rgb legwear = body.legwear == 0 ? skin : kLegwear[static_cast<size_t>(body.legwear)];

  // Legs and shoes.
  canvas.rect(0.32, 0.56, 0.48, 0.94, legwear);
  canvas.rect(0.52, 0.56, 0.68, 0.94, legwear);
  canvas.rect(0.30, 0.94, 0.48, 0.97, kShoe);
  canvas.rect(0.52, 0.94, 0.70, 0.97, kShoe);
  // Bare arms and neck.
  canvas.rect(0.16, 0.25, 0.27, 0.58, skin);
  canvas.rect(0.73, 0.25, 0.84, 0.58, skin);
  canvas.rect(0.44, 0.19, 0.56, 0.25, skin);

  // Garment.
  const Rgb cloth = garment_rgb(a[AttributeSlot::color]);
  const Rgb detail = darker(cloth, 0.6);
  const auto category = a[AttributeSlot::category];
  canvas.rect(0.28, 0.24, 0.72, 0.56, cloth);
  if (category == 0) {  // blouse: V neck and a button line
    canvas.trapezoid(0.24, 0.33, 0.42, 0.58, 0.49, 0.51, skin);
    for (double v = 0.36; v < 0.55; v += 0.05) canvas.rect(0.48, v, 0.52, v + 0.02, detail);
  } else if (category == 1) {  // t-shirt: crew neck and a hem band
    canvas.rect(0.42, 0.24, 0.58, 0.26, skin);
    canvas.rect(0.28, 0.52, 0.72, 0.56, detail);
  }
  if (category == 0 || category == 1) {
    canvas.rect(0.30, 0.56, 0.70, 0.80, kPants[static_cast<size_t>(body.pants)]);
  } else if (category == 2) {  // dress: belt and flared skirt
    canvas.rect(0.28, 0.54, 0.72, 0.57, detail);
    canvas.trapezoid(0.57, 0.80, 0.29, 0.71, 0.26, 0.74, cloth);
  } else {  // romper: shorts with a leg split
    canvas.rect(0.30, 0.56, 0.70, 0.68, cloth);
    canvas.rect(0.49, 0.62, 0.51, 0.68, detail);
  }
  const auto sleeve = a[AttributeSlot::sleeve];
  if (sleeve >= 1) {
    const double end = sleeve == 1 ? 0.37 : 0.55;
    canvas.rect(0.16, 0.25, 0.28, end, cloth);
    canvas.rect(0.72, 0.25, 0.84, end, cloth);
  }

  // Head and hair; long hair for the lady, a short cap for the man.
  const Rgb hair = kHair[static_cast<size_t>(body.hair)];
  if (a[AttributeSlot::gender] == 0) {
    canvas.rect(0.33, 0.10, 0.40, 0.31, hair);
    canvas.rect(0.60, 0.10, 0.67, 0.31, hair);
  }
  canvas.ellipse(0.5, 0.12, 0.15, 0.075, skin);
  canvas.ellipse(0.5, 0.10, 0.16, 0.06, hair, 0.09);

  // Editable envelope: every pixel any garment can touch.
  canvas.mask_rect(0.28, 0.24, 0.72, 0.56);
  canvas.mask_rect(0.14, 0.25, 0.28, 0.58);
  canvas.mask_rect(0.72, 0.25, 0.86, 0.58);
  canvas.mask_rect(0.26, 0.56, 0.74, 0.80);

  return {canvas.pixels(), canvas.mask()};
}

DatasetSplit generate_synthetic(int64_t n, uint64_t seed, Resolution resolution) {
  if (n < 10) throw ValidationError("generate_synthetic: need n >= 10, got " + std::to_string(n));
  if (resolution.height < 16 || resolution.width < 8) {
    throw ValidationError("generate_synthetic: resolution too small");
  }
  const auto& schema = AttributeSchema::synthetic();
  std::vector<Attributes> combos;
  for (int64_t g = 0; g < schema.cardinality(AttributeSlot::gender); ++g)
    for (int64_t s = 0; s < schema.cardinality(AttributeSlot::sleeve); ++s)
      for (int64_t c = 0; c < schema.cardinality(AttributeSlot::color); ++c)
        for (int64_t k = 0; k < schema.cardinality(AttributeSlot::category); ++k)
          combos.push_back(Attributes{{g, s, c, k}});

  std::mt19937_64 rng(seed);
  std::vector<CaptionedSample> samples;
  samples.reserve(static_cast<size_t>(n));
  std::vector<Attributes> block;
  for (int64_t i = 0; i < n; ++i) {
    const auto slot = static_cast<size_t>(i) % combos.size();
    if (slot == 0) {
      block = combos;
      std::shuffle(block.begin(), block.end(), rng);
    }
    CaptionedSample sample;
    sample.id = i;
    sample.attributes = block[slot];
    sample.caption = caption_of(sample.attributes);
    const auto sprite = render_sprite(SpriteBody::random(rng(), resolution), sample.attributes, resolution);
    sample.pixels = sprite.pixels;
    sample.mask = sprite.mask;
    samples.push_back(std::move(sample));
  }

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto test_count = static_cast<size_t>(n / 10);
  std::vector<int64_t> test_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_count));
  std::sort(test_ids.begin(), test_ids.end());

  DatasetSplit split;
  split.schema = schema;
  split.resolution = resolution;
  std::vector<bool> is_test(static_cast<size_t>(n), false);
  for (auto id : test_ids) is_test[static_cast<size_t>(id)] = true;
  for (auto& sample : samples) {
    (is_test[static_cast<size_t>(sample.id)] ? split.test : split.train).push_back(std::move(sample));
  }
  return split;
}

void save_synthetic(const DatasetSplit& split, const std::filesystem::path& dir, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ofstream labels(dir / "labels.csv");
  if (!labels) throw IoError("cannot write " + (dir / "labels.csv").string());
  labels << "id,caption,gender,sleeve,color,category\n";

  std::vector<const CaptionedSample*> all;
  for (const auto& s : split.train) all.push_back(&s);
  for (const auto& s : split.test) all.push_back(&s);
  std::sort(all.begin(), all.end(), [](auto* a, auto* b) { return a->id < b->id; });

  json train_ids = json::array(), test_ids = json::array();
  for (const auto& s : split.train) train_ids.push_back(s.id);
  for (const auto& s : split.test) test_ids.push_back(s.id);

  for (const auto* s : all) {
    const auto name = padded_id(s->id) + ".png";
    write_image(dir / "images" / name, s->image());
    if (s->mask.defined()) write_heatmap(dir / "masks" / name, s->mask.to(torch::kFloat));
    labels << s->id << ',' << csv_quote(s->caption);
    for (size_t k = 0; k < kAttributeCount; ++k) {
      labels << ',' << csv_quote(split.schema.name_of(static_cast<AttributeSlot>(k), s->attributes.values[k]));
    }
    labels << '\n';
  }
  json manifest = {
      {"format", "filmedgan-synthetic-v1"},
      {"seed", seed},
      {"n", all.size()},
      {"resolution", {{"height", split.resolution.height}, {"width", split.resolution.width}}},
      {"split", {{"train", train_ids}, {"test", test_ids}}},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

DatasetSplit load_synthetic(const std::filesystem::path& dir) {
  std::ifstream manifest_in(dir / "manifest.json");
  if (!manifest_in) throw IoError("missing " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(manifest_in);
  } catch (const json::exception& e) {
    throw IoError("malformed manifest.json: " + std::string(e.what()));
  }
  DatasetSplit split;
  split.schema = AttributeSchema::synthetic();
  split.resolution = {manifest.at("resolution").at("height").get<int64_t>(),
                      manifest.at("resolution").at("width").get<int64_t>()};
  std::map<int64_t, bool> is_test;
  for (auto id : manifest.at("split").at("train")) is_test[id.get<int64_t>()] = false;
  for (auto id : manifest.at("split").at("test")) is_test[id.get<int64_t>()] = true;

  const auto rows = read_csv(dir / "labels.csv");
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 6) throw IoError("labels.csv line " + std::to_string(r + 1) + ": expected 6 columns");
    CaptionedSample s;
    s.id = std::stoll(row[0]);
    s.caption = row[1];
    for (size_t k = 0; k < kAttributeCount; ++k) {
      s.attributes.values[k] = split.schema.index_of(static_cast<AttributeSlot>(k), row[2 + k]);
    }
    const auto name = padded_id(s.id) + ".png";
    s.pixels = ((read_image(dir / "images" / name) + 1.0) * 127.5).round().to(torch::kUInt8);
    if (s.pixels.size(1) != split.resolution.height || s.pixels.size(2) != split.resolution.width) {
      throw IoError(name + " does not match the manifest resolution");
    }
    if (std::filesystem::exists(dir / "masks" / name)) {
      s.mask = read_gray(dir / "masks" / name).gt(0.5).to(torch::kUInt8);
    }
    const auto it = is_test.find(s.id);
    if (it == is_test.end()) throw IoError("sample " + std::to_string(s.id) + " is in no split");
    (it->second ? split.test : split.train).push_back(std::move(s));
  }
  return split;
}

DatasetSplit load_fashion_synthesis(const std::filesystem::path& dir, Resolution resolution) {
  namespace fs = std::filesystem;
  static const char* kLayout =
      "expected layout: images/<id>.png|.jpg, captions.csv (id,caption), "
      "attributes.csv (id,gender,sleeve,color,category), train.txt and test.txt (one id per line)";
  for (const char* required : {"images", "captions.csv", "attributes.csv", "train.txt", "test.txt"}) {
    if (!fs::exists(dir / required)) {
      throw IoError("Fashion Synthesis directory " + dir.string() + " lacks '" + required + "'; " + kLayout);
    }
  }

  std::map<std::string, std::string> captions;
  for (const auto& row : read_csv(dir / "captions.csv")) {
    if (row.size() >= 2 && row[0] != "id") captions[row[0]] = row[1];
  }
  std::map<std::string, std::array<std::string, kAttributeCount>> labels;
  DatasetSplit split;
  split.resolution = resolution;
  std::array<std::map<std::string, int64_t>, kAttributeCount> vocab;
  for (const auto& row : read_csv(dir / "attributes.csv")) {
    if (row.size() < 5 || row[0] == "id") continue;
    std::array<std::string, kAttributeCount> values;
    for (size_t k = 0; k < kAttributeCount; ++k) {
      values[k] = row[1 + k];
      vocab[k].emplace(values[k], 0);
    }
    labels[row[0]] = values;
  }
  // Label vocabularies are sorted for a stable index assignment.
  for (size_t k = 0; k < kAttributeCount; ++k) {
    int64_t next = 0;
    for (auto& [name, index] : vocab[k]) {
      index = next++;
      split.schema.values[k].push_back(name);
    }
  }

  auto read_ids = [&](const char* file) {
    std::ifstream in(dir / file);
    std::vector<std::string> ids;
    for (std::string id; in >> id;) ids.push_back(id);
    return ids;
  };
  auto load_one = [&](const std::string& id) {
    const auto caption = captions.find(id);
    const auto attrs = labels.find(id);
    if (caption == captions.end() || attrs == labels.end()) {
      throw IoError("sample '" + id + "' is missing a caption or attribute row; " + kLayout);
    }
    fs::path image = dir / "images" / (id + ".png");
    if (!fs::exists(image)) image = dir / "images" / (id + ".jpg");
    if (!fs::exists(image)) throw IoError("no image for sample '" + id + "'; " + kLayout);
    CaptionedSample s;
    try {
      s.id = std::stoll(id);
    } catch (const std::exception&) {
      s.id = -1;
    }
    s.caption = caption->second;
    for (size_t k = 0; k < kAttributeCount; ++k) s.attributes.values[k] = vocab[k].at(attrs->second[k]);
    s.pixels = ((read_image(image, resolution) + 1.0) * 127.5).round().to(torch::kUInt8);
    return s;
  };
  for (const auto& id : read_ids("train.txt")) split.train.push_back(load_one(id));
  for (const auto& id : read_ids("test.txt")) split.test.push_back(load_one(id));
  if (split.train.empty() && split.test.empty()) throw IoError("split files list no samples; " + std::string(kLayout));
  return split;
}

DatasetSplit load_dataset(const std::filesystem::path& dir, Resolution resolution) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  if (std::filesystem::exists(dir / "manifest.json")) return load_synthetic(dir);
  return load_fashion_synthesis(dir, resolution);
}

torch::Tensor stack_images(std::span<const CaptionedSample> samples) {
  std::vector<torch::Tensor> images;
  images.reserve(samples.size());
  for (const auto& s : samples) images.push_back(s.pixels);
  return torch::stack(images).to(torch::kFloat).div_(127.5).sub_(1.0);
}

torch::Tensor stack_images(std::span<const CaptionedSample> samples, std::span<const int64_t> indices) {
  std::vector<torch::Tensor> images;
  images.reserve(indices.size());
  for (auto i : indices) images.push_back(samples[static_cast<size_t>(i)].pixels);
  return torch::stack(images).to(torch::kFloat).div_(127.5).sub_(1.0);
}

}  // namespace filmedgan
