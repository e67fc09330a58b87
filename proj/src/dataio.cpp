#include "r2seg/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <unordered_map>

namespace fs = std::filesystem;

namespace r2seg {

namespace {

constexpr const char* kMaskSuffix = "_mask";

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& is, const fs::path& path) {
  std::string tok;
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string ignored;
      std::getline(is, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(ch);
  }
  if (tok.empty()) throw DataError("malformed PGM (short header): " + path.string());
  return tok;
}

std::size_t pgm_number(std::istream& is, const fs::path& path) {
  const std::string tok = pgm_token(is, path);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit)) {
    throw DataError("malformed PGM header field '" + tok + "': " +
                    path.string());
  }
  return std::stoul(tok);
}

}  // namespace

void SampleSet::add(std::string id, Tensor4 image, Tensor4 mask) {
  if (image.shape() != mask.shape()) {
    throw DataError("sample '" + id + "': image " + to_string(image.shape()) +
                    " and mask " + to_string(mask.shape()) + " differ");
  }
  ids.push_back(std::move(id));
  images.push_back(std::move(image));
  masks.push_back(std::move(mask));
}

SampleSet SampleSet::subset(const std::vector<std::string>& wanted) const {
  std::unordered_map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < ids.size(); ++i) where.emplace(ids[i], i);
  SampleSet out;
  for (const auto& id : wanted) {
    auto it = where.find(id);
    if (it == where.end()) throw DataError("unknown sample id '" + id + "'");
    out.add(id, images[it->second], masks[it->second]);
  }
  return out;
}

// ------------------------------------------------------------------- PGM

Tensor4 read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open PGM: " + path.string());
  if (pgm_token(is, path) != "P5") {
    throw DataError("malformed PGM (expected P5 magic): " + path.string());
  }
  const std::size_t w = pgm_number(is, path);
  const std::size_t h = pgm_number(is, path);
  const std::size_t maxval = pgm_number(is, path);
  if (w == 0 || h == 0) throw DataError("PGM has zero size: " + path.string());
  if (maxval == 0 || maxval > 255) {
    throw DataError("PGM maxval must be in 1..255 (8-bit): " + path.string());
  }
  std::vector<unsigned char> bytes(w * h);
  if (!is.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()))) {
    throw DataError("malformed PGM (truncated pixels): " + path.string());
  }
  Tensor4 t(Shape4{1, 1, h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    t[i] = double(bytes[i]) / double(maxval);
  }
  return t;
}

void write_pgm(const fs::path& path, const Tensor4& image) {
  const auto& s = image.shape();
  if (s.n != 1 || s.c != 1) {
    throw ShapeError("write_pgm: expected a (1,1,h,w) tensor");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write PGM: " + path.string());
  os << "P5\n" << s.w << ' ' << s.h << "\n255\n";
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(
        std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing PGM: " + path.string());
}

// --------------------------------------------------------------- dataset

SampleSet load_dataset(const fs::path& dir) {
  const fs::path image_dir = dir / "images";
  const fs::path mask_dir = dir / "masks";
  if (!fs::is_directory(image_dir) || !fs::is_directory(mask_dir)) {
    throw DataError("dataset directory must contain images/ and masks/: " +
                    dir.string());
  }
  std::set<std::string> image_ids, mask_ids;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    if (e.path().extension() == ".pgm") image_ids.insert(e.path().stem().string());
  }
  const std::string suffix = kMaskSuffix;
  for (const auto& e : fs::directory_iterator(mask_dir)) {
    if (e.path().extension() != ".pgm") continue;
    std::string stem = e.path().stem().string();
    if (stem.size() <= suffix.size() ||
        stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) != 0) {
      throw DataError("mask file without _mask suffix: " + e.path().string());
    }
    mask_ids.insert(stem.substr(0, stem.size() - suffix.size()));
  }
  for (const auto& id : image_ids) {
    if (!mask_ids.count(id)) {
      throw DataError("orphan image '" + id + "': missing masks/" + id +
                      "_mask.pgm");
    }
  }
  for (const auto& id : mask_ids) {
    if (!image_ids.count(id)) {
      throw DataError("orphan mask '" + id + "': missing images/" + id +
                      ".pgm");
    }
  }
  if (image_ids.empty()) throw DataError("dataset is empty: " + dir.string());

  SampleSet set;
  for (const auto& id : image_ids) {
    Tensor4 image = read_pgm(image_dir / (id + ".pgm"));
    Tensor4 raw = read_pgm(mask_dir / (id + suffix + ".pgm"));
    if (raw.shape() != image.shape()) {
      throw DataError("size mismatch for '" + id + "': image " +
                      to_string(image.shape()) + ", mask " +
                      to_string(raw.shape()));
    }
    // Back to 8-bit levels (exact for maxval 255) before thresholding.
    for (double& v : raw.data()) v = std::round(v * 255.0) > 127.0 ? 1.0 : 0.0;
    set.add(id, std::move(image), std::move(raw));
  }
  return set;
}

void save_dataset(const SampleSet& set, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) throw DataError("cannot create dataset directory: " + dir.string());
  for (std::size_t i = 0; i < set.size(); ++i) {
    write_pgm(dir / "images" / (set.ids[i] + ".pgm"), set.images[i]);
    write_pgm(dir / "masks" / (set.ids[i] + kMaskSuffix + ".pgm"),
              set.masks[i]);
  }
}

// ---------------------------------------------------------------- resize

Tensor4 resize(const Tensor4& x, std::size_t out_h, std::size_t out_w,
               Interp kind) {
  const auto& s = x.shape();
  if (out_h == 0 || out_w == 0) throw ShapeError("resize: target dims must be >= 1");
  Tensor4 y(Shape4{s.n, s.c, out_h, out_w});
  const double sy = double(s.h) / double(out_h);
  const double sx = double(s.w) / double(out_w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = x.plane(n, c);
      double* dst = y.plane(n, c);
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          if (kind == Interp::nearest) {
            const auto iy = std::min(s.h - 1, std::size_t((oy + 0.5) * sy));
            const auto ix = std::min(s.w - 1, std::size_t((ox + 0.5) * sx));
            dst[oy * out_w + ox] = src[iy * s.w + ix];
            continue;
          }
          const double fy =
              std::clamp((oy + 0.5) * sy - 0.5, 0.0, double(s.h - 1));
          const double fx =
              std::clamp((ox + 0.5) * sx - 0.5, 0.0, double(s.w - 1));
          const auto y0 = std::size_t(fy);
          const auto x0 = std::size_t(fx);
          const std::size_t y1 = std::min(y0 + 1, s.h - 1);
          const std::size_t x1 = std::min(x0 + 1, s.w - 1);
          const double wy = fy - double(y0);
          const double wx = fx - double(x0);
          const double top =
              src[y0 * s.w + x0] * (1 - wx) + src[y0 * s.w + x1] * wx;
          const double bottom =
              src[y1 * s.w + x0] * (1 - wx) + src[y1 * s.w + x1] * wx;
          dst[oy * out_w + ox] = top * (1 - wy) + bottom * wy;
        }
      }
    }
  }
  return y;
}

SampleSet resize_set(const SampleSet& set, std::size_t h, std::size_t w) {
  SampleSet out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& s = set.images[i].shape();
    if (s.h == h && s.w == w) {
      out.add(set.ids[i], set.images[i], set.masks[i]);
    } else {
      out.add(set.ids[i], resize(set.images[i], h, w, Interp::bilinear),
              resize(set.masks[i], h, w, Interp::nearest));
    }
  }
  return out;
}

// ----------------------------------------------------------------- split

SplitIndices split(const SampleSet& set, std::array<double, 3> fractions,
                   std::uint64_t seed) {
  if (set.empty()) throw DataError("split: empty sample set");
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 ||
      std::any_of(fractions.begin(), fractions.end(),
                  [](double f) { return f < 0.0; })) {
    throw ConfigError("split: fractions must be non-negative and sum to 1");
  }
  std::vector<std::string> order = set.ids;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t n = order.size();
  const auto n_test = std::min<std::size_t>(n, std::llround(fractions[2] * n));
  const auto n_val =
      std::min<std::size_t>(n - n_test, std::llround(fractions[1] * n));
  const std::size_t n_train = n - n_test - n_val;

  SplitIndices s;
  s.seed = seed;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

nlohmann::json to_json(const SplitIndices& s) {
  return nlohmann::json{
      {"seed", s.seed}, {"train", s.train}, {"val", s.val}, {"test", s.test}};
}

SplitIndices split_from_json(const nlohmann::json& j) {
  try {
    SplitIndices s;
    s.seed = j.value("seed", std::uint64_t{0});
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed split.json: ") + e.what());
  }
}

void write_split(const fs::path& path, const SplitIndices& s) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << to_json(s).dump(2) << "\n";
}

SplitIndices read_split(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return split_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed " + path.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------- synthetic

double Ellipse::eval(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double u = (c * dx + s * dy) / a;
  const double v = (-s * dx + c * dy) / b;
  return u * u + v * v;
}

std::vector<Ellipse> synth_ellipses(std::size_t index, std::size_t size,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 2 * index));
  std::uniform_int_distribution<int> count(1, 3);
  std::uniform_real_distribution<double> centre(0.2 * size, 0.8 * size);
  std::uniform_real_distribution<double> axis(0.08 * size, 0.22 * size);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> bright(0.6, 0.9);
  std::vector<Ellipse> out(std::size_t(count(rng)));
  for (auto& e : out) {
    e.cx = centre(rng);
    e.cy = centre(rng);
    e.a = std::max(1.0, axis(rng));
    e.b = std::max(1.0, axis(rng));
    e.theta = angle(rng);
    e.intensity = bright(rng);
  }
  return out;
}

SampleSet synth_generate(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size == 0) throw ConfigError("synth_generate: size must be >= 1");
  constexpr double kBackground = 0.1;
  constexpr double kNoise = 0.05;
  SampleSet set;
  const int width = std::max<int>(4, int(std::to_string(n).size()));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ellipses = synth_ellipses(i, size, seed);
    std::mt19937_64 rng(mix_seed(seed, 2 * i + 1));
    std::normal_distribution<double> noise(0.0, kNoise);
    Tensor4 image(Shape4{1, 1, size, size});
    Tensor4 mask(Shape4{1, 1, size, size});
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        double v = kBackground;
        bool inside = false;
        for (const auto& e : ellipses) {
          if (e.eval(x + 0.5, y + 0.5) <= 1.0) {
            inside = true;
            v = std::max(v, e.intensity);
          }
        }
        image.at(0, 0, y, x) = std::clamp(v + noise(rng), 0.0, 1.0);
        mask.at(0, 0, y, x) = inside ? 1.0 : 0.0;
      }
    }
    std::string num = std::to_string(i);
    num.insert(0, std::size_t(std::max(0, width - int(num.size()))), '0');
    set.add("synth_" + num, std::move(image), std::move(mask));
  }
  return set;
}

}  // namespace r2seg
