#include "rowpilot/image.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>

namespace rowpilot {

Image::Image(int width, int height, int channels, std::uint8_t fill)
    : width_(width), height_(height), channels_(channels) {
  if (width < 1 || height < 1) throw std::invalid_argument("image dimensions must be >= 1");
  if (channels != 1 && channels != 3) throw std::invalid_argument("image must have 1 or 3 channels");
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

Mask::Mask(int width, int height, bool fill) : width_(width), height_(height) {
  if (width < 1 || height < 1) throw std::invalid_argument("mask dimensions must be >= 1");
  data_.assign(static_cast<std::size_t>(width) * height, fill ? 255 : 0);
}

Mask::Mask(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width < 1 || height < 1) throw std::invalid_argument("mask dimensions must be >= 1");
  if (data_.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("mask data size mismatch");
  for (auto v : data_)
    if (v != 0 && v != 255) throw std::invalid_argument("mask sample outside {0,255}");
}

Mask Mask::from_image(const Image& img) {
  if (img.channels() != 1) throw std::invalid_argument("mask requires a single-channel image");
  return Mask(img.width(), img.height(),
              std::vector<std::uint8_t>(img.data().begin(), img.data().end()));
}

Image Mask::to_image() const {
  Image out(width_, height_, 1);
  std::copy(data_.begin(), data_.end(), out.data().begin());
  return out;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{255}));
}

Mask Mask::complement() const {
  Mask out = *this;
  for (auto& v : out.data_) v = static_cast<std::uint8_t>(255 - v);
  return out;
}

bool HsvBand::valid() const {
  static constexpr std::array<int, 3> kMax{179, 255, 255};
  for (int i = 0; i < 3; ++i) {
    if (low[i] < 0 || high[i] > kMax[i] || low[i] > high[i]) return false;
  }
  return true;
}

HsvRange::HsvRange(std::vector<HsvBand> bands) : bands_(std::move(bands)) {
  if (bands_.empty()) throw std::invalid_argument("HsvRange needs at least one band");
  for (const auto& b : bands_)
    if (!b.valid()) throw std::invalid_argument("HsvRange band out of bounds or inverted");
}

HsvRange HsvRange::green_crop() { return HsvRange({HsvBand{{21, 43, 46}, {77, 255, 172}}}); }

HsvRange HsvRange::red_sun() { return HsvRange({HsvBand{{139, 22, 154}, {172, 143, 255}}}); }

HsvRange HsvRange::red_backlight() { return HsvRange({HsvBand{{0, 0, 61}, {179, 89, 255}}}); }

HsvRange HsvRange::red_trial() {
  return HsvRange({HsvBand{{0, 0, 0}, {30, 255, 255}}, HsvBand{{160, 0, 0}, {179, 255, 255}}});
}

HsvRange HsvRange::blue_header() { return HsvRange({HsvBand{{100, 60, 40}, {130, 255, 255}}}); }

namespace {

class PnmReader {
 public:
  explicit PnmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  // Next whitespace-delimited header token, skipping '#' comments.
  std::string token() {
    for (;;) {
      while (pos_ < bytes_.size() && std::isspace(bytes_[pos_])) ++pos_;
      if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
        continue;
      }
      break;
    }
    std::string out;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) out.push_back(static_cast<char>(bytes_[pos_++]));
    if (out.empty()) throw std::runtime_error("truncated PNM header");
    return out;
  }

  int integer() {
    const auto t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      throw std::runtime_error("malformed PNM header field '" + t + "'");
    return std::stoi(t);
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::span<const std::uint8_t> raster() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw std::runtime_error("truncated PNM header");
    return bytes_.subspan(pos_ + 1);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  PnmReader r(bytes);
  const auto magic = r.token();
  int channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw std::runtime_error("unsupported PNM magic '" + magic + "'");
  const int w = r.integer();
  const int h = r.integer();
  const int maxval = r.integer();
  if (maxval != 255) throw std::runtime_error("only maxval 255 is supported");
  if (w < 1 || h < 1) throw std::runtime_error("PNM dimensions must be >= 1");
  auto raster = r.raster();
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (raster.size() < need) throw std::runtime_error("truncated PNM raster");
  Image img(w, h, channels);
  std::copy_n(raster.begin(), need, img.data().begin());
  return img;
}

std::vector<std::uint8_t> encode_pnm(const Image& img) {
  if (img.empty()) throw std::invalid_argument("cannot encode an empty image");
  const std::string header = (img.channels() == 3 ? "P6\n" : "P5\n") + std::to_string(img.width()) +
                             " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data().begin(), img.data().end());
  return out;
}

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pnm(bytes);
}

void write_pnm(const std::string& path, const Image& img) {
  const auto bytes = encode_pnm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to '" + path + "'");
}

}  // namespace rowpilot
