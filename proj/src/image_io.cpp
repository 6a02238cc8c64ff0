#include "moes/image_io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "moes/error.hpp"

namespace moes {

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& path, const std::string& header, const void* data, std::size_t bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << header;
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

// Header tokenizer shared by PNM and PFM: whitespace separated, '#' comments
// to end of line.
class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  std::string token(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_]) && bytes_[pos_] != '#') ++pos_;
    if (pos_ == start) throw FormatError(std::string("missing ") + what, start);
    return std::string(bytes_.begin() + static_cast<std::ptrdiff_t>(start),
                       bytes_.begin() + static_cast<std::ptrdiff_t>(pos_));
  }

  std::size_t positive(const char* what) {
    const std::size_t at = next_offset();
    const std::string t = token(what);
    std::size_t v = 0;
    for (char c : t) {
      if (!std::isdigit(static_cast<unsigned char>(c))) throw FormatError(std::string("non-numeric ") + what, at);
      v = v * 10 + static_cast<std::size_t>(c - '0');
      if (v > (1u << 24)) throw FormatError(std::string("implausible ") + what, at);
    }
    if (v == 0) throw FormatError(std::string("zero ") + what, at);
    return v;
  }

  // Consumes the single whitespace byte that ends a header.
  void end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw FormatError("header not terminated", pos_);
    ++pos_;
  }

  std::size_t offset() const { return pos_; }

 private:
  std::size_t next_offset() {
    skip_space_and_comments();
    return pos_;
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

void require_chw(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw UsageError(std::string(what) + " expects a [C,H,W] tensor, got " + shape_to_string(t.shape()));
}

}  // namespace

double quantize_8bit(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return std::round(c * 255.0) / 255.0;
}

Tensor read_image_pgm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  HeaderReader header(bytes);
  const std::string magic = header.token("magic number");
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw FormatError("unsupported netpbm magic '" + magic + "'", 0);
  }
  const std::size_t width = header.positive("width");
  const std::size_t height = header.positive("height");
  const std::size_t maxval_at = header.offset();
  const std::size_t maxval = header.positive("maxval");
  if (maxval != 255) throw FormatError("maxval must be 255, got " + std::to_string(maxval), maxval_at);
  header.end_of_header();
  const std::size_t start = header.offset();
  const std::size_t needed = width * height * channels;
  if (bytes.size() - start < needed) {
    throw FormatError("pixel data truncated: need " + std::to_string(needed) + " bytes, have " +
                          std::to_string(bytes.size() - start),
                      bytes.size());
  }
  Tensor out({channels, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        out[(c * height + y) * width + x] = bytes[start + (y * width + x) * channels + c] / 255.0;
      }
    }
  }
  return out;
}

void write_image_pgm(const std::filesystem::path& path, const Tensor& image) {
  require_chw(image, "write_image_pgm");
  const std::size_t channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  if (channels != 1 && channels != 3) throw UsageError("write_image_pgm supports 1 or 3 channels");
  std::vector<unsigned char> data(channels * height * width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        data[(y * width + x) * channels + c] =
            static_cast<unsigned char>(std::lround(quantize_8bit(image[(c * height + y) * width + x]) * 255.0));
      }
    }
  }
  std::ostringstream header;
  header << (channels == 1 ? "P5" : "P6") << '\n' << width << ' ' << height << "\n255\n";
  spit(path, header.str(), data.data(), data.size());
}

static_assert(std::endian::native == std::endian::little, "PFM IO assumes a little-endian host");

Tensor read_density_pfm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  HeaderReader header(bytes);
  const std::string magic = header.token("magic number");
  if (magic == "PF") throw FormatError("color PFM has 3 channels; density maps must be grayscale", 0);
  if (magic != "Pf") throw FormatError("unsupported PFM magic '" + magic + "'", 0);
  const std::size_t width = header.positive("width");
  const std::size_t height = header.positive("height");
  const std::size_t scale_at = header.offset();
  const std::string scale_text = header.token("scale");
  double scale = 0.0;
  try {
    std::size_t used = 0;
    scale = std::stod(scale_text, &used);
    if (used != scale_text.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw FormatError("malformed PFM scale '" + scale_text + "'", scale_at);
  }
  if (!(scale < 0.0)) throw FormatError("only little-endian PFM (negative scale) is supported", scale_at);
  header.end_of_header();
  const std::size_t start = header.offset();
  const std::size_t needed = width * height * sizeof(float);
  if (bytes.size() - start < needed) throw FormatError("PFM data truncated", bytes.size());
  Tensor out({1, height, width});
  for (std::size_t row = 0; row < height; ++row) {
    const std::size_t y = height - 1 - row;
    for (std::size_t x = 0; x < width; ++x) {
      float v;
      std::memcpy(&v, bytes.data() + start + (row * width + x) * sizeof(float), sizeof(float));
      out[y * width + x] = static_cast<double>(v);
    }
  }
  return out;
}

void write_density_pfm(const std::filesystem::path& path, const Tensor& map) {
  require_chw(map, "write_density_pfm");
  if (map.dim(0) != 1) throw UsageError("write_density_pfm expects a single-channel map");
  const std::size_t height = map.dim(1), width = map.dim(2);
  std::vector<float> data(height * width);
  for (std::size_t row = 0; row < height; ++row) {
    const std::size_t y = height - 1 - row;
    for (std::size_t x = 0; x < width; ++x) data[row * width + x] = static_cast<float>(map[y * width + x]);
  }
  std::ostringstream header;
  header << "Pf\n" << width << ' ' << height << "\n-1.0\n";
  spit(path, header.str(), data.data(), data.size() * sizeof(float));
}

}  // namespace moes
