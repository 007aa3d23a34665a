#include "xvfg/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace xvfg {
namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string next_token(const std::vector<char>& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) tok += buf[pos++];
  return tok;
}

int parse_header_int(const std::vector<char>& buf, std::size_t& pos, const std::string& what,
                     const std::filesystem::path& path) {
  const std::string tok = next_token(buf, pos);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw DataError(path.string() + ": bad PPM " + what + " '" + tok + "'");
  }
  return std::stoi(tok);
}

}  // namespace

Image8 read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  const std::string magic = next_token(buf, pos);
  if (magic == "P5" || magic == "P2") {
    throw DataError(path.string() + ": wrong channel count (grayscale PGM, expected 3-channel RGB)");
  }
  if (magic != "P6") throw DataError(path.string() + ": not a binary PPM (magic '" + magic + "')");
  Image8 img;
  img.width = parse_header_int(buf, pos, "width", path);
  img.height = parse_header_int(buf, pos, "height", path);
  const int maxval = parse_header_int(buf, pos, "maxval", path);
  if (maxval != 255) throw DataError(path.string() + ": unsupported maxval " + std::to_string(maxval));
  if (img.width <= 0 || img.height <= 0) throw DataError(path.string() + ": empty image");
  ++pos;  // single whitespace byte after maxval
  const std::size_t bytes = static_cast<std::size_t>(img.width) * img.height * 3;
  if (pos > buf.size() || buf.size() - pos < bytes) {
    throw DataError(path.string() + ": truncated pixel data (" +
                    std::to_string(pos > buf.size() ? 0 : buf.size() - pos) + " of " +
                    std::to_string(bytes) + " bytes)");
  }
  img.rgb.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                 buf.begin() + static_cast<std::ptrdiff_t>(pos + bytes));
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image8& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw DataError("failed writing image " + path.string());
}

Image8 tensor_to_image(const Tensor& t) {
  const Shape s = t.shape();
  if (s.n != 1 || s.c != 3) {
    throw DataError("wrong channel count: image tensor must be [1,3,H,W], got " + s.str());
  }
  Image8 img;
  img.width = s.w;
  img.height = s.h;
  img.rgb.resize(static_cast<std::size_t>(s.w) * s.h * 3);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) {
        // std::round rounds halves away from zero.
        const double v = std::round((t.at(0, c, y, x) + 1.0) * 127.5);
        img.pixel(x, y)[c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  return img;
}

Tensor image_to_tensor(const Image8& image) {
  Tensor t(Shape{1, 3, image.height, image.width});
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = image.pixel(x, y)[c] / 127.5 - 1.0;
  return t;
}

void encode_image(const Tensor& t, const std::filesystem::path& path) {
  write_ppm(path, tensor_to_image(t));
}

Tensor decode_image(const std::filesystem::path& path) { return image_to_tensor(read_ppm(path)); }

Tensor resize_bilinear(const Tensor& t, int height, int width) {
  const Shape s = t.shape();
  if (s.h == height && s.w == width) return t;
  Tensor out(Shape{s.n, s.c, height, width});
  const double sy = static_cast<double>(s.h) / height;
  const double sx = static_cast<double>(s.w) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(s.h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, s.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(s.w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, s.w - 1);
      const double wx = fx - x0;
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const double top = (1.0 - wx) * t.at(n, c, y0, x0) + wx * t.at(n, c, y0, x1);
          const double bottom = (1.0 - wx) * t.at(n, c, y1, x0) + wx * t.at(n, c, y1, x1);
          out.at(n, c, y, x) = (1.0 - wy) * top + wy * bottom;
        }
    }
  }
  return out;
}

Tensor make_grid(const std::vector<std::vector<Tensor>>& rows) {
  if (rows.empty() || rows[0].empty()) throw ShapeError("make_grid: no panels");
  const Shape p = rows[0][0].shape();
  const int cols = static_cast<int>(rows[0].size());
  Tensor out(Shape{1, p.c, p.h * static_cast<int>(rows.size()), p.w * cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int>(rows[r].size()) != cols) throw ShapeError("make_grid: ragged rows");
    for (int col = 0; col < cols; ++col) {
      const Tensor& panel = rows[r][static_cast<std::size_t>(col)];
      if (panel.shape() != p) {
        throw ShapeError("make_grid: panel " + panel.shape().str() + " vs " + p.str());
      }
      for (int c = 0; c < p.c; ++c)
        for (int y = 0; y < p.h; ++y)
          for (int x = 0; x < p.w; ++x) {
            out.at(0, c, static_cast<int>(r) * p.h + y, col * p.w + x) = panel.at(0, c, y, x);
          }
    }
  }
  return out;
}

}  // namespace xvfg
