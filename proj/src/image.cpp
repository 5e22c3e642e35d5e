#include "aqa/image.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "aqa/error.hpp"

namespace aqa {

std::array<float, 3> Image::channel_mean() const {
  std::array<double, 3> acc{0.0, 0.0, 0.0};
  const std::size_t n = data.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) acc[c] += data[i * 3 + c];
  }
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c) out[c] = n ? static_cast<float>(acc[c] / static_cast<double>(n)) : 0.0f;
  return out;
}

BBox CropAffine::to_patch_box(const PixelBox& b, int out_size) const {
  const auto [u, v] = to_patch(b.cx(), b.cy());
  const double n = out_size;
  return {u / n, v / n, b.w * s / n, b.h * s / n};
}

PixelBox CropAffine::to_image_box(const BBox& b, int out_size) const {
  const double n = out_size;
  const auto [x, y] = to_image(b.cx * n, b.cy * n);
  return PixelBox::from_center({x, y, b.w * n / s, b.h * n / s});
}

Crop crop_square(const Image& image, double cx, double cy, double side, int out_size) {
  if (!(side > 0.0) || !std::isfinite(side)) throw ContractError("crop: side must be positive, got " + std::to_string(side));
  if (out_size <= 0) throw ContractError("crop: output size must be positive");
  if (image.empty()) throw ContractError("crop: empty image");
  Crop crop;
  crop.affine = {cx - 0.5 * side, cy - 0.5 * side, out_size / side};
  crop.patch = Image(out_size, out_size);
  const std::array<float, 3> mean = image.channel_mean();
  const int w = image.width, h = image.height;
  const auto sample = [&](int x, int y, int c) {
    return (x < 0 || y < 0 || x >= w || y >= h) ? mean[c] : image.at(x, y, c);
  };
  for (int j = 0; j < out_size; ++j) {
    const double fy = (j + 0.5) / crop.affine.s + crop.affine.y0 - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double ty = fy - y0;
    for (int i = 0; i < out_size; ++i) {
      const double fx = (i + 0.5) / crop.affine.s + crop.affine.x0 - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - tx) * sample(x0, y0, c) + tx * sample(x0 + 1, y0, c);
        const double bottom = (1 - tx) * sample(x0, y0 + 1, c) + tx * sample(x0 + 1, y0 + 1, c);
        crop.patch.at(i, j, c) = static_cast<float>((1 - ty) * top + ty * bottom);
      }
    }
  }
  return crop;
}

Crop crop_resize(const Image& image, const BBox& center, double area_factor, int out_size) {
  if (!(area_factor > 0.0)) throw ContractError("crop_resize: area factor must be positive");
  if (!(center.w > 0.0) || !(center.h > 0.0)) {
    throw ContractError("crop_resize: degenerate base box " + std::to_string(center.w) + "x" + std::to_string(center.h));
  }
  return crop_square(image, center.cx, center.cy, area_factor * std::sqrt(center.w * center.h), out_size);
}

Tensor to_tensor(const Image& image) {
  std::vector<double> v(image.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (image.data[i] - 0.5) / 0.25;
  return Tensor({image.height, image.width, 3}, std::move(v));
}

Image flip_horizontal(const Image& image) {
  Image out(image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
    }
  }
  return out;
}

Image scale_brightness(const Image& image, double factor) {
  Image out = image;
  if (factor == 1.0) return out;
  for (float& v : out.data) v = std::clamp(static_cast<float>(v * factor), 0.0f, 1.0f);
  return out;
}

PixelBox clamp_box(const PixelBox& b, int width, int height) {
  const double x1 = std::clamp(b.x, 0.0, static_cast<double>(width));
  const double y1 = std::clamp(b.y, 0.0, static_cast<double>(height));
  const double x2 = std::clamp(b.x + b.w, 0.0, static_cast<double>(width));
  const double y2 = std::clamp(b.y + b.h, 0.0, static_cast<double>(height));
  return {x1, y1, x2 - x1, y2 - y1};
}

void draw_box(Image& image, const PixelBox& b, std::array<float, 3> color) {
  const int x1 = static_cast<int>(std::floor(b.x)), x2 = static_cast<int>(std::ceil(b.x + b.w)) - 1;
  const int y1 = static_cast<int>(std::floor(b.y)), y2 = static_cast<int>(std::ceil(b.y + b.h)) - 1;
  const auto put = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= image.width || y >= image.height) return;
    for (int c = 0; c < 3; ++c) image.at(x, y, c) = color[c];
  };
  for (int x = x1; x <= x2; ++x) {
    put(x, y1);
    put(x, y2);
  }
  for (int y = y1; y <= y2; ++y) {
    put(x1, y);
    put(x2, y);
  }
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image.data[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (ppm_token(in) != "P6") throw IoError(path.string() + ": not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ppm_token(in));
    h = std::stoi(ppm_token(in));
    maxval = std::stoi(ppm_token(in));
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError(path.string() + ": unsupported PPM geometry or depth");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError(path.string() + ": truncated pixel data");
  Image img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0f;
  return img;
}

}  // namespace aqa
