#pragma once

// Loading of the <root>/<view>/<class>/<image> tree. PNG goes through
// libpng (link PNG::PNG); binary PPM (P6, maxval 255) is parsed here.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "gemini/common.hpp"
#include "gemini/datapipe.hpp"

namespace gemini::data {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
};

inline RgbImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.string().c_str()) == 0) {
    throw InvalidInputError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr) == 0) {
    png_image_free(&image);
    throw InvalidInputError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0, nullptr) == 0) {
    throw Error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInputError("cannot open " + path.string());
  auto token = [&] {
    std::string t;
    char c = 0;
    while (is.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        t.push_back(c);
        break;
      }
    }
    while (is.get(c) && !std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    return t;
  };
  if (token() != "P6") throw InvalidInputError(path.string() + " is not a binary PPM (P6)");
  RgbImage out;
  out.width = std::stoi(token());
  out.height = std::stoi(token());
  if (std::stoi(token()) != 255) throw InvalidInputError(path.string() + ": only maxval 255 is supported");
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  is.read(reinterpret_cast<char*>(out.pixels.data()), static_cast<std::streamsize>(out.pixels.size()));
  if (!is) throw InvalidInputError(path.string() + ": truncated pixel data");
  return out;
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline bool is_supported_image(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm";
}

inline RgbImage read_image(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" ? read_png(p) : read_ppm(p);
}

/// Reads <root>/<view>/<class>/* for every class in `classes`. Image ids are
/// "<view>_<class>_<file stem>"; files are visited in name order.
inline std::vector<SourceImage> load_image_tree(const std::filesystem::path& root, View view, const ClassSet& classes) {
  const auto view_dir = root / to_string(view);
  if (!std::filesystem::is_directory(view_dir)) throw ConfigError("missing view directory " + view_dir.string());
  std::vector<SourceImage> out;
  for (const auto& name : classes.names()) {
    const auto dir = view_dir / name;
    if (!std::filesystem::is_directory(dir)) throw ConfigError("missing class directory for class " + name + ": " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_regular_file() && is_supported_image(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      RgbImage rgb = read_image(f);
      SourceImage img;
      img.image_id = to_string(view) + "_" + name + "_" + f.stem().string();
      img.width = rgb.width;
      img.height = rgb.height;
      img.pixels = std::move(rgb.pixels);
      img.label = classes.label(name);
      img.view = view;
      out.push_back(std::move(img));
    }
  }
  return out;
}

}  // namespace gemini::data
