// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0

#include <png.h>

#include <cstring>
#include <vector>

#include "nag/io.h"

namespace nag {

Image read_png(const std::string& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  NAG_CHECK(png_image_begin_read_from_file(&pi, path.c_str()) != 0,
            "cannot read PNG '" + path + "': " + pi.message);
  int channels;
  if (pi.format & PNG_FORMAT_FLAG_ALPHA) {
    pi.format = PNG_FORMAT_RGBA;
    channels = 4;
  } else if (pi.format & PNG_FORMAT_FLAG_COLOR) {
    pi.format = PNG_FORMAT_RGB;
    channels = 3;
  } else {
    pi.format = PNG_FORMAT_GRAY;
    channels = 1;
  }
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw Error("cannot decode PNG '" + path + "': " + msg);
  }
  Image img;
  img.resize(int(pi.width), int(pi.height), channels);
  for (size_t i = 0; i < buf.size(); ++i) img.v[i] = buf[i] / 255.0;
  return img;
}

void write_png(const std::string& path, const Image& img) {
  NAG_CHECK(img.c == 1 || img.c == 3 || img.c == 4, "PNG writer expects 1, 3 or 4 channels");
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = png_uint_32(img.w);
  pi.height = png_uint_32(img.h);
  pi.format = img.c == 1 ? PNG_FORMAT_GRAY : (img.c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_RGBA);
  std::vector<uint8_t> buf(img.v.size());
  for (size_t i = 0; i < buf.size(); ++i) {
    double v = img.v[i];
    v = v < 0 ? 0 : (v > 1 ? 1 : v);
    buf[i] = uint8_t(v * 255.0 + 0.5);
  }
  NAG_CHECK(png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr) != 0,
            "cannot write PNG '" + path + "': " + pi.message);
}

}  // namespace nag
