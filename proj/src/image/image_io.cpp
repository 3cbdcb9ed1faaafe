#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cervifuse/common/error.hpp"
#include "cervifuse/image/image.hpp"

namespace cervifuse {
namespace {

cv::Mat to_mat(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw InvalidParameter("only 1- or 3-channel images can be encoded");
  cv::Mat m(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3,
            const_cast<std::uint8_t*>(img.pixels.data()));
  if (img.channels == 1) return m.clone();
  cv::Mat bgr;
  cv::cvtColor(m, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DecodeError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Image img(rgb.cols, rgb.rows, 3);
  for (int y = 0; y < rgb.rows; ++y) {
    std::copy_n(rgb.ptr<std::uint8_t>(y), static_cast<std::size_t>(rgb.cols) * 3, img.pixels.data() + img.index(0, y, 0));
  }
  return img;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", to_mat(img), buf, {cv::IMWRITE_PNG_COMPRESSION, 6})) throw IoError("PNG encoding failed");
  return buf;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  const auto buf = encode_png(img);
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw IoError("cannot write " + path.string());
  const bool ok = std::fwrite(buf.data(), 1, buf.size(), f) == buf.size();
  std::fclose(f);
  if (!ok) throw IoError("short write to " + path.string());
}

}  // namespace cervifuse
