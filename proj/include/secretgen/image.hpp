#pragma once

#include <Eigen/Dense>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "secretgen/core.hpp"

namespace secretgen {

// H x W x C image with values in [-1, 1], stored channel-major (CHW) in a
// single column vector so it drops straight into the autodiff layer.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  Eigen::VectorXd values;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c)
      : height(h), width(w), channels(c), values(Eigen::VectorXd::Zero(Eigen::Index(h) * w * c)) {}

  double& at(int c, int y, int x) {
    return values[Eigen::Index(c) * height * width + Eigen::Index(y) * width + x];
  }
  double at(int c, int y, int x) const {
    return values[Eigen::Index(c) * height * width + Eigen::Index(y) * width + x];
  }
  Eigen::Index size() const { return values.size(); }

  void clamp() { values = values.cwiseMax(-1.0).cwiseMin(1.0); }

  bool same_shape(const ImageTensor& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// 8-bit BGR cv::Mat -> ImageTensor in [-1,1], RGB channel order.
inline ImageTensor from_cv8u(const cv::Mat& m) {
  ImageTensor out(m.rows, m.cols, m.channels() >= 3 ? 3 : 1);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      if (out.channels == 3) {
        const auto& px = m.at<cv::Vec3b>(y, x);
        out.at(0, y, x) = 2.0 * (px[2] / 255.0) - 1.0;
        out.at(1, y, x) = 2.0 * (px[1] / 255.0) - 1.0;
        out.at(2, y, x) = 2.0 * (px[0] / 255.0) - 1.0;
      } else {
        out.at(0, y, x) = 2.0 * (m.at<unsigned char>(y, x) / 255.0) - 1.0;
      }
    }
  return out;
}

inline cv::Mat to_cv8u(const ImageTensor& img) {
  auto q = [](double v) {
    double u = (v + 1.0) * 0.5 * 255.0;
    return static_cast<unsigned char>(std::lround(std::min(255.0, std::max(0.0, u))));
  };
  if (img.channels == 3) {
    cv::Mat m(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        m.at<cv::Vec3b>(y, x) =
            cv::Vec3b(q(img.at(2, y, x)), q(img.at(1, y, x)), q(img.at(0, y, x)));
    return m;
  }
  cv::Mat m(img.height, img.width, CV_8UC1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) m.at<unsigned char>(y, x) = q(img.at(0, y, x));
  return m;
}

// Decode, center-crop to square, resize, rescale to [-1,1].
inline ImageTensor preprocess(const std::vector<unsigned char>& bytes, int side) {
  cv::Mat raw = cv::imdecode(bytes, cv::IMREAD_COLOR);
  if (raw.empty()) throw validation_error("preprocess: undecodable image");
  int s = std::min(raw.rows, raw.cols);
  cv::Rect roi((raw.cols - s) / 2, (raw.rows - s) / 2, s, s);
  cv::Mat sq = raw(roi);
  cv::Mat resized;
  cv::resize(sq, resized, cv::Size(side, side), 0, 0, cv::INTER_AREA);
  return from_cv8u(resized);
}

inline ImageTensor load_image(const std::string& path, int side) {
  cv::Mat raw = cv::imread(path, cv::IMREAD_COLOR);
  if (raw.empty()) throw validation_error("cannot decode image: " + path);
  int s = std::min(raw.rows, raw.cols);
  cv::Rect roi((raw.cols - s) / 2, (raw.rows - s) / 2, s, s);
  cv::Mat resized;
  cv::resize(raw(roi), resized, cv::Size(side, side), 0, 0, cv::INTER_AREA);
  return from_cv8u(resized);
}

inline void save_image(const ImageTensor& img, const std::string& path) {
  if (!cv::imwrite(path, to_cv8u(img)))
    throw std::runtime_error("cannot write image: " + path);
}

}  // namespace secretgen
