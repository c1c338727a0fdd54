#include "rareis/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rareis {

namespace {

constexpr double kSize = 480.0;
constexpr double kMargin = 40.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

Matrix project_samples(const Points& samples, const ScatterOptions& options) {
  const auto d = static_cast<std::size_t>(samples.rows());
  Matrix out(2, samples.cols());
  if (options.projection == Projection::half_sums) {
    if (d < 2 || d % 2 != 0) throw std::invalid_argument("half-sum projection needs an even dimension");
    const auto half = static_cast<Eigen::Index>(d / 2);
    const double scale = 1.0 / std::sqrt(static_cast<double>(half));
    out.row(0) = samples.topRows(half).colwise().sum() * scale;
    out.row(1) = samples.bottomRows(half).colwise().sum() * scale;
  } else {
    if (options.i >= d || options.j >= d) throw std::invalid_argument("scatter coordinates out of range");
    out.row(0) = samples.row(static_cast<Eigen::Index>(options.i));
    out.row(1) = samples.row(static_cast<Eigen::Index>(options.j));
  }
  return out;
}

std::string scatter_svg(const Points& samples, const std::vector<double>& costs, const ScatterOptions& options) {
  if (samples.cols() == 0) throw std::invalid_argument("scatter: no stored samples");
  if (costs.size() != static_cast<std::size_t>(samples.cols())) throw std::invalid_argument("scatter: cost count mismatch");
  if (!(options.failure_ratio > 0.0)) throw std::invalid_argument("scatter: failure_ratio must be positive");

  std::vector<Eigen::Index> fail, pass;
  for (std::size_t n = 0; n < costs.size(); ++n) (costs[n] <= 0.0 ? fail : pass).push_back(static_cast<Eigen::Index>(n));

  // Largest counts with n_fail = ratio * n_pass inside the point budget. A
  // class that runs short limits the other one.
  const double r = options.failure_ratio;
  std::size_t n_pass = std::min(pass.size(), static_cast<std::size_t>(static_cast<double>(options.max_points) / (1.0 + r)));
  std::size_t n_fail = 0;
  if (pass.empty()) {
    n_fail = std::min(fail.size(), options.max_points);
  } else if (!fail.empty()) {
    const auto wanted = static_cast<std::size_t>(r * static_cast<double>(n_pass));
    n_fail = std::min(fail.size(), wanted);
    if (n_fail < wanted) n_pass = std::min(pass.size(), static_cast<std::size_t>(std::ceil(static_cast<double>(n_fail) / r)));
  }
  fail.resize(n_fail);
  pass.resize(n_pass);

  const Matrix xy = project_samples(samples, options);
  double extent = 4.0;
  for (auto idx : fail) extent = std::max(extent, xy.col(idx).cwiseAbs().maxCoeff());
  for (auto idx : pass) extent = std::max(extent, xy.col(idx).cwiseAbs().maxCoeff());
  extent = std::ceil(extent);
  const double span = kSize - 2.0 * kMargin;
  const auto px = [&](double u) { return kMargin + (u + extent) / (2.0 * extent) * span; };
  const auto py = [&](double v) { return kSize - kMargin - (v + extent) / (2.0 * extent) * span; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
      << "\" viewBox=\"0 0 " << kSize << ' ' << kSize << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << span << "\" height=\"" << span
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  if (!options.title.empty()) {
    svg << "<text x=\"" << kSize / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
        << options.title << "</text>\n";
  }
  const bool half = options.projection == Projection::half_sums;
  svg << "<text x=\"" << kSize / 2 << "\" y=\"" << kSize - 10 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << (half ? std::string("u") : "x" + std::to_string(options.i)) << "</text>\n";
  svg << "<text x=\"14\" y=\"" << kSize / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << (half ? std::string("v") : "x" + std::to_string(options.j)) << "</text>\n";

  if (half && options.beta) {
    // Lines u + v = c and u - v = c for c = +-beta sqrt(2), clipped to the frame.
    const double c = *options.beta * std::sqrt(2.0);
    svg << "<g stroke=\"#3060c0\" stroke-dasharray=\"4 3\">\n";
    for (double sign : {1.0, -1.0}) {
      for (double slope : {-1.0, 1.0}) {
        const double u0 = -extent, u1 = extent;
        // v = slope * u + sign * c for slope = -1 (u + v = c) or +1 (v - u = c).
        const double v0 = slope * u0 + sign * c, v1 = slope * u1 + sign * c;
        svg << "<line x1=\"" << fmt(px(u0)) << "\" y1=\"" << fmt(py(v0)) << "\" x2=\"" << fmt(px(u1)) << "\" y2=\""
            << fmt(py(v1)) << "\"/>\n";
      }
    }
    svg << "</g>\n";
  }
  svg << "<defs><clipPath id=\"frame\"><rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << span
      << "\" height=\"" << span << "\"/></clipPath></defs>\n";
  svg << "<g clip-path=\"url(#frame)\" fill=\"#909090\" fill-opacity=\"0.5\">\n";
  for (auto idx : pass) svg << "<circle cx=\"" << fmt(px(xy(0, idx))) << "\" cy=\"" << fmt(py(xy(1, idx))) << "\" r=\"1.5\"/>\n";
  svg << "</g>\n<g fill=\"#d02020\">\n";
  for (auto idx : fail) svg << "<circle cx=\"" << fmt(px(xy(0, idx))) << "\" cy=\"" << fmt(py(xy(1, idx))) << "\" r=\"1.8\"/>\n";
  svg << "</g>\n</svg>\n";
  return svg.str();
}

void emit_scatter(const Points& samples, const std::vector<double>& costs, const ScatterOptions& options,
                  const std::filesystem::path& path) {
  const std::string svg = scatter_svg(samples, costs, options);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << svg;
}

}  // namespace rareis
