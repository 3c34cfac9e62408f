#pragma once

#include <cmath>

#include <boost/math/distributions/normal.hpp>

namespace wforge {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Inverse standard normal CDF for p in (0, 1).
inline double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

}  // namespace wforge
