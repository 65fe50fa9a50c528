#ifndef ORTHOMOM_COMMON_HPP
#define ORTHOMOM_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace orthomom {

// Error taxonomy. Category drives the CLI exit code:
//   Usage -> 1, Data -> 2, Numerical -> 3.
enum class ErrorCategory { Usage, Data, Numerical };

class Error : public std::runtime_error {
 public:
  Error(std::string code, ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)), cat_(cat) {}
  const std::string& code() const { return code_; }
  ErrorCategory category() const { return cat_; }

 private:
  std::string code_;
  ErrorCategory cat_;
};

inline Error data_error(const std::string& code, const std::string& msg) {
  return Error(code, ErrorCategory::Data, msg);
}
inline Error numerical_error(const std::string& code, const std::string& msg) {
  return Error(code, ErrorCategory::Numerical, msg);
}
inline Error usage_error(const std::string& msg) {
  return Error("Usage", ErrorCategory::Usage, msg);
}

// Neumaier compensated summation; gives an order-independent-enough
// accumulation that serial and index-ordered parallel merges agree bitwise.
class KahanSum {
 public:
  void add(double x) {
    double t = s_ + x;
    if (std::abs(s_) >= std::abs(x))
      c_ += (s_ - t) + x;
    else
      c_ += (x - t) + s_;
    s_ = t;
  }
  double value() const { return s_ + c_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

inline double kahan_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  KahanSum s;
  for (double x : v) s.add(x);
  return s.value() / static_cast<double>(v.size());
}

// sample sd with 1/(n-1); 0 for n < 2
inline double kahan_sd(const std::vector<double>& v) {
  size_t n = v.size();
  if (n < 2) return 0.0;
  double m = kahan_mean(v);
  KahanSum s;
  for (double x : v) s.add((x - m) * (x - m));
  return std::sqrt(s.value() / static_cast<double>(n - 1));
}

// standard normal cdf / quantile-free two-sided p-value
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double two_sided_p(double t) { return 2.0 * (1.0 - norm_cdf(std::abs(t))); }
inline double norm_pdf(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014327;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// inverse standard normal cdf: rational approximation polished by one Newton
// step on norm_cdf, good to ~1e-15 over (0, 1)
inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw Error("BadSpec", ErrorCategory::Data, "norm_quantile: p must be in (0, 1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dc[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  double q, r, x;
  if (p < 0.02425) {
    q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dc[0] * q + dc[1]) * q + dc[2]) * q + dc[3]) * q + 1.0);
  } else if (p <= 0.97575) {
    q = p - 0.5;
    r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dc[0] * q + dc[1]) * q + dc[2]) * q + dc[3]) * q + 1.0);
  }
  x -= (norm_cdf(x) - p) / norm_pdf(x);
  return x;
}

}  // namespace orthomom

#endif
