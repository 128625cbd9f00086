#pragma once

#include <span>
#include <vector>

namespace regscope {

/// I_x(a, b) by Lentz's continued fraction, relative tolerance 1e-12.
double regularized_incomplete_beta(double a, double b, double x);

/// Two-sided tail P(|T| >= |t|) of Student's t with `df` degrees of freedom,
/// evaluated as I_{df/(df+t^2)}(df/2, 1/2).
double student_t_two_sided(double t, double df);

/// Empty input gives NaN.
double mean(std::span<const double> xs) noexcept;
/// n - 1 denominator; 0 for fewer than two values.
double sample_std(std::span<const double> xs) noexcept;
/// Average of the two middle values for even counts. Empty input gives NaN.
double median(std::vector<double> xs);

}  // namespace regscope
