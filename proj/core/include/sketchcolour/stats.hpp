#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace sketchcolour::stats {

double mean(const std::vector<double>& values);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev(const std::vector<double>& values);

/// Throws DegenerateInputError when either input has zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);
/// 1-based ranks with ties given their average rank.
std::vector<double> ranks(const std::vector<double>& values);
double spearman(const std::vector<double>& x, const std::vector<double>& y);

enum class Tail { twoSided, greater };

/// p-value of a correlation coefficient from n pairs via the t approximation
/// t = r sqrt((n - 2) / (1 - r^2)) with n - 2 degrees of freedom.
double correlation_p_value(double r, std::size_t n, Tail tail = Tail::twoSided);

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf);
/// Asymptotic Kolmogorov tail probability with the Stephens small-sample correction.
double ks_p_value(double d, std::size_t n);

double normal_cdf(double x, double mu = 0.0, double sigma = 1.0);

}  // namespace sketchcolour::stats
