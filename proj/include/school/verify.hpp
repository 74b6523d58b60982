#pragma once

#include "school/affinity.hpp"
#include "school/common.hpp"
#include "school/trainer.hpp"

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace school {

/// argmin over the probability simplex of |s + d / (2 alpha)|^2, by exact
/// sort-based Euclidean projection.
std::vector<double> qp_oracle(std::span<const double> d, double alpha);

/// Same problem solved by projected gradient descent; slow, used as a
/// second opinion.
std::vector<double> qp_projected_gradient(std::span<const double> d, double alpha, int iterations = 20000);

/// Eigenvalues of a symmetric matrix below tol. Throws ValidationError on
/// asymmetric input and ConfigError above max_size.
Index zero_eig_count(const Matrix& l, double tol, Index max_size = 2000);
Index zero_eig_count(const Laplacian& l, double tol, Index max_size = 2000);

/// |Tr(F^T L F) - sum of the c smallest eigenvalues| with F the bottom-c
/// eigenvectors.
double kyfan_check(const Matrix& l, Index c);

struct RatioCutValues {
    double trace = 0.0;     // Tr(H^T L H), H the normalized indicator
    double ratiocut = 0.0;  // sum_i W(V_i, complement) / |V_i|
};

/// `partition` assigns each node a block id in [0, m); every block must be
/// non-empty.
RatioCutValues ratiocut_check(const Matrix& w, std::span<const int> partition);

/// Max relative error between `analytic` and central differences of f at x.
/// Returns 0 when x has no entries.
double finite_difference_check(const std::function<double(const Matrix&)>& f, const Matrix& x, const Matrix& analytic,
                               double step = 1e-5);

/// |a - f| / max(|a|, |f|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradientCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    Index entries = 0;
};

/// Central-difference check of one loss term through the whole encoder stack
/// on a small seeded instance, with S, R and the hard assignment frozen.
/// The relative-error floor is 1e-6 max(1, |L|).
GradientCheckResult gradient_check(LossTerm term, std::uint64_t seed, double step = 1e-5);

const char* loss_term_name(LossTerm term);

struct VerificationResult {
    std::string name;
    bool pass = false;
    double discrepancy = 0.0;
    double tolerance = 0.0;
    std::string instance;
};

enum class SuiteScale { Small, Full };

std::vector<VerificationResult> run_suite(SuiteScale scale, std::uint64_t seed = 0);

void write_verification(std::ostream& out, const std::vector<VerificationResult>& results);

}  // namespace school
