#include "intentloop/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace intentloop::geometry {

namespace {

constexpr double kUnitTolerance = 1e-6;

double log_sum_exp(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

void require_same_dim(const UnitVector& a, const UnitVector& b) {
    if (a.dim() != b.dim())
        throw Error(ErrorCode::DimensionMismatch, "dimension mismatch: " + std::to_string(a.dim()) +
                                                      " vs " + std::to_string(b.dim()));
}

// Ascending series sum_k (x/2)^{2k+nu} / (k! Gamma(nu+k+1)), accumulated in
// log space so that large x does not overflow.
double log_bessel_i_series(double nu, double x) {
    const double log_q = 2.0 * std::log(0.5 * x);
    double log_term = 0.0;  // relative to the k = 0 term
    double max_log = 0.0;
    double scaled_sum = 1.0;
    for (int k = 0; k < 1000000; ++k) {
        const double kk = k + 1.0;
        log_term += log_q - std::log(kk) - std::log(nu + kk);
        if (log_term > max_log) {
            scaled_sum = scaled_sum * std::exp(max_log - log_term) + 1.0;
            max_log = log_term;
        } else {
            scaled_sum += std::exp(log_term - max_log);
        }
        // Past the peak, terms shrink monotonically.
        const bool decreasing = kk * (nu + kk) > 0.25 * x * x;
        if (decreasing && log_term - max_log < -40.0) break;
    }
    return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + max_log + std::log(scaled_sum);
}

// I_nu(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(nu) / x^k, truncated at the
// smallest term.
double log_bessel_i_hankel(double nu, double x) {
    const double mu = 4.0 * nu * nu;
    double term = 1.0;
    double sum = 1.0;
    double prev_abs = 1.0;
    for (int k = 1; k < 200; ++k) {
        const double odd = 2.0 * k - 1.0;
        term *= -(mu - odd * odd) / (8.0 * k * x);
        const double a = std::abs(term);
        if (a > prev_abs || a < 1e-17 * std::abs(sum)) break;
        sum += term;
        prev_abs = a;
    }
    return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

// Debye uniform expansion: I_nu(nu z) ~ e^{nu eta} / (sqrt(2 pi nu) (1+z^2)^{1/4})
//   * sum_k u_k(t) / nu^k, t = 1/sqrt(1+z^2).
double log_bessel_i_debye(double nu, double x) {
    const double z = x / nu;
    const double root = std::sqrt(1.0 + z * z);
    const double t = 1.0 / root;
    const double eta = root + std::log(z / (1.0 + root));
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double t4 = t2 * t2;
    const double u1 = (3.0 * t - 5.0 * t3) / 24.0;
    const double u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t4) / 1152.0;
    const double u3 = t3 * (30375.0 - 369603.0 * t2 + 765765.0 * t4 - 425425.0 * t4 * t2) / 414720.0;
    const double u4 = t4 *
                      (4465125.0 - 94121676.0 * t2 + 349922430.0 * t4 - 446185740.0 * t4 * t2 +
                       185910725.0 * t4 * t4) /
                      39813120.0;
    const double inv = 1.0 / nu;
    const double series = 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * u4)));
    return nu * eta - 0.5 * std::log(2.0 * std::numbers::pi * nu) - 0.25 * std::log1p(z * z) +
           std::log(series);
}

}  // namespace

UnitVector::UnitVector(std::vector<double> components) : c_(std::move(components)) {
    if (c_.size() < 2) throw Error(ErrorCode::InvalidArgument, "unit vector needs >= 2 components");
    double ss = 0.0;
    for (double v : c_) {
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite component");
        ss += v * v;
    }
    if (std::abs(std::sqrt(ss) - 1.0) > kUnitTolerance)
        throw Error(ErrorCode::InvalidArgument, "vector is not unit length");
}

UnitVector normalize(std::span<const double> v) {
    if (v.size() < 2) throw Error(ErrorCode::InvalidArgument, "vector needs >= 2 components");
    double ss = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) throw Error(ErrorCode::InvalidArgument, "non-finite component");
        ss += x * x;
    }
    const double norm = std::sqrt(ss);
    if (norm < 1e-12) throw Error(ErrorCode::ZeroNorm, "cannot normalize a zero vector");
    std::vector<double> out(v.begin(), v.end());
    for (double& x : out) x /= norm;
    return UnitVector(std::move(out));
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double geodesic_distance(const UnitVector& u, const UnitVector& v) {
    require_same_dim(u, v);
    return std::acos(std::clamp(dot(u.components(), v.components()), -1.0, 1.0));
}

double log_bessel_i(double nu, double x) {
    if (nu < 0.0 || !std::isfinite(nu) || !(x >= 0.0) || !std::isfinite(x))
        throw Error(ErrorCode::InvalidArgument, "log_bessel_i requires nu >= 0 and finite x >= 0");
    if (x == 0.0) return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
    if (nu >= 50.0) return log_bessel_i_debye(nu, x);
    if (x > std::max(30.0, nu * nu)) return log_bessel_i_hankel(nu, x);
    return log_bessel_i_series(nu, x);
}

double log_vmf_normalizer(std::size_t dim, double kappa) {
    if (dim < 2) throw Error(ErrorCode::InvalidArgument, "vMF dimension must be >= 2");
    if (!(kappa > 0.0) || !std::isfinite(kappa))
        throw Error(ErrorCode::InvalidArgument, "kappa must be finite and positive");
    const double half = 0.5 * static_cast<double>(dim);
    const double nu = half - 1.0;
    const double out =
        nu * std::log(kappa) - half * std::log(2.0 * std::numbers::pi) - log_bessel_i(nu, kappa);
    if (!std::isfinite(out)) throw Error(ErrorCode::NumericalOverflow, "vMF normalizer overflowed");
    return out;
}

double log_vmf_density(const UnitVector& x, const UnitVector& mu, const VmfParams& params) {
    require_same_dim(x, mu);
    if (params.dim != 0 && params.dim != x.dim())
        throw Error(ErrorCode::DimensionMismatch, "VmfParams.dim does not match vectors");
    return log_vmf_normalizer(x.dim(), params.kappa) +
           params.kappa * std::clamp(dot(x.components(), mu.components()), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// VmfMixture

VmfMixture::VmfMixture(std::span<const UnitVector> means, const VmfParams& params)
    : means_(means.begin(), means.end()), params_(params) {
    if (means_.empty()) throw Error(ErrorCode::EmptyMixture, "mixture needs at least one mean");
    const std::size_t d = means_.front().dim();
    for (const auto& m : means_)
        if (m.dim() != d) throw Error(ErrorCode::DimensionMismatch, "mixture means differ in dimension");
    if (params_.dim != 0 && params_.dim != d)
        throw Error(ErrorCode::DimensionMismatch, "VmfParams.dim does not match means");
    params_.dim = d;
    log_norm_ = log_vmf_normalizer(d, params_.kappa);
}

std::vector<double> VmfMixture::log_joint(const UnitVector& x) const {
    if (x.dim() != params_.dim) throw Error(ErrorCode::DimensionMismatch, "point dimension mismatch");
    const double log_pi = -std::log(static_cast<double>(means_.size()));
    std::vector<double> out(means_.size());
    for (std::size_t m = 0; m < means_.size(); ++m)
        out[m] = log_pi + log_norm_ +
                 params_.kappa * std::clamp(dot(x.components(), means_[m].components()), -1.0, 1.0);
    return out;
}

double VmfMixture::pair_probability(std::span<const double> li, std::span<const double> lj,
                                    ProbabilityMode mode) const {
    const std::size_t k = means_.size();
    if (li.size() != k || lj.size() != k)
        throw Error(ErrorCode::DimensionMismatch, "log-joint vectors do not match mixture size");
    switch (mode) {
        case ProbabilityMode::Posterior: {
            const double zi = log_sum_exp(li);
            const double zj = log_sum_exp(lj);
            double p = 0.0;
            for (std::size_t m = 0; m < k; ++m) p += std::exp(li[m] - zi + lj[m] - zj);
            return std::min(p, 1.0);
        }
        case ProbabilityMode::RawDensity: {
            // pi_m appears once in each log-joint; add one copy back.
            const double log_k = std::log(static_cast<double>(k));
            std::vector<double> terms(k);
            for (std::size_t m = 0; m < k; ++m) terms[m] = li[m] + lj[m] + log_k;
            return std::exp(log_sum_exp(terms));
        }
        case ProbabilityMode::Normalized: {
            std::vector<double> cross(k), self_i(k), self_j(k);
            for (std::size_t m = 0; m < k; ++m) {
                cross[m] = li[m] + lj[m];
                self_i[m] = 2.0 * li[m];
                self_j[m] = 2.0 * lj[m];
            }
            const double log_p =
                log_sum_exp(cross) - 0.5 * (log_sum_exp(self_i) + log_sum_exp(self_j));
            return std::min(std::exp(log_p), 1.0);
        }
    }
    return 0.0;
}

double same_intent_probability(const UnitVector& li, const UnitVector& lj,
                               std::span<const UnitVector> means, const VmfParams& params,
                               ProbabilityMode mode) {
    require_same_dim(li, lj);
    const VmfMixture mixture(means, params);
    return mixture.pair_probability(mixture.log_joint(li), mixture.log_joint(lj), mode);
}

}  // namespace intentloop::geometry
