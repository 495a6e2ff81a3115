#ifndef INTENTLOOP_GEOMETRY_HPP
#define INTENTLOOP_GEOMETRY_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "intentloop/error.hpp"

namespace intentloop::geometry {

/// A point on the unit hypersphere S^{d-1}.
class UnitVector {
public:
    /// Wraps components that are already unit length (tolerance 1e-6).
    /// Throws InvalidArgument otherwise.
    explicit UnitVector(std::vector<double> components);

    std::size_t dim() const noexcept { return c_.size(); }
    std::span<const double> components() const noexcept { return c_; }
    double operator[](std::size_t i) const { return c_[i]; }

private:
    std::vector<double> c_;
};

/// Throws ZeroNorm when ||v|| < 1e-12, InvalidArgument for fewer than two or
/// non-finite components.
UnitVector normalize(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);

/// arccos of the clamped inner product, in [0, pi].
double geodesic_distance(const UnitVector& u, const UnitVector& v);

struct VmfParams {
    double kappa = 64.0;
    std::size_t dim = 0;  // 0: taken from the vectors
};

/// log I_nu(x) for nu >= 0, x > 0. Uses the Debye uniform asymptotic
/// expansion for nu >= 50, the Hankel large-argument expansion when
/// x >> nu^2, and the ascending series otherwise.
double log_bessel_i(double nu, double x);

/// log C_d(kappa) with C_d = kappa^{d/2-1} / ((2 pi)^{d/2} I_{d/2-1}(kappa)).
double log_vmf_normalizer(std::size_t dim, double kappa);

double log_vmf_density(const UnitVector& x, const UnitVector& mu, const VmfParams& params);

enum class ProbabilityMode {
    /// sum_m r_m(li) r_m(lj), r = component responsibilities.
    Posterior,
    /// sum_m pi_m p(li|m) p(lj|m), unbounded above.
    RawDensity,
    /// Raw mixture kernel divided by sqrt(K(li,li) K(lj,lj)); 1 for li == lj.
    Normalized,
};

/// Probability that li and lj were drawn from the same component of a
/// uniform-weight vMF mixture with the given means and shared kappa.
double same_intent_probability(const UnitVector& li, const UnitVector& lj,
                               std::span<const UnitVector> means, const VmfParams& params,
                               ProbabilityMode mode = ProbabilityMode::Posterior);

/// Precomputed per-point log terms log(pi_m) + log p(x | mu_m) so that pair
/// probabilities over a fixed mixture cost O(K).
class VmfMixture {
public:
    VmfMixture(std::span<const UnitVector> means, const VmfParams& params);

    std::size_t components() const noexcept { return means_.size(); }

    /// log(pi_m) + log p(x | mu_m) for every m.
    std::vector<double> log_joint(const UnitVector& x) const;

    double pair_probability(std::span<const double> log_joint_i, std::span<const double> log_joint_j,
                            ProbabilityMode mode) const;

private:
    std::vector<UnitVector> means_;
    VmfParams params_;
    double log_norm_ = 0.0;
};

}  // namespace intentloop::geometry

#endif  // INTENTLOOP_GEOMETRY_HPP
