#pragma once

// Space-time approximate distance function and boundary-data extension for
// the box domain [x_lo, x_hi] x [0, inf). The ADF vanishes exactly on the
// two spatial boundaries and on the initial slice t = 0, and is positive in
// the interior, so fields of the form g + phi * D satisfy Dirichlet and
// initial data for any decoder output D.

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>

namespace cnfrom::geom {

struct DomainSpec {
    double x_lo = 0.0;
    double x_hi = 2.0;
    double T = 1.0;

    void validate() const {
        if (!(x_lo < x_hi)) throw std::invalid_argument("domain: x_lo must be < x_hi");
        if (!(T > 0.0)) throw std::invalid_argument("domain: T must be positive");
    }
};

enum class AdfRule {
    requivalence, // m=1 R-equivalence: 1/phi = sum 1/phi_i
    product,      // plain product, kept for ablation
};

/// phi(x,t) built from the component distances phi1 = x - x_lo,
/// phi2 = x_hi - x, phi3 = t. Total on the closed domain: zero whenever any
/// component vanishes (fixing the 0/0 at junctions by convention). First
/// derivatives are analytic and only defined away from the zero set; nothing
/// in this codebase differentiates them further (second derivatives of the
/// R-equivalence blow up near junctions, which is what the auxiliary field
/// exists to avoid).
class Adf {
public:
    Adf(DomainSpec dom, AdfRule rule) : dom_(dom), rule_(rule) { dom_.validate(); }

    const DomainSpec& domain() const { return dom_; }
    AdfRule rule() const { return rule_; }

    double value(double x, double t) const {
        const double p1 = x - dom_.x_lo, p2 = dom_.x_hi - x, p3 = t;
        if (p1 == 0.0 || p2 == 0.0 || p3 == 0.0) return 0.0;
        if (rule_ == AdfRule::product) return p1 * p2 * p3;
        return p1 * p2 * p3 / (p1 * p2 + p2 * p3 + p1 * p3);
    }

    /// (d phi/dx, d phi/dt) at a strictly interior point.
    std::array<double, 2> gradient(double x, double t) const {
        const double p1 = x - dom_.x_lo, p2 = dom_.x_hi - x, p3 = t;
        if (p1 == 0.0 || p2 == 0.0 || p3 == 0.0)
            throw std::domain_error("adf gradient requested on the zero set");
        if (rule_ == AdfRule::product)
            return {p3 * (p2 - p1), p1 * p2};
        const double num = p1 * p2 * p3;
        const double den = p1 * p2 + p2 * p3 + p1 * p3;
        const double num_x = p3 * (p2 - p1);
        const double den_x = p2 - p1; // d(p1p2)/dx = p2 - p1; the p3 terms cancel
        const double num_t = p1 * p2;
        const double den_t = p1 + p2;
        const double d2 = den * den;
        return {(num_x * den - num * den_x) / d2, (num_t * den - num * den_t) / d2};
    }

    /// Diagnostic: largest gradient magnitude over a set of interior points.
    /// Grows toward boundary junctions; logged, never asserted.
    double max_gradient_norm(std::span<const double> xs, std::span<const double> ts) const {
        double best = 0.0;
        for (double x : xs)
            for (double t : ts) {
                const auto g = gradient(x, t);
                best = std::max(best, std::hypot(g[0], g[1]));
            }
        return best;
    }

private:
    DomainSpec dom_;
    AdfRule rule_;
};

/// Boundary/initial data extension g(x,t,mu): the time-constant extension of
/// the initial condition. The benchmark's u0 already vanishes on both
/// boundaries, so this single function carries the Dirichlet data and the
/// initial slice at once; dg/dt = 0 by construction.
class BoundaryExtension {
public:
    using Field = double (*)(double x, double mu);

    BoundaryExtension(Field u0, Field u0_dx) : u0_(u0), u0_dx_(u0_dx) {
        if (!u0 || !u0_dx) throw std::invalid_argument("boundary extension needs u0 and its slope");
    }

    double value(double x, double /*t*/, double mu) const { return u0_(x, mu); }
    double dx(double x, double /*t*/, double mu) const { return u0_dx_(x, mu); }
    static constexpr double dt() { return 0.0; }

private:
    Field u0_;
    Field u0_dx_;
};

} // namespace cnfrom::geom
