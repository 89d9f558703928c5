#pragma once

// Closed-form 1D viscous Burgers benchmark on [0,2] with homogeneous
// Dirichlet data, its analytic derivatives, a backward-Euler full-order
// solver for cross-checking, and grid error metrics.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cnfrom::burgers {

inline constexpr double kPi = std::numbers::pi;

// The closed form is a Cole-Hopf pair: u = (2*pi/mu) * N/D with
//   N = (1/4) e^{-pi^2 t/mu} sin(pi x) +       e^{-4 pi^2 t/mu} sin(2 pi x)
//   D = 1 + (1/4) e^{-pi^2 t/mu} cos(pi x) + (1/2) e^{-4 pi^2 t/mu} cos(2 pi x)
// On the physical domain D stays well above zero; 0.2 is used as a guard.

namespace detail {

struct Parts {
    double a, b;           // mode amplitudes at time t
    double at, bt;         // their time derivatives
    double num, den;
    double num_x, den_x;
    double num_xx, den_xx;
    double num_t, den_t;
};

inline Parts parts(double x, double t, double mu) {
    if (!(mu > 0.0)) throw std::domain_error("burgers: mu must be positive");
    Parts p{};
    const double pi2 = kPi * kPi;
    p.a = 0.25 * std::exp(-pi2 * t / mu);
    p.b = std::exp(-4.0 * pi2 * t / mu);
    p.at = -(pi2 / mu) * p.a;
    p.bt = -(4.0 * pi2 / mu) * p.b;
    const double s1 = std::sin(kPi * x), c1 = std::cos(kPi * x);
    const double s2 = std::sin(2.0 * kPi * x), c2 = std::cos(2.0 * kPi * x);
    p.num = p.a * s1 + p.b * s2;
    p.den = 1.0 + p.a * c1 + 0.5 * p.b * c2;
    p.num_x = kPi * (p.a * c1 + 2.0 * p.b * c2);
    p.den_x = -kPi * (p.a * s1 + p.b * s2);
    p.num_xx = -pi2 * (p.a * s1 + 4.0 * p.b * s2);
    p.den_xx = -pi2 * (p.a * c1 + 2.0 * p.b * c2);
    p.num_t = p.at * s1 + p.bt * s2;
    p.den_t = p.at * c1 + 0.5 * p.bt * c2;
    if (!(p.den > 0.2)) throw std::domain_error("burgers: denominator guard tripped (off-domain evaluation?)");
    return p;
}

} // namespace detail

inline double exact_solution(double x, double t, double mu) {
    const auto p = detail::parts(x, t, mu);
    return (2.0 * kPi / mu) * p.num / p.den;
}

struct Derivatives {
    double u_t;
    double u_x;
    double u_xx;
};

inline Derivatives exact_derivatives(double x, double t, double mu) {
    const auto p = detail::parts(x, t, mu);
    const double c = 2.0 * kPi / mu;
    const double d = p.den, d2 = d * d;
    Derivatives out{};
    out.u_t = c * (p.num_t * d - p.num * p.den_t) / d2;
    out.u_x = c * (p.num_x * d - p.num * p.den_x) / d2;
    out.u_xx = c * ((p.num_xx * d - p.num * p.den_xx) / d2 -
                    2.0 * p.den_x * (p.num_x * d - p.num * p.den_x) / (d2 * d));
    return out;
}

inline double initial_condition(double x, double mu) { return exact_solution(x, 0.0, mu); }
inline double initial_condition_dx(double x, double mu) { return exact_derivatives(x, 0.0, mu).u_x; }

// --- grids ---------------------------------------------------------------------

/// Space-time grid of field values; time-major storage, nx nodes including
/// both boundaries, nt time steps (nt+1 nodes including t=0).
struct GridSolution {
    int nx = 0;
    int nt = 0;
    double T = 0.0;
    double mu = 0.0;
    std::string provenance; // "exact" | "fom" | ...
    std::vector<double> x;  // nx
    std::vector<double> t;  // nt+1
    std::vector<double> values; // (nt+1) * nx

    double& at(int j, int i) { return values[static_cast<std::size_t>(j) * nx + i]; }
    double at(int j, int i) const { return values[static_cast<std::size_t>(j) * nx + i]; }
};

inline GridSolution make_grid(double mu, int nx, int nt, double T, std::string provenance) {
    if (nx < 2 || nt < 1) throw std::invalid_argument("grid requires nx >= 2, nt >= 1");
    GridSolution g;
    g.nx = nx;
    g.nt = nt;
    g.T = T;
    g.mu = mu;
    g.provenance = std::move(provenance);
    g.x.resize(nx);
    g.t.resize(nt + 1);
    for (int i = 0; i < nx; ++i) g.x[i] = 2.0 * i / (nx - 1);
    for (int j = 0; j <= nt; ++j) g.t[j] = T * j / nt;
    g.values.assign(static_cast<std::size_t>(nt + 1) * nx, 0.0);
    return g;
}

inline GridSolution exact_grid(double mu, int nx, int nt, double T) {
    GridSolution g = make_grid(mu, nx, nt, T, "exact");
    for (int j = 0; j <= nt; ++j)
        for (int i = 0; i < nx; ++i) g.at(j, i) = exact_solution(g.x[i], g.t[j], mu);
    return g;
}

// --- full-order model ------------------------------------------------------------

class NewtonError : public std::runtime_error {
public:
    NewtonError(int step, double residual)
        : std::runtime_error("FOM Newton failed to converge at time step " + std::to_string(step) +
                             " (residual " + std::to_string(residual) + ")"),
          step_(step) {}
    int step() const { return step_; }

private:
    int step_;
};

/// Backward Euler in time, central differences in space, homogeneous Dirichlet
/// boundaries. Each implicit step solves its nonlinear system by Newton with
/// the analytic tridiagonal Jacobian and a Thomas solve.
inline GridSolution fom_solve(double mu, int nx, int nt, double T, double newton_tol = 1e-10,
                              int max_newton = 50) {
    if (nx < 3) throw std::invalid_argument("fom_solve requires nx >= 3");
    GridSolution g = make_grid(mu, nx, nt, T, "fom");
    const double dx = g.x[1] - g.x[0];
    const double dt = T / nt;
    const int m = nx - 2; // interior unknowns

    for (int i = 0; i < nx; ++i) g.at(0, i) = initial_condition(g.x[i], mu);

    std::vector<double> v(g.values.begin(), g.values.begin() + nx);
    std::vector<double> F(m), lower(m), diag(m), upper(m), cprime(m), dprime(m);

    for (int n = 1; n <= nt; ++n) {
        const double* prev = g.values.data() + static_cast<std::size_t>(n - 1) * nx;
        for (int i = 0; i < nx; ++i) v[i] = prev[i];

        bool converged = false;
        double resid = 0.0;
        for (int it = 0; it < max_newton; ++it) {
            resid = 0.0;
            for (int k = 0; k < m; ++k) {
                const int i = k + 1;
                const double vx = (v[i + 1] - v[i - 1]) / (2.0 * dx);
                const double vxx = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dx * dx);
                F[k] = v[i] - prev[i] + dt * (v[i] * vx - vxx / mu);
                resid = std::max(resid, std::abs(F[k]));
            }
            if (resid < newton_tol) {
                converged = true;
                break;
            }
            for (int k = 0; k < m; ++k) {
                const int i = k + 1;
                const double vx = (v[i + 1] - v[i - 1]) / (2.0 * dx);
                diag[k] = 1.0 + dt * (vx + 2.0 / (mu * dx * dx));
                lower[k] = dt * (-v[i] / (2.0 * dx) - 1.0 / (mu * dx * dx));
                upper[k] = dt * (v[i] / (2.0 * dx) - 1.0 / (mu * dx * dx));
            }
            // Thomas solve J * delta = F
            cprime[0] = upper[0] / diag[0];
            dprime[0] = F[0] / diag[0];
            for (int k = 1; k < m; ++k) {
                const double den = diag[k] - lower[k] * cprime[k - 1];
                cprime[k] = upper[k] / den;
                dprime[k] = (F[k] - lower[k] * dprime[k - 1]) / den;
            }
            double delta = dprime[m - 1];
            v[m] -= delta;
            for (int k = m - 2; k >= 0; --k) {
                delta = dprime[k] - cprime[k] * delta;
                v[k + 1] -= delta;
            }
        }
        if (!converged) throw NewtonError(n, resid);
        double* row = g.values.data() + static_cast<std::size_t>(n) * nx;
        for (int i = 0; i < nx; ++i) row[i] = v[i];
        row[0] = 0.0;
        row[nx - 1] = 0.0;
    }
    return g;
}

// --- metrics ---------------------------------------------------------------------

inline double relative_l2(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("relative_l2: shape mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        num += d * d;
        den += truth[i] * truth[i];
    }
    if (den == 0.0) throw std::invalid_argument("relative_l2: truth grid has zero norm");
    return std::sqrt(num / den);
}

inline double relative_l2(const GridSolution& pred, const GridSolution& truth) {
    if (pred.nx != truth.nx || pred.nt != truth.nt)
        throw std::invalid_argument("relative_l2: grid shape mismatch");
    return relative_l2(std::span<const double>(pred.values), std::span<const double>(truth.values));
}

// --- CSV import/export -------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_csv(const GridSolution& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "nx=" << g.nx << ",nt=" << g.nt << ",T=" << format_double(g.T)
        << ",mu=" << format_double(g.mu) << ",provenance=" << g.provenance << "\n";
    out << "x,t,u\n";
    for (int j = 0; j <= g.nt; ++j)
        for (int i = 0; i < g.nx; ++i)
            out << format_double(g.x[i]) << "," << format_double(g.t[j]) << ","
                << format_double(g.at(j, i)) << "\n";
}

inline GridSolution read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string header;
    std::getline(in, header);
    GridSolution g;
    double T = 0.0, mu = 0.0;
    int nx = 0, nt = 0;
    std::string provenance;
    std::stringstream hs(header);
    std::string field;
    while (std::getline(hs, field, ',')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed grid header: " + field);
        const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
        if (key == "nx") nx = std::stoi(val);
        else if (key == "nt") nt = std::stoi(val);
        else if (key == "T") T = std::stod(val);
        else if (key == "mu") mu = std::stod(val);
        else if (key == "provenance") provenance = val;
        else throw std::runtime_error("unknown grid header field: " + key);
    }
    g = make_grid(mu, nx, nt, T, provenance);
    std::string line;
    std::getline(in, line); // column header
    std::size_t count = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string sx, st, su;
        if (!std::getline(ls, sx, ',') || !std::getline(ls, st, ',') || !std::getline(ls, su))
            throw std::runtime_error("malformed grid row: " + line);
        if (count >= g.values.size()) throw std::runtime_error("grid file has too many rows");
        const int j = static_cast<int>(count) / nx;
        const int i = static_cast<int>(count) % nx;
        g.x[i] = std::stod(sx);
        g.t[j] = std::stod(st);
        g.values[count] = std::stod(su);
        ++count;
    }
    if (count != g.values.size()) throw std::runtime_error("grid file has too few rows");
    return g;
}

} // namespace cnfrom::burgers
