// Dense univariate polynomials over C and a simultaneous-iteration root solver.
#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "natlas/complexutil.hpp"

namespace natlas {

class Polynomial {
  public:
    Polynomial() : coeff_{Cx{0, 0}} {}
    explicit Polynomial(std::vector<Cx> coeff) : coeff_(std::move(coeff)) {
        if (coeff_.empty()) coeff_.push_back(Cx{0, 0});
        trim();
    }

    // Monic polynomial with the given roots, expanded by stable products.
    static Polynomial from_roots(const std::vector<Cx>& roots) {
        std::vector<Cx> c{Cx{1, 0}};  // ascending powers
        for (Cx r : roots) {
            c.push_back(Cx{0, 0});
            for (size_t i = c.size() - 1; i >= 1; --i) c[i] = c[i - 1] - r * c[i];
            c[0] = -r * c[0];
        }
        return Polynomial(std::move(c));
    }

    int degree() const { return static_cast<int>(coeff_.size()) - 1; }
    const std::vector<Cx>& coefficients() const { return coeff_; }
    Cx operator[](int i) const { return coeff_[static_cast<size_t>(i)]; }

    Cx eval(Cx z) const {
        Cx acc{0, 0};
        for (int i = degree(); i >= 0; --i) acc = acc * z + coeff_[static_cast<size_t>(i)];
        return acc;
    }

    Polynomial derivative() const {
        if (degree() == 0) return Polynomial{};
        std::vector<Cx> c(coeff_.size() - 1);
        for (size_t i = 1; i < coeff_.size(); ++i) c[i - 1] = coeff_[i] * Cx(double(i), 0);
        return Polynomial(std::move(c));
    }

    Polynomial operator*(const Polynomial& o) const {
        std::vector<Cx> c(coeff_.size() + o.coeff_.size() - 1, Cx{0, 0});
        for (size_t i = 0; i < coeff_.size(); ++i)
            for (size_t j = 0; j < o.coeff_.size(); ++j) c[i + j] += coeff_[i] * o.coeff_[j];
        return Polynomial(std::move(c));
    }

    Polynomial operator-(const Polynomial& o) const {
        std::vector<Cx> c(std::max(coeff_.size(), o.coeff_.size()), Cx{0, 0});
        for (size_t i = 0; i < coeff_.size(); ++i) c[i] += coeff_[i];
        for (size_t i = 0; i < o.coeff_.size(); ++i) c[i] -= o.coeff_[i];
        return Polynomial(std::move(c));
    }

    Polynomial operator+(const Polynomial& o) const {
        std::vector<Cx> c(std::max(coeff_.size(), o.coeff_.size()), Cx{0, 0});
        for (size_t i = 0; i < coeff_.size(); ++i) c[i] += coeff_[i];
        for (size_t i = 0; i < o.coeff_.size(); ++i) c[i] += o.coeff_[i];
        return Polynomial(std::move(c));
    }

    Polynomial scaled(Cx s) const {
        std::vector<Cx> c = coeff_;
        for (Cx& x : c) x *= s;
        return Polynomial(std::move(c));
    }

    bool is_zero() const { return degree() == 0 && std::abs(coeff_[0]) == 0.0; }

  private:
    void trim() {
        while (coeff_.size() > 1 && std::abs(coeff_.back()) == 0.0) coeff_.pop_back();
    }

    std::vector<Cx> coeff_;  // ascending powers
};

struct RootSolveFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All complex roots of a polynomial by Aberth-Ehrlich simultaneous iteration
// (no deflation). Multiplicities come out as clustered roots.
inline std::vector<Cx> solve_roots(const Polynomial& poly, int max_iter = 400,
                                   double tol = 1e-13) {
    int n = poly.degree();
    if (n <= 0) return {};
    if (n == 1) return {-poly[0] / poly[1]};

    const Polynomial dp = poly.derivative();

    // Cauchy-style radius bound for initial guesses.
    double lead = std::abs(poly[n]);
    double radius = 0.0;
    for (int i = 0; i < n; ++i) radius = std::max(radius, std::abs(poly[i]) / lead);
    radius = 1.0 + radius;

    std::vector<Cx> z(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double theta = 2.0 * kPi * (double(i) + 0.35) / double(n) + 0.45;
        z[static_cast<size_t>(i)] = radius * 0.8 * Cx(std::cos(theta), std::sin(theta));
    }

    for (int it = 0; it < max_iter; ++it) {
        double worst = 0.0;
        for (int i = 0; i < n; ++i) {
            Cx zi = z[static_cast<size_t>(i)];
            Cx pv = poly.eval(zi);
            Cx dv = dp.eval(zi);
            if (std::abs(pv) < tol * (1.0 + std::abs(zi))) continue;
            Cx ratio = (std::abs(dv) > 0) ? pv / dv : pv;
            Cx sum{0, 0};
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                Cx diff = zi - z[static_cast<size_t>(j)];
                if (std::abs(diff) < 1e-300) diff = Cx{1e-300, 0};
                sum += 1.0 / diff;
            }
            Cx denom = 1.0 - ratio * sum;
            Cx step = (std::abs(denom) > 1e-300) ? ratio / denom : ratio;
            z[static_cast<size_t>(i)] = zi - step;
            worst = std::max(worst, std::abs(step) / (1.0 + std::abs(zi)));
        }
        if (worst < tol) break;
    }

    // Polish with plain Newton; tolerate multiple roots by capping iterations.
    for (Cx& r : z) {
        for (int it = 0; it < 12; ++it) {
            Cx pv = poly.eval(r);
            Cx dv = dp.eval(r);
            if (std::abs(dv) < 1e-280) break;
            Cx step = pv / dv;
            r -= step;
            if (std::abs(step) < 1e-15 * (1.0 + std::abs(r))) break;
        }
    }

    for (Cx r : z) {
        double res = std::abs(poly.eval(r));
        double scale = std::abs(poly[n]) * std::pow(1.0 + std::abs(r), n);
        if (!(res <= 1e-7 * scale))
            throw RootSolveFailure("polynomial root solve did not converge");
    }
    return z;
}

// Cluster nearly equal roots into (representative, multiplicity) pairs.
inline std::vector<std::pair<Cx, int>> cluster_roots(const std::vector<Cx>& roots,
                                                     double tol) {
    std::vector<std::pair<Cx, int>> out;
    std::vector<bool> used(roots.size(), false);
    for (size_t i = 0; i < roots.size(); ++i) {
        if (used[i]) continue;
        Cx sum = roots[i];
        int count = 1;
        used[i] = true;
        for (size_t j = i + 1; j < roots.size(); ++j) {
            if (!used[j] && std::abs(roots[j] - roots[i]) < tol) {
                sum += roots[j];
                ++count;
                used[j] = true;
            }
        }
        out.emplace_back(sum / double(count), count);
    }
    return out;
}

}  // namespace natlas
