// Newton maps built from root data: evaluation, inverse branches, fixed and
// critical point inventory, orbits, and refinement toward postcritically
// finite parameters.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "natlas/complexutil.hpp"
#include "natlas/polynomial.hpp"

namespace natlas {

struct DuplicateRoots : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegreeTooLow : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoConvergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Tolerances {
    double root_separation = 1e-9;
    double cycle_closure = 1e-8;
    double cycle_closure_coarse = 1e-3;  // for approximate published constants
    double refine_target = 1e-10;
};

using RootList = std::vector<Cx>;

// N_p(z) = z - p(z)/p'(z) held as numerator/denominator plus the source roots.
class NewtonMap {
  public:
    explicit NewtonMap(RootList roots, Tolerances tol = {})
        : roots_(std::move(roots)), tol_(tol) {
        int d = static_cast<int>(roots_.size());
        if (d < 3) throw DegreeTooLow("Newton maps need at least 3 distinct roots");
        for (size_t i = 0; i < roots_.size(); ++i)
            for (size_t j = i + 1; j < roots_.size(); ++j)
                if (std::abs(roots_[i] - roots_[j]) < tol_.root_separation)
                    throw DuplicateRoots("roots closer than the separation tolerance");
        p_ = Polynomial::from_roots(roots_);
        dp_ = p_.derivative();
        ddp_ = dp_.derivative();
        // N = (z p' - p) / p'
        Polynomial zpoly(std::vector<Cx>{Cx{0, 0}, Cx{1, 0}});
        num_ = zpoly * dp_ - p_;
        den_ = dp_;
    }

    int degree() const { return static_cast<int>(roots_.size()); }
    const RootList& roots() const { return roots_; }
    const Polynomial& p() const { return p_; }
    const Polynomial& dp() const { return dp_; }
    const Polynomial& numerator() const { return num_; }
    const Polynomial& denominator() const { return den_; }
    const Tolerances& tolerances() const { return tol_; }

    // Evaluate on the sphere. A zero of p' that is not a zero of p maps to inf.
    SpherePoint eval(const SpherePoint& s) const {
        if (s.at_inf) return SpherePoint::infinity();
        Cx pv = p_.eval(s.z);
        Cx dv = dp_.eval(s.z);
        if (std::abs(dv) == 0.0 || std::abs(pv / dv) > 1e12)
            return std::abs(pv) == 0.0 ? SpherePoint::finite(s.z)
                                       : SpherePoint::infinity();
        return SpherePoint::finite(s.z - pv / dv);
    }
    Cx eval(Cx z) const {
        return z - p_.eval(z) / dp_.eval(z);
    }
    SpherePoint iterate(SpherePoint s, int n) const {
        for (int i = 0; i < n; ++i) s = eval(s);
        return s;
    }

    // N'(z) = p p'' / p'^2
    Cx derivative(Cx z) const {
        Cx dv = dp_.eval(z);
        return p_.eval(z) * ddp_.eval(z) / (dv * dv);
    }

    Cx derivative_iterate(Cx z, int n) const {
        Cx acc{1, 0};
        for (int i = 0; i < n; ++i) {
            acc *= derivative(z);
            z = eval(z);
        }
        return acc;
    }

    // All finite preimages of a finite value, with multiplicity.
    std::vector<Cx> preimages(Cx value) const {
        // (w - value) p'(w) - p(w) = 0
        Polynomial shift(std::vector<Cx>{-value, Cx{1, 0}});
        Polynomial q = shift * dp_ - p_;
        return solve_roots(q);
    }

    // Preimages of infinity: the poles (zeros of p') plus infinity itself.
    // Multiple zeros of p' are clustered to a single representative (the
    // cluster mean cancels the symmetric solver splitting).
    std::vector<Cx> poles() const {
        std::vector<Cx> out;
        for (const auto& [rep, mult] : cluster_roots(solve_roots(dp_), 1e-6)) out.push_back(rep);
        return out;
    }

    // Poles with multiplicities; the order of the zero of p' is the local
    // degree of the map at the pole.
    std::vector<std::pair<Cx, int>> poles_with_multiplicity() const {
        return cluster_roots(solve_roots(dp_), 1e-6);
    }

    std::vector<SpherePoint> preimages(const SpherePoint& s) const {
        std::vector<SpherePoint> out;
        if (s.at_inf) {
            for (Cx w : poles()) out.push_back(SpherePoint::finite(w));
            out.push_back(SpherePoint::infinity());
        } else {
            for (Cx w : preimages(s.z)) out.push_back(SpherePoint::finite(w));
        }
        return out;
    }

  private:
    RootList roots_;
    Tolerances tol_;
    Polynomial p_, dp_, ddp_, num_, den_;
};

inline NewtonMap newton_map_from_roots(RootList roots, Tolerances tol = {}) {
    return NewtonMap(std::move(roots), tol);
}

// ---------------------------------------------------------------------------
// Fixed points

struct FixedPointInfo {
    SpherePoint location;
    Cx multiplier;
    enum class Kind { SuperattractingRoot, RepellingInfinity } kind;
};

inline std::vector<FixedPointInfo> fixed_points(const NewtonMap& map) {
    std::vector<FixedPointInfo> out;
    for (Cx r : map.roots())
        out.push_back({SpherePoint::finite(r), map.derivative(r),
                       FixedPointInfo::Kind::SuperattractingRoot});
    double d = map.degree();
    out.push_back({SpherePoint::infinity(), Cx{d / (d - 1.0), 0.0},
                   FixedPointInfo::Kind::RepellingInfinity});
    return out;
}

// ---------------------------------------------------------------------------
// Critical points

struct CriticalPoint {
    Cx point;
    int multiplicity;
    bool fixed;  // true when the point is a root of p
};

struct CriticalSet {
    std::vector<CriticalPoint> points;
    std::vector<CriticalPoint> free() const {
        std::vector<CriticalPoint> out;
        for (const auto& c : points)
            if (!c.fixed) out.push_back(c);
        return out;
    }
    int total_multiplicity() const {
        int s = 0;
        for (const auto& c : points) s += c.multiplicity;
        return s;
    }
};

inline CriticalSet critical_points(const NewtonMap& map) {
    Polynomial crit = map.p() * map.p().derivative().derivative();
    std::vector<Cx> raw = solve_roots(crit);
    CriticalSet out;
    for (auto& [rep, mult] : cluster_roots(raw, 1e-6)) {
        bool is_root = false;
        Cx snapped = rep;
        for (Cx r : map.roots())
            if (std::abs(rep - r) < 1e-6) {
                is_root = true;
                snapped = r;
            }
        out.points.push_back({snapped, mult, is_root});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Head's criterion on an arbitrary rational map given as num/den.

struct HeadCheckEntry {
    std::string what;
    bool pass;
    std::string witness;
};

struct HeadReport {
    bool verdict = true;
    std::vector<HeadCheckEntry> entries;
    void add(std::string what, bool pass, std::string witness = "") {
        verdict = verdict && pass;
        entries.push_back({std::move(what), pass, std::move(witness)});
    }
};

inline HeadReport verify_head(const Polynomial& num, const Polynomial& den,
                              double tol = 1e-6) {
    HeadReport rep;
    int dn = num.degree(), dd = den.degree();
    int deg = std::max(dn, dd);
    if (deg < 3) {
        rep.add("degree >= 3", false, "degree " + std::to_string(deg));
        return rep;
    }

    // Fixed point at infinity requires deg(num) = deg(den) + 1; its multiplier
    // is den lead / num lead (the derivative at 0 of 1/f(1/w)).
    bool inf_fixed = (dn == dd + 1);
    rep.add("infinity fixed", inf_fixed);
    if (inf_fixed) {
        Cx lambda_inf = den[dd] / num[dn];
        rep.add("infinity repelling", std::abs(lambda_inf) > 1.0 + tol,
                "multiplier modulus " + std::to_string(std::abs(lambda_inf)));
    } else {
        rep.add("infinity repelling", false, "infinity is not fixed");
        return rep;
    }

    // Finite fixed points: roots of num(z) - z den(z).
    Polynomial zpoly(std::vector<Cx>{Cx{0, 0}, Cx{1, 0}});
    Polynomial fix = num - zpoly * den;
    Polynomial dnum = num.derivative(), dden = den.derivative();
    std::vector<Cx> fps = fix.is_zero() ? std::vector<Cx>{} : solve_roots(fix);
    for (auto& [xi, mult] : cluster_roots(fps, 1e-7)) {
        Cx dv = den.eval(xi);
        Cx fprime = (dnum.eval(xi) * dv - num.eval(xi) * dden.eval(xi)) / (dv * dv);
        // lambda must equal (m-1)/m for an integer m >= 1
        bool ok = false;
        if (std::abs(fprime.imag()) < tol && fprime.real() < 1.0 - tol / 2) {
            if (std::abs(fprime) < tol) {
                ok = true;  // m = 1
            } else {
                double m = 1.0 / (1.0 - fprime.real());
                ok = m >= 1.0 - tol && std::abs(m - std::round(m)) < 100 * tol;
            }
        }
        rep.add("multiplier (m-1)/m at fixed point", ok,
                "xi=(" + std::to_string(xi.real()) + "," + std::to_string(xi.imag()) +
                    ") lambda=(" + std::to_string(fprime.real()) + "," +
                    std::to_string(fprime.imag()) + ")");
        (void)mult;
    }
    return rep;
}

inline HeadReport verify_head(const NewtonMap& map, double tol = 1e-6) {
    return verify_head(map.numerator(), map.denominator(), tol);
}

// ---------------------------------------------------------------------------
// Orbits and cycle detection

struct CycleInfo {
    SpherePoint representative;
    int period = 0;
    int preperiod = 0;
    double multiplier_modulus = 0.0;
};
struct Escape {};           // orbit left every compact region (unused for Newton maps)
struct NoCycleDetected {};

using OrbitResult = std::variant<CycleInfo, Escape, NoCycleDetected>;

inline OrbitResult orbit(const NewtonMap& map, Cx z0, int max_iter = 2000,
                         double tolerance = 1e-8) {
    std::vector<SpherePoint> seen;
    SpherePoint cur = SpherePoint::finite(z0);
    seen.push_back(cur);
    for (int i = 1; i <= max_iter; ++i) {
        cur = map.eval(cur);
        // first recurrence within tolerance gives preperiod and period
        for (int j = static_cast<int>(seen.size()) - 1; j >= 0; --j) {
            if (chordal(cur, seen[static_cast<size_t>(j)]) < tolerance) {
                int period = i - j;
                int preperiod = j;
                // report the minimal closing period among divisors
                for (int q = 1; q < period; ++q) {
                    if (period % q != 0) continue;
                    if (chordal(map.iterate(seen[static_cast<size_t>(j)], q),
                                seen[static_cast<size_t>(j)]) < tolerance) {
                        period = q;
                        break;
                    }
                }
                CycleInfo info;
                info.representative = seen[static_cast<size_t>(j)];
                info.period = period;
                info.preperiod = preperiod;
                if (!info.representative.at_inf)
                    info.multiplier_modulus = std::abs(
                        map.derivative_iterate(info.representative.z, period));
                else
                    info.multiplier_modulus = double(map.degree()) / (map.degree() - 1.0);
                return info;
            }
        }
        seen.push_back(cur);
    }
    return NoCycleDetected{};
}

// ---------------------------------------------------------------------------
// Refinement of approximate roots toward postcritically finite parameters.

struct PcfTarget {
    int critical_index;  // index into critical_points(map).free()
    int period;
    int preperiod;
};

namespace detail {

// Residuals: for each target, N^{pre+per}(c) - N^{pre}(c) in R^2.
inline std::vector<double> pcf_residual(const RootList& roots,
                                        const std::vector<Cx>& guides,
                                        const std::vector<PcfTarget>& targets) {
    NewtonMap map(roots);
    CriticalSet cs = critical_points(map);
    auto free = cs.free();
    std::vector<double> res;
    for (const auto& t : targets) {
        // track the free critical point nearest to its guide location
        Cx c = guides[static_cast<size_t>(t.critical_index)];
        double best = 1e300;
        Cx chosen = c;
        for (const auto& fc : free) {
            double dd = std::abs(fc.point - c);
            if (dd < best) {
                best = dd;
                chosen = fc.point;
            }
        }
        SpherePoint a = map.iterate(SpherePoint::finite(chosen), t.preperiod);
        SpherePoint b = map.iterate(a, t.period);
        if (a.at_inf || b.at_inf) {
            res.push_back(1e6);
            res.push_back(1e6);
        } else {
            Cx diff = b.z - a.z;
            res.push_back(diff.real());
            res.push_back(diff.imag());
        }
    }
    return res;
}

// Solve the small dense system A x = b by Gaussian elimination with pivoting.
inline std::vector<double> solve_dense(std::vector<std::vector<double>> a,
                                       std::vector<double> b) {
    size_t n = b.size();
    for (size_t col = 0; col < n; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        double diag = a[col][col];
        if (std::abs(diag) < 1e-300) diag = 1e-300;
        for (size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = a[r][col] / diag;
            for (size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (size_t i = 0; i < n; ++i) x[i] = b[i] / (std::abs(a[i][i]) < 1e-300 ? 1e-300 : a[i][i]);
    return x;
}

}  // namespace detail

// Damped least-squares iteration on the root parameters until the targeted
// critical orbits close to within the refinement tolerance. Idempotent once
// the residual is below target.
inline RootList refine_pcf(const NewtonMap& map, const std::vector<PcfTarget>& targets,
                           int max_steps = 80) {
    RootList roots = map.roots();
    double target = map.tolerances().refine_target;

    // guide locations for critical-point tracking, fixed at the start
    CriticalSet cs0 = critical_points(map);
    std::vector<Cx> guides;
    for (const auto& fc : cs0.free()) guides.push_back(fc.point);
    for (const auto& t : targets)
        if (t.critical_index < 0 || t.critical_index >= static_cast<int>(guides.size()))
            throw std::invalid_argument("pcf target references a missing free critical point");

    size_t nparam = 2 * roots.size();
    double lambda = 1e-8;
    std::vector<double> res = detail::pcf_residual(roots, guides, targets);
    auto norm2 = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };

    for (int step = 0; step < max_steps; ++step) {
        if (norm2(res) < target) return roots;

        // finite-difference Jacobian
        size_t m = res.size();
        std::vector<std::vector<double>> jac(m, std::vector<double>(nparam, 0.0));
        const double h = 1e-8;
        for (size_t pidx = 0; pidx < nparam; ++pidx) {
            RootList pert = roots;
            size_t ri = pidx / 2;
            Cx dz = (pidx % 2 == 0) ? Cx{h, 0} : Cx{0, h};
            pert[ri] += dz;
            std::vector<double> rp = detail::pcf_residual(pert, guides, targets);
            for (size_t k = 0; k < m; ++k) jac[k][pidx] = (rp[k] - res[k]) / h;
        }

        // Levenberg-Marquardt step on the normal equations
        for (int attempt = 0; attempt < 12; ++attempt) {
            std::vector<std::vector<double>> ata(nparam, std::vector<double>(nparam, 0.0));
            std::vector<double> atb(nparam, 0.0);
            for (size_t i = 0; i < nparam; ++i) {
                for (size_t j = 0; j < nparam; ++j)
                    for (size_t k = 0; k < m; ++k) ata[i][j] += jac[k][i] * jac[k][j];
                for (size_t k = 0; k < m; ++k) atb[i] -= jac[k][i] * res[k];
                ata[i][i] += lambda * (1.0 + ata[i][i]);
            }
            std::vector<double> delta = detail::solve_dense(ata, atb);
            RootList trial = roots;
            for (size_t i = 0; i < roots.size(); ++i)
                trial[i] += Cx{delta[2 * i], delta[2 * i + 1]};
            std::vector<double> rt;
            try {
                rt = detail::pcf_residual(trial, guides, targets);
            } catch (const std::exception&) {
                lambda *= 10;
                continue;
            }
            if (norm2(rt) < norm2(res)) {
                roots = trial;
                res = rt;
                lambda = std::max(lambda * 0.3, 1e-12);
                break;
            }
            lambda *= 10;
            if (attempt == 11)
                throw NoConvergence("pcf refinement stalled");
        }
    }
    if (norm2(res) < target) return roots;
    throw NoConvergence("pcf refinement did not reach the target residual");
}

}  // namespace natlas
