#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nsn/error.hpp"
#include "nsn/raster.hpp"

namespace nsn {

struct Offset {
    int x = 0;
    int y = 0;
    bool operator==(const Offset&) const = default;
};

struct PoissonSolveParams {
    /// 0 selects 10 x (number of unknowns).
    std::size_t max_iterations = 0;
    double tolerance = 1e-4;
};

/// Discrete Poisson problem over a masked region with Dirichlet values outside its interior.
///
/// A region pixel is an unknown when all four neighbours are region pixels too; the remaining
/// region pixels form the boundary ring and keep the target value, like everything outside.
/// For each unknown p with neighbours N(p):
///
///     4 f_p - sum_{q in N(p), q unknown} f_q = sum_{q in N(p)} (g_p - g_q) + sum_{q known} t_q
///
/// which is the 5-point Laplacian (SPD) with the source gradient as guidance field.
template <typename Scalar>
class PoissonSystem {
public:
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    static PoissonSystem build(const BinaryMask& region) {
        PoissonSystem sys;
        const int h = static_cast<int>(region.rows()), w = static_cast<int>(region.cols());
        sys.index_ = Plane<int>::Constant(h, w, -1);
        auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && region(y, x); };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (inside(x, y) && inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1)) {
                    sys.index_(y, x) = static_cast<int>(sys.coords_.size());
                    sys.coords_.emplace_back(x, y);
                }
        sys.neighbours_.reserve(sys.coords_.size());
        for (auto [x, y] : sys.coords_) {
            sys.neighbours_.push_back({sys.index_(y, x - 1), sys.index_(y, x + 1), sys.index_(y - 1, x),
                                       sys.index_(y + 1, x)});
        }
        return sys;
    }

    Eigen::Index unknowns() const { return static_cast<Eigen::Index>(coords_.size()); }
    const std::vector<std::pair<int, int>>& coords() const { return coords_; }
    const Plane<int>& index() const { return index_; }

    /// Right-hand side for one channel. `target` is the full image plane; `source` is the patch.
    template <typename T, typename S>
    Vector rhs(const Plane<T>& target, const Plane<S>& source, Offset offset) const {
        Vector b(unknowns());
        static constexpr std::array<std::pair<int, int>, 4> kSteps{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
        for (Eigen::Index i = 0; i < unknowns(); ++i) {
            const auto [x, y] = coords_[static_cast<std::size_t>(i)];
            Scalar acc = 0;
            for (auto [dx, dy] : kSteps) {
                acc += static_cast<Scalar>(source(y, x)) - static_cast<Scalar>(source(y + dy, x + dx));
                if (index_(y + dy, x + dx) < 0)
                    acc += static_cast<Scalar>(target(y + dy + offset.y, x + dx + offset.x));
            }
            b(i) = acc;
        }
        return b;
    }

    /// y = A x, matrix-free.
    void apply(const Vector& x, Vector& y) const {
        y.resize(x.size());
        for (std::size_t i = 0; i < neighbours_.size(); ++i) {
            Scalar acc = 4 * x(static_cast<Eigen::Index>(i));
            for (int n : neighbours_[i])
                if (n >= 0) acc -= x(n);
            y(static_cast<Eigen::Index>(i)) = acc;
        }
    }

    Vector operator*(const Vector& x) const {
        Vector y;
        apply(x, y);
        return y;
    }

private:
    Plane<int> index_;
    std::vector<std::pair<int, int>> coords_;
    std::vector<std::array<int, 4>> neighbours_;
};

template <typename Scalar>
struct CgResult {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x;
    double relative_residual = 0;
    std::size_t iterations = 0;
};

/// Conjugate gradient for A x = b. Stops when ||b - A x|| / ||b|| <= tolerance; throws
/// ConvergenceError carrying the final residual otherwise.
template <typename Scalar>
CgResult<Scalar> conjugate_gradient(const PoissonSystem<Scalar>& sys,
                                    const typename PoissonSystem<Scalar>::Vector& b,
                                    const PoissonSolveParams& params) {
    using Vector = typename PoissonSystem<Scalar>::Vector;
    const Eigen::Index n = sys.unknowns();
    CgResult<Scalar> out;
    out.x = Vector::Zero(n);
    const double bnorm = static_cast<double>(b.norm());
    if (n == 0 || bnorm == 0.0) return out;

    const std::size_t max_it = params.max_iterations ? params.max_iterations : 10 * static_cast<std::size_t>(n);
    std::size_t it = 0;
    Vector ap(n);
    // The recursive residual can drift below the true one; restart from the true residual
    // until the true residual meets the tolerance or the budget runs out.
    for (;;) {
        Vector r = b - sys * out.x;
        Scalar rs = r.squaredNorm();
        out.relative_residual = std::sqrt(static_cast<double>(rs)) / bnorm;
        if (out.relative_residual <= params.tolerance || it >= max_it) break;
        Vector p = r;
        while (it < max_it && std::sqrt(static_cast<double>(rs)) / bnorm > params.tolerance) {
            sys.apply(p, ap);
            const Scalar alpha = rs / p.dot(ap);
            out.x += alpha * p;
            r -= alpha * ap;
            const Scalar rs_next = r.squaredNorm();
            p = r + (rs_next / rs) * p;
            rs = rs_next;
            ++it;
        }
    }
    out.iterations = it;
    if (out.relative_residual > params.tolerance) throw ConvergenceError(out.relative_residual, it);
    return out;
}

}  // namespace nsn
