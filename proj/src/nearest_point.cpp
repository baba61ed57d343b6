#include "awpi/nearest_point.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace awpi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

NearestPointResult nearest_point_polyhedron(const Mat& rows, const Vec& offsets,
                                            const Vec& target, int max_iterations) {
    const Eigen::Index n_rows = rows.rows();
    const Eigen::Index dim = rows.cols();
    if (offsets.size() != n_rows || target.size() != dim) {
        throw std::invalid_argument("nearest_point_polyhedron: dimension mismatch");
    }

    NearestPointResult out;
    out.point = target;
    out.multipliers = Vec::Zero(n_rows);
    if (n_rows == 0) {
        return out;
    }

    // Slack s_i(x) = b_i - <a_i, x>; constraint i holds when s_i >= 0.
    // In Goldfarb-Idnani notation the constraint normal is n_i = -a_i.
    const double scale = 1.0 + offsets.cwiseAbs().maxCoeff() + target.norm();
    const double feas_tol = 1e-13 * scale;
    const double dep_tol = 1e-12;

    Vec& x = out.point;
    std::vector<int> active;
    std::vector<double> u;  // multipliers of active rows, same order

    auto slack = [&](int i) { return offsets(i) - rows.row(i).dot(x); };

    int iter = 0;
    while (true) {
        int p = -1;
        double worst = -feas_tol;
        for (Eigen::Index i = 0; i < n_rows; ++i) {
            if (std::find(active.begin(), active.end(), static_cast<int>(i)) != active.end()) {
                continue;
            }
            const double s = slack(static_cast<int>(i));
            if (s < worst) {
                worst = s;
                p = static_cast<int>(i);
            }
        }
        if (p < 0) {
            break;
        }

        const Vec np = -rows.row(p).transpose();
        double u_p = 0.0;

        while (true) {
            if (++iter > max_iterations) {
                throw NonConvergence("nearest_point_polyhedron: iteration budget exhausted");
            }
            Vec z = np;
            Vec r;
            if (!active.empty()) {
                Mat N(dim, static_cast<Eigen::Index>(active.size()));
                for (std::size_t j = 0; j < active.size(); ++j) {
                    N.col(static_cast<Eigen::Index>(j)) = -rows.row(active[j]).transpose();
                }
                Eigen::ColPivHouseholderQR<Mat> qr(N);
                r = qr.solve(np);
                z = np - N * r;
            }

            double t1 = kInf;
            int drop = -1;
            for (std::size_t j = 0; j < active.size(); ++j) {
                if (r(static_cast<Eigen::Index>(j)) > dep_tol) {
                    const double ratio = u[j] / r(static_cast<Eigen::Index>(j));
                    if (ratio < t1) {
                        t1 = ratio;
                        drop = static_cast<int>(j);
                    }
                }
            }

            double t2 = kInf;
            const double zn = z.dot(np);
            if (z.norm() > dep_tol * (1.0 + np.norm()) && zn > 0.0) {
                t2 = -slack(p) / zn;
                t2 = std::max(t2, 0.0);
            }

            if (t1 == kInf && t2 == kInf) {
                throw InfeasibleConstraints("nearest_point_polyhedron: constraints are infeasible");
            }

            const double t = std::min(t1, t2);
            if (t2 < kInf) {
                x += t * z;
            }
            for (std::size_t j = 0; j < active.size(); ++j) {
                u[j] -= t * r(static_cast<Eigen::Index>(j));
            }
            u_p += t;

            if (t2 <= t1) {
                active.push_back(p);
                u.push_back(u_p);
                break;
            }
            active.erase(active.begin() + drop);
            u.erase(u.begin() + drop);
        }
    }

    for (std::size_t j = 0; j < active.size(); ++j) {
        out.multipliers(active[j]) = std::max(u[j], 0.0);
    }
    out.active = std::move(active);
    out.iterations = iter;
    return out;
}

}  // namespace awpi
