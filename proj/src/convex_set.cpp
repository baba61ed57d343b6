#include "awpi/convex_set.hpp"

#include "awpi/nearest_point.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace awpi::sets {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

bool is_polyhedral(const ConvexSet::Shape& shape);

bool is_polyhedral(const ConvexSet& set) { return is_polyhedral(set.shape()); }

bool is_polyhedral(const ConvexSet::Shape& shape) {
    return std::visit(Overloaded{
                          [](const HPolyhedron&) { return true; },
                          [](const Box&) { return true; },
                          [](const Ball&) { return false; },
                          [](const Intersection& in) {
                              return std::all_of(in.members.begin(), in.members.end(),
                                                 [](const ConvexSet& m) { return is_polyhedral(m); });
                          },
                      },
                      shape);
}

// Appends the halfspace rows describing a polyhedral shape.
void collect_rows(const ConvexSet::Shape& shape, std::vector<Vec>& normals, std::vector<double>& offsets) {
    std::visit(Overloaded{
                   [&](const HPolyhedron& h) {
                       for (Eigen::Index i = 0; i < h.normals.rows(); ++i) {
                           normals.emplace_back(h.normals.row(i).transpose());
                           offsets.push_back(h.offsets(i));
                       }
                   },
                   [&](const Box& b) {
                       const Eigen::Index q = b.lower.size();
                       for (Eigen::Index i = 0; i < q; ++i) {
                           normals.emplace_back(Vec::Unit(q, i));
                           offsets.push_back(b.upper(i));
                           normals.emplace_back(-Vec::Unit(q, i));
                           offsets.push_back(-b.lower(i));
                       }
                   },
                   [](const Ball&) { throw std::logic_error("collect_rows: ball is not polyhedral"); },
                   [&](const Intersection& in) {
                       for (const auto& m : in.members) {
                           collect_rows(m.shape(), normals, offsets);
                       }
                   },
               },
               shape);
}

std::pair<Mat, Vec> stack_rows(const std::vector<Vec>& normals, const std::vector<double>& offsets,
                               int dim) {
    Mat rows(static_cast<Eigen::Index>(normals.size()), dim);
    Vec b(static_cast<Eigen::Index>(offsets.size()));
    for (std::size_t i = 0; i < normals.size(); ++i) {
        rows.row(static_cast<Eigen::Index>(i)) = normals[i].transpose();
        b(static_cast<Eigen::Index>(i)) = offsets[i];
    }
    return {rows, b};
}

std::vector<Vec> enumerate_vertices(const Mat& rows, const Vec& offsets) {
    const int q = static_cast<int>(rows.cols());
    const int r = static_cast<int>(rows.rows());
    const double scale = 1.0 + offsets.cwiseAbs().maxCoeff();
    const double tol = 1e-9 * scale;
    std::vector<Vec> out;
    if (r < q) {
        return out;
    }
    std::vector<int> idx(static_cast<std::size_t>(q));
    std::iota(idx.begin(), idx.end(), 0);
    Mat sub(q, q);
    Vec rhs(q);
    while (true) {
        for (int j = 0; j < q; ++j) {
            sub.row(j) = rows.row(idx[static_cast<std::size_t>(j)]);
            rhs(j) = offsets(idx[static_cast<std::size_t>(j)]);
        }
        Eigen::FullPivLU<Mat> lu(sub);
        if (lu.rank() == q) {
            Vec x = lu.solve(rhs);
            if (((offsets - rows * x).array() >= -tol).all()) {
                const bool dup = std::any_of(out.begin(), out.end(),
                                             [&](const Vec& w) { return (w - x).norm() <= tol; });
                if (!dup) {
                    out.push_back(std::move(x));
                }
            }
        }
        int k = q - 1;
        while (k >= 0 && idx[static_cast<std::size_t>(k)] == r - q + k) {
            --k;
        }
        if (k < 0) {
            break;
        }
        ++idx[static_cast<std::size_t>(k)];
        for (int j = k + 1; j < q; ++j) {
            idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
        }
    }
    return out;
}

// Projection onto {w : <n_i, w> <= 0} for the given outward normals.
Vec project_onto_cone(const std::vector<Vec>& normals, const Vec& v, int max_iterations) {
    if (normals.empty()) {
        return v;
    }
    if (normals.size() == 1) {
        const double c = normals.front().dot(v);
        return c > 0.0 ? Vec(v - c * normals.front()) : v;
    }
    const int q = static_cast<int>(v.size());
    Mat rows(static_cast<Eigen::Index>(normals.size()), q);
    for (std::size_t i = 0; i < normals.size(); ++i) {
        rows.row(static_cast<Eigen::Index>(i)) = normals[i].transpose();
    }
    try {
        return nearest_point_polyhedron(rows, Vec::Zero(rows.rows()), v, max_iterations).point;
    } catch (const NonConvergence& e) {
        throw DegenerateNormalCone(std::string("tangent cone projection failed: ") + e.what());
    }
}

// Projection onto the member shrunk inward by eps (used to locate interior points).
Vec project_shrunk(const ConvexSet& set, const Vec& v, double eps);

Vec dykstra(const std::vector<const ConvexSet*>& members, const Vec& v, double eps, const SetOptions& opts) {
    Vec x = v;
    std::vector<Vec> incr(members.size(), Vec::Zero(v.size()));
    const double tol = opts.dykstra_tol * (1.0 + v.norm());
    for (int it = 0; it < opts.dykstra_iterations; ++it) {
        double change = 0.0;
        for (std::size_t i = 0; i < members.size(); ++i) {
            const Vec y = x + incr[i];
            const Vec px = eps > 0.0 ? project_shrunk(*members[i], y, eps) : members[i]->project(y);
            incr[i] = y - px;
            change = std::max(change, (px - x).norm());
            x = px;
        }
        if (change <= tol) {
            return x;
        }
    }
    throw NonConvergence("intersection projection: alternating projections did not converge");
}

Vec project_shrunk(const ConvexSet& set, const Vec& v, double eps) {
    return std::visit(Overloaded{
                          [&](const HPolyhedron& h) -> Vec {
                              return nearest_point_polyhedron(h.normals, h.offsets.array() - eps, v,
                                                              set.options().qp_iterations)
                                  .point;
                          },
                          [&](const Box& b) -> Vec {
                              if (((b.upper - b.lower).array() <= 2.0 * eps).any()) {
                                  throw InfeasibleConstraints("shrunk box is empty");
                              }
                              return v.cwiseMax((b.lower.array() + eps).matrix()).cwiseMin((b.upper.array() - eps).matrix());
                          },
                          [&](const Ball& b) -> Vec {
                              const double r = b.radius - eps;
                              if (r <= 0.0) {
                                  throw InfeasibleConstraints("shrunk ball is empty");
                              }
                              const Vec d = v - b.center;
                              const double n = d.norm();
                              return n <= r ? v : Vec(b.center + d * (r / n));
                          },
                          [&](const Intersection& in) -> Vec {
                              std::vector<const ConvexSet*> ms;
                              for (const auto& m : in.members) {
                                  ms.push_back(&m);
                              }
                              return dykstra(ms, v, eps, set.options());
                          },
                      },
                      set.shape());
}

double shape_slack(const ConvexSet::Shape& shape, const Vec& z);

double shape_slack(const ConvexSet::Shape& shape, const Vec& z) {
    return std::visit(Overloaded{
                          [&](const HPolyhedron& h) { return (h.offsets - h.normals * z).minCoeff(); },
                          [&](const Box& b) {
                              return std::min((z - b.lower).minCoeff(), (b.upper - z).minCoeff());
                          },
                          [&](const Ball& b) { return b.radius - (z - b.center).norm(); },
                          [&](const Intersection& in) {
                              double s = std::numeric_limits<double>::infinity();
                              for (const auto& m : in.members) {
                                  s = std::min(s, shape_slack(m.shape(), z));
                              }
                              return s;
                          },
                      },
                      shape);
}

void collect_active_normals(const ConvexSet::Shape& shape, const Vec& z, double tol, std::vector<Vec>& out) {
    std::visit(Overloaded{
                   [&](const HPolyhedron& h) {
                       for (Eigen::Index i = 0; i < h.normals.rows(); ++i) {
                           if (h.offsets(i) - h.normals.row(i).dot(z) <= tol) {
                               out.emplace_back(h.normals.row(i).transpose());
                           }
                       }
                   },
                   [&](const Box& b) {
                       const Eigen::Index q = z.size();
                       for (Eigen::Index i = 0; i < q; ++i) {
                           if (b.upper(i) - z(i) <= tol) {
                               out.emplace_back(Vec::Unit(q, i));
                           }
                           if (z(i) - b.lower(i) <= tol) {
                               out.emplace_back(-Vec::Unit(q, i));
                           }
                       }
                   },
                   [&](const Ball& b) {
                       const Vec d = z - b.center;
                       const double n = d.norm();
                       if (b.radius - n <= tol && n > 0.0) {
                           out.emplace_back(d / n);
                       }
                   },
                   [&](const Intersection& in) {
                       for (const auto& m : in.members) {
                           collect_active_normals(m.shape(), z, tol, out);
                       }
                   },
               },
               shape);
}

}  // namespace

ConvexSet ConvexSet::polyhedron(Mat normals, Vec offsets, SetOptions opts) {
    if (normals.rows() != offsets.size() || normals.rows() == 0 || normals.cols() == 0) {
        throw ConstructionFailure("polyhedron: need at least one row and matching offsets");
    }
    for (Eigen::Index i = 0; i < normals.rows(); ++i) {
        const double n = normals.row(i).norm();
        if (!(n > 1e-14) || !std::isfinite(n) || !std::isfinite(offsets(i))) {
            throw ConstructionFailure("polyhedron: row " + std::to_string(i) + " has a degenerate normal");
        }
        normals.row(i) /= n;
        offsets(i) /= n;
    }
    ConvexSet s;
    s.shape_ = HPolyhedron{std::move(normals), std::move(offsets)};
    s.opts_ = opts;
    s.finalize();
    return s;
}

ConvexSet ConvexSet::ball(Vec center, double radius, SetOptions opts) {
    if (!(radius > 0.0) || center.size() == 0 || !center.allFinite()) {
        throw ConstructionFailure("ball: radius must be positive and the center finite");
    }
    ConvexSet s;
    s.shape_ = Ball{std::move(center), radius};
    s.opts_ = opts;
    s.finalize();
    return s;
}

ConvexSet ConvexSet::box(Vec lower, Vec upper, SetOptions opts) {
    if (lower.size() != upper.size() || lower.size() == 0) {
        throw ConstructionFailure("box: bounds must have equal positive dimension");
    }
    if (!lower.allFinite() || !upper.allFinite() || !((upper - lower).array() > 0.0).all()) {
        throw ConstructionFailure("box: need finite bounds with lower < upper (nonempty interior)");
    }
    ConvexSet s;
    s.shape_ = Box{std::move(lower), std::move(upper)};
    s.opts_ = opts;
    s.finalize();
    return s;
}

ConvexSet ConvexSet::intersection(std::vector<ConvexSet> members, SetOptions opts) {
    if (members.empty()) {
        throw ConstructionFailure("intersection: no members");
    }
    const int q = members.front().dimension();
    for (const auto& m : members) {
        if (m.dimension() != q) {
            throw ConstructionFailure("intersection: members differ in dimension");
        }
    }
    ConvexSet s;
    s.shape_ = Intersection{std::move(members)};
    s.opts_ = opts;
    s.finalize();
    return s;
}

void ConvexSet::finalize() {
    polyhedral_ = is_polyhedral(shape_);
    std::visit(Overloaded{
                   [&](const HPolyhedron& h) { dim_ = static_cast<int>(h.normals.cols()); },
                   [&](const Box& b) { dim_ = static_cast<int>(b.lower.size()); },
                   [&](const Ball& b) { dim_ = static_cast<int>(b.center.size()); },
                   [&](const Intersection& in) { dim_ = in.members.front().dimension(); },
               },
               shape_);

    if (const auto* b = std::get_if<Ball>(&shape_)) {
        interior_ = b->center;
        bbox_lo_ = b->center.array() - b->radius;
        bbox_hi_ = b->center.array() + b->radius;
        diameter_ = 2.0 * b->radius;
        return;
    }
    if (const auto* b = std::get_if<Box>(&shape_)) {
        interior_ = 0.5 * (b->lower + b->upper);
        bbox_lo_ = b->lower;
        bbox_hi_ = b->upper;
        diameter_ = (b->upper - b->lower).norm();
        const int q = dim_;
        for (long mask = 0; mask < (1L << q); ++mask) {
            Vec c(q);
            for (int i = 0; i < q; ++i) {
                c(i) = (mask >> i) & 1 ? b->upper(i) : b->lower(i);
            }
            vertices_.push_back(std::move(c));
        }
        return;
    }

    if (polyhedral_) {
        std::vector<Vec> normals;
        std::vector<double> offsets;
        collect_rows(shape_, normals, offsets);
        std::tie(flat_rows_, flat_offsets_) = stack_rows(normals, offsets, dim_);

        // Bounded iff the recession cone {d : rows d <= 0} is {0}, i.e. every
        // +-e_i projects to the origin.
        for (int i = 0; i < dim_; ++i) {
            for (double sign : {1.0, -1.0}) {
                const Vec e = sign * Vec::Unit(dim_, i);
                const Vec d = nearest_point_polyhedron(flat_rows_, Vec::Zero(flat_rows_.rows()), e,
                                                       opts_.qp_iterations)
                                  .point;
                if (d.norm() > 1e-9) {
                    throw ConstructionFailure("polyhedron is unbounded");
                }
            }
        }

        // Shrink the rows until infeasible; the last feasible point sits close
        // to the Chebyshev center.
        const double scale = 1.0 + flat_offsets_.cwiseAbs().maxCoeff();
        auto try_shrink = [&](double eps) -> std::optional<Vec> {
            try {
                return nearest_point_polyhedron(flat_rows_, flat_offsets_.array() - eps, Vec::Zero(dim_),
                                                opts_.qp_iterations)
                    .point;
            } catch (const InfeasibleConstraints&) {
                return std::nullopt;
            }
        };
        double lo = 1e-9 * scale;
        auto best = try_shrink(lo);
        if (!best) {
            throw ConstructionFailure("polyhedron has empty interior");
        }
        double hi = lo;
        for (int it = 0; it < 200; ++it) {
            hi *= 2.0;
            auto p = try_shrink(hi);
            if (!p) {
                break;
            }
            lo = hi;
            best = p;
        }
        for (int it = 0; it < 30; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (auto p = try_shrink(mid)) {
                lo = mid;
                best = p;
            } else {
                hi = mid;
            }
        }
        interior_ = *best;

        vertices_ = enumerate_vertices(flat_rows_, flat_offsets_);
        if (vertices_.empty()) {
            throw ConstructionFailure("polyhedron: vertex enumeration failed");
        }
        bbox_lo_ = vertices_.front();
        bbox_hi_ = vertices_.front();
        for (const auto& v : vertices_) {
            bbox_lo_ = bbox_lo_.cwiseMin(v);
            bbox_hi_ = bbox_hi_.cwiseMax(v);
        }
        diameter_ = 0.0;
        for (std::size_t i = 0; i < vertices_.size(); ++i) {
            for (std::size_t j = i + 1; j < vertices_.size(); ++j) {
                diameter_ = std::max(diameter_, (vertices_[i] - vertices_[j]).norm());
            }
        }
        return;
    }

    // General intersection (contains a ball).
    const auto& members = std::get<Intersection>(shape_).members;
    bbox_lo_ = members.front().bbox_lower();
    bbox_hi_ = members.front().bbox_upper();
    diameter_ = std::numeric_limits<double>::infinity();
    for (const auto& m : members) {
        bbox_lo_ = bbox_lo_.cwiseMax(m.bbox_lower());
        bbox_hi_ = bbox_hi_.cwiseMin(m.bbox_upper());
        diameter_ = std::min(diameter_, m.diameter());
    }
    if (!((bbox_hi_ - bbox_lo_).array() > 0.0).all()) {
        throw ConstructionFailure("intersection has empty interior");
    }
    diameter_ = std::min(diameter_, (bbox_hi_ - bbox_lo_).norm());

    const double scale = 1.0 + std::max(bbox_lo_.cwiseAbs().maxCoeff(), bbox_hi_.cwiseAbs().maxCoeff());
    const Vec start = 0.5 * (bbox_lo_ + bbox_hi_);
    auto try_shrink = [&](double eps) -> std::optional<Vec> {
        try {
            Vec p = project_shrunk(*this, start, eps);
            if (shape_slack(shape_, p) >= 0.5 * eps) {
                return p;
            }
        } catch (const InfeasibleConstraints&) {
        } catch (const NonConvergence&) {
        }
        return std::nullopt;
    };
    double eps = 1e-6 * scale;
    auto best = try_shrink(eps);
    if (!best) {
        throw ConstructionFailure("intersection has empty interior");
    }
    for (int it = 0; it < 60; ++it) {
        auto p = try_shrink(eps * 2.0);
        if (!p) {
            break;
        }
        eps *= 2.0;
        best = p;
    }
    interior_ = *best;
}

double ConvexSet::slack(const Vec& z) const {
    if (polyhedral_ && !std::holds_alternative<Box>(shape_)) {
        return (flat_offsets_ - flat_rows_ * z).minCoeff();
    }
    return shape_slack(shape_, z);
}

double ConvexSet::active_tolerance(const Vec& z) const { return opts_.active_rel * (1.0 + z.norm()); }

Vec ConvexSet::project(const Vec& v) const {
    if (v.size() != dim_) {
        throw std::invalid_argument("project: dimension mismatch");
    }
    return std::visit(Overloaded{
                          [&](const Ball& b) -> Vec {
                              const Vec d = v - b.center;
                              const double n = d.norm();
                              return n <= b.radius ? v : Vec(b.center + d * (b.radius / n));
                          },
                          [&](const Box& b) -> Vec { return v.cwiseMax(b.lower).cwiseMin(b.upper); },
                          [&](const HPolyhedron&) -> Vec {
                              return nearest_point_polyhedron(flat_rows_, flat_offsets_, v, opts_.qp_iterations)
                                  .point;
                          },
                          [&](const Intersection& in) -> Vec {
                              if (polyhedral_) {
                                  return nearest_point_polyhedron(flat_rows_, flat_offsets_, v,
                                                                  opts_.qp_iterations)
                                      .point;
                              }
                              if (slack(v) >= 0.0) {
                                  return v;
                              }
                              std::vector<const ConvexSet*> ms;
                              for (const auto& m : in.members) {
                                  ms.push_back(&m);
                              }
                              return dykstra(ms, v, 0.0, opts_);
                          },
                      },
                      shape_);
}

double ConvexSet::distance_to_set(const Vec& z) const {
    if (slack(z) >= 0.0) {
        return 0.0;
    }
    return (project(z) - z).norm();
}

bool ConvexSet::contains(const Vec& z, double tol) const { return slack(z) >= -tol; }

double ConvexSet::distance_to_boundary(const Vec& z) const {
    if (z.size() != dim_) {
        throw std::invalid_argument("distance_to_boundary: dimension mismatch");
    }
    const double s = slack(z);
    return s >= 0.0 ? s : -distance_to_set(z);
}

TangentDecomposition ConvexSet::tangent_project(const Vec& z, const Vec& v) const {
    if (z.size() != dim_ || v.size() != dim_) {
        throw std::invalid_argument("tangent_project: dimension mismatch");
    }
    TangentDecomposition out;
    const double tol = active_tolerance(z);
    const double s = slack(z);
    if (s > tol) {
        out.projected = v;
        out.location = Location::Interior;
        return out;
    }
    if (s < -tol) {
        const Vec d = project(z) - z;
        const double n = d.norm();
        if (n > tol) {
            out.projected = d / n;
            out.location = Location::Exterior;
            return out;
        }
    }
    out.location = Location::Boundary;
    if (polyhedral_ && !std::holds_alternative<Box>(shape_)) {
        for (Eigen::Index i = 0; i < flat_rows_.rows(); ++i) {
            if (flat_offsets_(i) - flat_rows_.row(i).dot(z) <= tol) {
                out.active_normals.emplace_back(flat_rows_.row(i).transpose());
            }
        }
    } else {
        collect_active_normals(shape_, z, tol, out.active_normals);
    }
    out.projected = project_onto_cone(out.active_normals, v, opts_.qp_iterations);
    out.beta = (out.projected - v).norm();
    return out;
}

std::vector<Vec> ConvexSet::boundary_samples(int count) const {
    if (!vertices_.empty()) {
        return vertices_;
    }
    std::vector<Vec> out;
    if (const auto* b = std::get_if<Ball>(&shape_)) {
        if (dim_ == 1) {
            out.push_back(b->center.array() - b->radius);
            out.push_back(b->center.array() + b->radius);
        } else if (dim_ == 2) {
            for (int i = 0; i < count; ++i) {
                const double a = 2.0 * M_PI * i / count;
                out.push_back(b->center + b->radius * vec({std::cos(a), std::sin(a)}));
            }
        } else {
            for (int i = 0; i < dim_; ++i) {
                out.push_back(b->center + b->radius * Vec::Unit(dim_, i));
                out.push_back(b->center - b->radius * Vec::Unit(dim_, i));
            }
            std::mt19937_64 rng(12345);
            std::normal_distribution<double> nd;
            while (static_cast<int>(out.size()) < count) {
                Vec d(dim_);
                for (int i = 0; i < dim_; ++i) {
                    d(i) = nd(rng);
                }
                out.push_back(b->center + b->radius * d.normalized());
            }
        }
        return out;
    }
    const auto& members = std::get<Intersection>(shape_).members;
    for (const auto& m : members) {
        for (const auto& p : m.boundary_samples(count)) {
            // Push outward past the boundary, then project back onto it.
            const Vec far = p + (p - interior_);
            const Vec q = project(far);
            const bool dup = std::any_of(out.begin(), out.end(), [&](const Vec& w) {
                return (w - q).norm() <= 1e-9 * (1.0 + q.norm());
            });
            if (!dup) {
                out.push_back(q);
            }
        }
    }
    return out;
}

Vec ConvexSet::sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vec p(dim_);
    for (int attempt = 0; attempt < 100000; ++attempt) {
        for (int i = 0; i < dim_; ++i) {
            p(i) = bbox_lo_(i) + unit(rng) * (bbox_hi_(i) - bbox_lo_(i));
        }
        if (slack(p) >= 0.0) {
            return p;
        }
    }
    return interior_;
}

ConvexSet ConvexSet::translated(const Vec& offset) const {
    if (offset.size() != dim_) {
        throw std::invalid_argument("translated: dimension mismatch");
    }
    return std::visit(Overloaded{
                          [&](const HPolyhedron& h) {
                              return polyhedron(h.normals, h.offsets + h.normals * offset, opts_);
                          },
                          [&](const Ball& b) { return ball(b.center + offset, b.radius, opts_); },
                          [&](const Box& b) { return box(b.lower + offset, b.upper + offset, opts_); },
                          [&](const Intersection& in) {
                              std::vector<ConvexSet> ms;
                              for (const auto& m : in.members) {
                                  ms.push_back(m.translated(offset));
                              }
                              return intersection(std::move(ms), opts_);
                          },
                      },
                      shape_);
}

Vec finite_difference_pi(const ConvexSet& set, const Vec& z, const Vec& v, double delta) {
    if (!(delta > 0.0)) {
        throw std::invalid_argument("finite_difference_pi: delta must be positive");
    }
    return (set.project(z + delta * v) - z) / delta;
}

}  // namespace awpi::sets
