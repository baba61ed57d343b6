#include "awpi/synchronverter.hpp"

#include "awpi/csv.hpp"
#include "awpi/steady_state.hpp"

#include <algorithm>
#include <limits>

namespace awpi::sv {

namespace {

constexpr double kPi = std::numbers::pi;

struct Derived {
    double p;    // R / L
    double s;    // sqrt(p^2 + omega_g^2)
    double phi;  // atan(omega_g L / R)
    double a;    // Lambda = -a T_m / i_f + b i_f
    double b;
};

Derived derived(const Params& prm) {
    Derived d{};
    d.p = prm.R / prm.L;
    d.s = std::hypot(d.p, prm.omega_g);
    d.phi = std::atan(prm.omega_g * prm.L / prm.R);
    d.a = prm.L * d.s / (prm.m * prm.V);
    d.b = prm.m * prm.omega_g * d.p / (prm.V * d.s);
    return d;
}

void check_sizes(const Vec& x, const Vec& v) {
    if (x.size() != 4 || v.size() != 2) {
        throw std::invalid_argument("synchronverter: state must have 4 entries and input 2");
    }
}

}  // namespace

void Params::validate() const {
    if (!(J > 0 && Dp > 0 && R > 0 && L > 0 && m > 0 && V > 0 && omega_g > 0)) {
        throw std::invalid_argument("synchronverter parameters J, Dp, R, L, m, V and omega_g must be positive");
    }
}

double wrap_angle(double a) {
    double w = std::remainder(a, 2.0 * kPi);
    if (w <= -kPi) {
        w += 2.0 * kPi;
    }
    return w;
}

Vec sv_rhs(const Params& p, const Vec& x, const Vec& v) {
    check_sizes(x, v);
    const double id = x(0), iq = x(1), w = x(2), d = x(3);
    const double Tm = v(0), i_f = v(1);
    if (!(i_f > 0.0)) {
        throw NonPositiveFieldCurrent("synchronverter: field current must be positive");
    }
    Vec dx(4);
    dx(0) = (-p.R * id + w * p.L * iq + p.V * std::sin(d)) / p.L;
    dx(1) = (-w * p.L * id - p.R * iq - p.m * i_f * w + p.V * std::cos(d)) / p.L;
    dx(2) = (p.m * i_f * iq - p.Dp * w + Tm + p.Dp * p.omega_n) / p.J;
    dx(3) = w - p.omega_g;
    return dx;
}

Mat sv_jacobian(const Params& p, const Vec& x, const Vec& v) {
    check_sizes(x, v);
    const double id = x(0), iq = x(1), w = x(2), d = x(3);
    const double i_f = v(1);
    Mat A = Mat::Zero(4, 4);
    A(0, 0) = -p.R / p.L;
    A(0, 1) = w;
    A(0, 2) = iq;
    A(0, 3) = p.V * std::cos(d) / p.L;
    A(1, 0) = -w;
    A(1, 1) = -p.R / p.L;
    A(1, 2) = (-p.L * id - p.m * i_f) / p.L;
    A(1, 3) = -p.V * std::sin(d) / p.L;
    A(2, 1) = p.m * i_f / p.J;
    A(2, 2) = -p.Dp / p.J;
    A(3, 2) = 1.0;
    return A;
}

Vec sv_output(const Params& p, const Vec& x) {
    const double id = x(0), iq = x(1), d = x(3);
    const double c = std::cos(d), s = std::sin(d);
    return vec({-p.V * (c * iq + s * id), -p.V * (-s * iq + c * id)});
}

double sv_lambda(const Params& p, const Vec& v) {
    const Derived d = derived(p);
    return -d.a * v(0) / v(1) + d.b * v(1);
}

Vec sv_lambda_gradient(const Params& p, const Vec& v) {
    const Derived d = derived(p);
    return vec({-d.a / v(1), d.a * v(0) / (v(1) * v(1)) + d.b});
}

bool sv_in_V(const Params& p, const Vec& v) {
    return v.size() == 2 && v.allFinite() && v(1) > 0.0 && std::abs(sv_lambda(p, v)) < 1.0;
}

Vec sv_xi(const Params& p, const Vec& v) {
    if (!sv_in_V(p, v)) {
        throw InfeasibleInput("sv_xi: input (" + io::format_number(v(0)) + ", " + io::format_number(v(1)) +
                              ") is outside V");
    }
    const Derived d = derived(p);
    const double Tm = v(0), i_f = v(1);
    const double delta = std::acos(sv_lambda(p, v)) - d.phi;
    return vec({-Tm * p.omega_g / (p.m * i_f * d.p) + p.V * std::sin(delta) / p.R, -Tm / (p.m * i_f), p.omega_g,
                wrap_angle(delta)});
}

CmLine cm_line(const Params& p) {
    CmLine line;
    const double V2 = p.V * p.V;
    line.C = vec({-V2 / (2.0 * p.R), 0.0});
    line.Z = vec({p.R, p.omega_g * p.L});
    line.M = -(V2 / line.Z.squaredNorm()) * line.Z;
    const Vec dir = line.M - line.C;
    line.normal = vec({-dir(1), dir(0)}).normalized();
    if (line.normal.dot(-line.C) < 0.0) {
        line.normal = -line.normal;
    }
    line.offset = line.normal.dot(line.C);
    return line;
}

double cm_signed_distance(const Params& p, const Vec& u) {
    const CmLine line = cm_line(p);
    return line.normal.dot(u) - line.offset;
}

Vec sv_right_inverse(const Params& p, const Vec& u) {
    const CmLine line = cm_line(p);
    const double V2 = p.V * p.V;
    return vec({(4.0 * p.R * p.R * (u - line.C).squaredNorm() - V2 * V2) / (4.0 * V2 * p.omega_g * p.R),
                (u - line.M).norm() * line.Z.norm() / (p.V * p.omega_g * p.m)});
}

std::vector<Vec> sv_U_vertices(const Params& p, double margin, int vertices, double radius) {
    if (vertices < 3 || !(radius > 0.0) || !(margin >= 0.0)) {
        throw ConstructionFailure("sv_build_U: need at least 3 vertices, a positive radius and margin >= 0");
    }
    const CmLine line = cm_line(p);
    const double off = line.offset + margin;
    // Keep the vertices a hair inside the disk so roundoff cannot push them out.
    const double r0 = radius * (1.0 - 1e-12);
    if (std::abs(off) >= r0) {
        throw ConstructionFailure("sv_build_U: the shifted C-M line does not cut the disk");
    }
    const Vec& n = line.normal;
    const Vec t = vec({-n(1), n(0)});
    const double half = std::sqrt(r0 * r0 - off * off);
    const Vec p1 = off * n + half * t;
    const Vec p2 = off * n - half * t;

    // Walk the arc from p1 to p2 through the feasible side (the direction n).
    const double a1 = std::atan2(p1(1), p1(0));
    const double a2 = std::atan2(p2(1), p2(0));
    const double an = std::atan2(n(1), n(0));
    auto ccw = [](double from, double to) {
        double d = std::fmod(to - from, 2.0 * kPi);
        return d < 0.0 ? d + 2.0 * kPi : d;
    };
    double sweep = ccw(a1, a2);
    double dir = 1.0;
    if (ccw(a1, an) > sweep) {
        sweep = 2.0 * kPi - sweep;
        dir = -1.0;
    }
    std::vector<Vec> out;
    out.push_back(p1);
    for (int j = 1; j + 1 < vertices; ++j) {
        const double a = a1 + dir * sweep * j / (vertices - 1);
        out.push_back(r0 * vec({std::cos(a), std::sin(a)}));
    }
    out.push_back(p2);
    if (dir < 0.0) {
        std::reverse(out.begin(), out.end());
    }
    return out;
}

sets::ConvexSet sv_build_U(const Params& p, double margin, int vertices, double radius) {
    const auto verts = sv_U_vertices(p, margin, vertices, radius);
    const auto composed = [p](const Vec& u) { return sv_output(p, sv_xi(p, sv_right_inverse(p, u))); };
    for (const auto& w : verts) {
        const std::string where = "(" + io::format_number(w(0)) + ", " + io::format_number(w(1)) + ")";
        if (!(cm_signed_distance(p, w) > 0.0) || !sv_in_V(p, sv_right_inverse(p, w))) {
            throw ConstructionFailure("sv_build_U: vertex " + where + " maps outside V");
        }
        try {
            if (!(steady::min_sym_jacobian_eig(composed, w) > 0.0)) {
                throw ConstructionFailure("sv_build_U: monotonicity fails at vertex " + where);
            }
        } catch (const InfeasibleInput&) {
            throw ConstructionFailure("sv_build_U: vertex " + where + " is too close to the C-M line");
        }
    }
    const int q = static_cast<int>(verts.size());
    Vec centroid = Vec::Zero(2);
    for (const auto& w : verts) {
        centroid += w / q;
    }
    Mat normals(q, 2);
    Vec offsets(q);
    for (int j = 0; j < q; ++j) {
        const Vec& a = verts[j];
        const Vec& b = verts[(j + 1) % q];
        Vec nj = vec({b(1) - a(1), a(0) - b(0)}).normalized();
        if (nj.dot(centroid - a) > 0.0) {
            nj = -nj;
        }
        normals.row(j) = nj.transpose();
        offsets(j) = nj.dot(a);
    }
    return sets::ConvexSet::polyhedron(normals, offsets);
}

Mat sv_static_gain_K() {
    Mat K = Mat::Zero(2, 2);
    K(0, 0) = 1.0 / 50.0;
    K(1, 1) = 1.0 / 5000.0;
    return K;
}

std::vector<control::ReferenceStep> sv_step_schedule() {
    const double table[10][2] = {{-4, 9}, {-5, 17}, {3, 12}, {5, 16}, {6, 12},
                                 {10, 15}, {11, 7}, {17, 2}, {12, -7}, {5, -2}};
    std::vector<control::ReferenceStep> out;
    for (const auto& row : table) {
        out.push_back({vec({row[0] * 1e3, row[1] * 1e3}), 10.0});
    }
    return out;
}

control::PlantModel make_plant(const Params& p) {
    p.validate();
    control::PlantModel plant;
    plant.name = "synchronverter";
    plant.n = 4;
    plant.m = 2;
    plant.p = 2;
    plant.f0 = [p](const Vec& x, const Vec& v) { return sv_rhs(p, x, v); };
    plant.g = [p](const Vec& x) { return sv_output(p, x); };
    plant.input_domain.contains = [p](const Vec& v) { return sv_in_V(p, v); };
    plant.input_domain.margin = [p](const Vec& v) {
        return v(1) > 0.0 ? 1.0 - std::abs(sv_lambda(p, v)) : -1.0;
    };
    plant.input_domain.lower = vec({-60.0, 0.01});
    plant.input_domain.upper = vec({70.0, 1.2});
    plant.xi = [p](const Vec& v) { return sv_xi(p, v); };
    plant.jacobian_x = [p](const Vec& x, const Vec& v) { return sv_jacobian(p, x, v); };
    plant.canonicalize = [](Vec& x) { x(3) = wrap_angle(x(3)); };
    plant.difference = [](const Vec& a, const Vec& b) {
        Vec d = a - b;
        d(3) = wrap_angle(d(3));
        return d;
    };
    plant.state_guess = [p](const Vec& v) {
        return sv_in_V(p, v) ? sv_xi(p, v) : vec({0.0, 0.0, p.omega_g, 0.0});
    };
    return plant;
}

control::StaticMap right_inverse_map(const Params& p) {
    control::StaticMap map;
    map.name = "sv-right-inverse";
    map.in_dim = 2;
    map.out_dim = 2;
    map.eval = [p](const Vec& u) { return sv_right_inverse(p, u); };
    map.domain = [p](const Vec& u) { return cm_signed_distance(p, u) > 0.0; };
    map.boundary_distance = [p](const Vec& u) { return cm_signed_distance(p, u); };
    return map;
}

control::StaticMap static_gain_map(const Params& p, const Mat& K) {
    control::StaticMap map = control::matrix_map(K, "static-matrix");
    map.domain = [p, K](const Vec& u) { return sv_in_V(p, Vec(K * u)); };
    // First-order distance to {|Lambda(K u)| = 1} and to {i_f = 0}.
    map.boundary_distance = [p, K](const Vec& u) {
        const Vec v = K * u;
        if (!(v(1) > 0.0)) {
            return -std::abs(v(1)) / K.row(1).norm();
        }
        const double lam = sv_lambda(p, v);
        const Vec grad = K.transpose() * sv_lambda_gradient(p, v);
        const double to_lambda = (1.0 - std::abs(lam)) / std::max(grad.norm(), 1e-300);
        return std::min(to_lambda, v(1) / K.row(1).norm());
    };
    return map;
}

Vec static_gain_preimage(const Params& p, const Vec& r, const Mat& K) {
    const auto composed = [p, K](const Vec& u) { return sv_output(p, sv_xi(p, Vec(K * u))); };
    const Vec guess = K.fullPivLu().solve(sv_right_inverse(p, r));
    return steady::solve_preimage(composed, r, guess);
}

std::vector<RegionNode> region_raster(const Params& p, const Vec& lower, const Vec& upper, int nx, int ny) {
    if (lower.size() != 2 || upper.size() != 2 || nx < 2 || ny < 2) {
        throw std::invalid_argument("region_raster: needs a 2-D rectangle and at least 2x2 nodes");
    }
    const control::PlantModel plant = make_plant(p);
    steady::CertificateOptions co;
    co.fit_envelope = false;
    std::vector<RegionNode> nodes;
    nodes.reserve(static_cast<std::size_t>(nx) * ny);
    for (int i = 0; i < nx; ++i) {
        const double Tm = lower(0) + (upper(0) - lower(0)) * i / (nx - 1);
        for (int j = 0; j < ny; ++j) {
            const double i_f = lower(1) + (upper(1) - lower(1)) * j / (ny - 1);
            RegionNode node;
            node.v = vec({Tm, i_f});
            node.lambda = sv_lambda(p, node.v);
            node.lambda_abs_lt_1 = std::abs(node.lambda) < 1.0;
            node.spectral_abscissa = std::numeric_limits<double>::quiet_NaN();
            try {
                const auto cert = steady::linearization_certificate(plant, node.v, co);
                node.spectral_abscissa = cert.spectral_abscissa;
                node.in_V = cert.stable;
            } catch (const InfeasibleInput&) {
            }
            nodes.push_back(std::move(node));
        }
    }
    return nodes;
}

void write_region_csv(const std::vector<RegionNode>& nodes, const std::string& path) {
    io::CsvBuilder csv({"v_1", "v_2", "in_V", "spectral_abscissa", "lambda_abs_lt_1"});
    for (const auto& n : nodes) {
        csv.value(n.v(0)).value(n.v(1)).value(n.in_V ? 1.0 : 0.0).value(n.spectral_abscissa);
        csv.value(n.lambda_abs_lt_1 ? 1.0 : 0.0);
        csv.end_row();
    }
    csv.save(path);
}

RegionAgreement region_agreement(const std::vector<RegionNode>& nodes, double band) {
    RegionAgreement a;
    for (const auto& n : nodes) {
        ++a.total_nodes;
        const double abs_lam = std::abs(n.lambda);
        if (abs_lam >= 1.0 - band && abs_lam <= 1.0) {
            ++a.excluded_band;
            continue;
        }
        ++a.checked_nodes;
        if (n.in_V == n.lambda_abs_lt_1) {
            ++a.checked_agree;
        }
        if (abs_lam < 1.0 - band) {
            ++a.feasible_nodes;
            if (n.in_V) {
                ++a.feasible_agree;
            }
        }
    }
    return a;
}

}  // namespace awpi::sv
