#include "fsad/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "fsad/error.hpp"

namespace fsad {

AffineTransform AffineTransform::rotation(double radians) {
    AffineTransform t;
    const double c = std::cos(radians), s = std::sin(radians);
    t.theta << c, -s, 0, s, c, 0;
    return t;
}

AffineTransform AffineTransform::from_row_major(const std::array<double, 6>& v) {
    AffineTransform t;
    t.theta << v[0], v[1], v[2], v[3], v[4], v[5];
    return t;
}

std::array<double, 6> AffineTransform::row_major() const {
    return {theta(0, 0), theta(0, 1), theta(0, 2), theta(1, 0), theta(1, 1), theta(1, 2)};
}

Eigen::Matrix3d AffineTransform::augmented() const {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m.topRows<2>() = theta;
    return m;
}

AffineTransform AffineTransform::inverse() const {
    if (!(std::abs(determinant()) > 1e-8)) throw Error("non-invertible transform");
    const Eigen::Matrix2d lin = theta.leftCols<2>();
    const Eigen::Matrix2d inv = lin.inverse();
    AffineTransform out;
    out.theta.leftCols<2>() = inv;
    out.theta.col(2) = -inv * theta.col(2);
    return out;
}

double AffineTransform::angle() const { return std::atan2(theta(1, 0), theta(0, 0)); }

AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
    AffineTransform out;
    out.theta = (a.augmented() * b.augmented()).topRows<2>();
    return out;
}

namespace {

inline double to_normalized(std::size_t i, std::size_t n) {
    return n > 1 ? -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
}

inline double to_pixel(double xn, std::size_t n) {
    return n > 1 ? (xn + 1.0) * 0.5 * static_cast<double>(n - 1) : 0.0;
}

// Sample location of one output pixel in source pixel coordinates.
struct SamplePoint {
    double xn = 0, yn = 0;   // target, normalized
    long x0 = 0, y0 = 0;     // floor of the source pixel location
    double fx = 0, fy = 0;   // fractional offsets in [0, 1)
    double px = 0, py = 0;   // source pixel location
};

// Locations within 1e-9 px of a grid line snap onto it, so the identity
// transform samples exactly at pixel centres.
inline double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

SamplePoint sample_point(const AffineTransform& t, std::size_t x, std::size_t y, std::size_t H, std::size_t W) {
    SamplePoint s;
    s.xn = to_normalized(x, W);
    s.yn = to_normalized(y, H);
    const double xs = t.theta(0, 0) * s.xn + t.theta(0, 1) * s.yn + t.theta(0, 2);
    const double ys = t.theta(1, 0) * s.xn + t.theta(1, 1) * s.yn + t.theta(1, 2);
    s.px = snap(to_pixel(xs, W));
    s.py = snap(to_pixel(ys, H));
    const double fx0 = std::floor(s.px), fy0 = std::floor(s.py);
    // far out-of-range samples contribute nothing; clamp to keep long arithmetic safe
    const double lim = 1e15;
    s.x0 = static_cast<long>(std::clamp(fx0, -lim, lim));
    s.y0 = static_cast<long>(std::clamp(fy0, -lim, lim));
    s.fx = s.px - fx0;
    s.fy = s.py - fy0;
    return s;
}

inline double zero_padded(std::span<const double> plane, long x, long y, std::size_t H, std::size_t W) {
    if (x < 0 || y < 0 || x >= static_cast<long>(W) || y >= static_cast<long>(H)) return 0.0;
    return plane[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)];
}

struct Corners {
    double v00, v10, v01, v11; // v(x0,y0), v(x0+1,y0), v(x0,y0+1), v(x0+1,y0+1)
};

inline Corners corners(std::span<const double> plane, const SamplePoint& s, std::size_t H, std::size_t W) {
    return {zero_padded(plane, s.x0, s.y0, H, W), zero_padded(plane, s.x0 + 1, s.y0, H, W),
            zero_padded(plane, s.x0, s.y0 + 1, H, W), zero_padded(plane, s.x0 + 1, s.y0 + 1, H, W)};
}

inline double interpolate(const Corners& c, double fx, double fy) {
    return c.v00 * (1 - fx) * (1 - fy) + c.v10 * fx * (1 - fy) + c.v01 * (1 - fx) * fy + c.v11 * fx * fy;
}

} // namespace

FeatureMap affine_warp(const FeatureMap& map, const AffineTransform& t) {
    require(!map.empty(), "empty feature map");
    const std::size_t H = map.height(), W = map.width();
    FeatureMap out(map.channels(), H, W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const SamplePoint s = sample_point(t, x, y, H, W);
            for (std::size_t c = 0; c < map.channels(); ++c)
                out.at(c, y, x) = interpolate(corners(map.channel(c), s, H, W), s.fx, s.fy);
        }
    return out;
}

std::vector<ThetaGradient> warp_gradient_theta(const FeatureMap& map, const AffineTransform& t) {
    require(!map.empty(), "empty feature map");
    const std::size_t H = map.height(), W = map.width();
    const double sx = W > 1 ? 0.5 * static_cast<double>(W - 1) : 0.0;
    const double sy = H > 1 ? 0.5 * static_cast<double>(H - 1) : 0.0;
    std::vector<ThetaGradient> grads(map.data().size());
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const SamplePoint s = sample_point(t, x, y, H, W);
            for (std::size_t c = 0; c < map.channels(); ++c) {
                const Corners v = corners(map.channel(c), s, H, W);
                // right-sided slopes of the piecewise-bilinear kernel
                const double dpx = (1 - s.fy) * (v.v10 - v.v00) + s.fy * (v.v11 - v.v01);
                const double dpy = (1 - s.fx) * (v.v01 - v.v00) + s.fx * (v.v11 - v.v10);
                const double gx = dpx * sx, gy = dpy * sy;
                grads[(c * H + y) * W + x] = {gx * s.xn, gx * s.yn, gx, gy * s.xn, gy * s.yn, gy};
            }
        }
    return grads;
}

RegistrationHead RegistrationHead::identity(std::size_t channels) {
    require(channels >= 1, "registration head needs at least one channel");
    RegistrationHead h;
    h.mode_ = Mode::identity;
    h.encoder_ = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(channels));
    h.predictor_ = h.encoder_;
    return h;
}

RegistrationHead RegistrationHead::fixed_random(std::size_t channels, std::uint64_t seed) {
    require(channels >= 1, "registration head needs at least one channel");
    RegistrationHead h;
    h.mode_ = Mode::fixed_random;
    const auto n = static_cast<Eigen::Index>(channels);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const double scale = 0.3 / std::sqrt(static_cast<double>(channels));
    auto draw = [&] {
        Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) m(i, j) += scale * normal(rng);
        return m;
    };
    h.encoder_ = draw();
    h.predictor_ = draw();
    return h;
}

namespace {

FeatureMap apply_linear(const Eigen::MatrixXd& m, const FeatureMap& f) {
    require(static_cast<std::size_t>(m.cols()) == f.channels(), "head dimensions do not match feature channels");
    const auto P = static_cast<Eigen::Index>(f.plane_size());
    Eigen::Map<const Eigen::MatrixXd> in(f.data().data(), P, static_cast<Eigen::Index>(f.channels()));
    FeatureMap out(static_cast<std::size_t>(m.rows()), f.height(), f.width());
    Eigen::Map<Eigen::MatrixXd> o(out.data().data(), P, m.rows());
    o.noalias() = in * m.transpose();
    return out;
}

} // namespace

FeatureMap RegistrationHead::encode(const FeatureMap& f) const {
    return mode_ == Mode::identity ? f : apply_linear(encoder_, f);
}

FeatureMap RegistrationHead::predict(const FeatureMap& z) const {
    return mode_ == Mode::identity ? z : apply_linear(predictor_, z);
}

namespace {

struct CosineTerms {
    double loss = 0.0;
    std::size_t valid = 0;
    // d(loss)/d(p) per element, same layout as p; filled on request
    std::vector<double> grad_p;
};

CosineTerms cosine_terms(const FeatureMap& p, const FeatureMap& z, DegeneratePolicy policy, bool want_grad) {
    require(!p.empty(), "empty feature map");
    require(p.same_shape(z), "cosine loss operands differ in shape");
    const std::size_t C = p.channels(), N = p.plane_size();
    CosineTerms out;
    if (want_grad) out.grad_p.assign(p.data().size(), 0.0);
    std::vector<double> cos_at(N, 0.0), pn(N, 0.0), zn(N, 0.0);
    std::vector<char> ok(N, 0);
    double sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        double pp = 0, zz = 0, pz = 0;
        for (std::size_t c = 0; c < C; ++c) {
            const double a = p.data()[c * N + i], b = z.data()[c * N + i];
            pp += a * a;
            zz += b * b;
            pz += a * b;
        }
        pn[i] = std::sqrt(pp);
        zn[i] = std::sqrt(zz);
        if (!(pn[i] > 0.0) || !(zn[i] > 0.0)) {
            if (policy == DegeneratePolicy::error) throw Error("degenerate feature");
            continue;
        }
        ok[i] = 1;
        cos_at[i] = pz / (pn[i] * zn[i]);
        sum += cos_at[i];
        ++out.valid;
    }
    if (out.valid == 0) throw Error("degenerate feature");
    const double inv = 1.0 / static_cast<double>(out.valid);
    out.loss = -sum * inv;
    if (want_grad) {
        for (std::size_t i = 0; i < N; ++i) {
            if (!ok[i]) continue;
            for (std::size_t c = 0; c < C; ++c) {
                const double a = p.data()[c * N + i], b = z.data()[c * N + i];
                // d(-cos)/dp = -(z_hat - cos * p_hat) / |p|
                out.grad_p[c * N + i] = -inv * (b / zn[i] - cos_at[i] * a / pn[i]) / pn[i];
            }
        }
    }
    return out;
}

} // namespace

double cosine_similarity_loss(const FeatureMap& p, const FeatureMap& z, DegeneratePolicy policy) {
    return cosine_terms(p, z, policy, false).loss;
}

FeatureMap accumulate_reference(std::span<const FeatureMap> refs) {
    require(!refs.empty(), "accumulate_reference needs at least one map");
    for (const auto& r : refs) require(r.same_shape(refs.front()), "reference shape mismatch");
    return mean_of(refs);
}

namespace {

struct ReferenceBranch {
    FeatureMap z_B; // mean(E(fB))
    FeatureMap p_B; // mean(P(E(fB)))
};

ReferenceBranch reference_branch(std::span<const FeatureMap> fB, const RegistrationHead& head) {
    require(!fB.empty(), "registration needs at least one reference");
    std::vector<FeatureMap> z, p;
    z.reserve(fB.size());
    p.reserve(fB.size());
    for (const auto& f : fB) {
        z.push_back(head.encode(f));
        p.push_back(head.predict(z.back()));
    }
    return {accumulate_reference(z), accumulate_reference(p)};
}

double loss_with_branch(const FeatureMap& fa, const ReferenceBranch& ref, const RegistrationHead& head,
                        DegeneratePolicy policy) {
    const FeatureMap z_a = head.encode(fa);
    const FeatureMap p_a = head.predict(z_a);
    return 0.5 * (cosine_similarity_loss(p_a, ref.z_B, policy) + cosine_similarity_loss(ref.p_B, z_a, policy));
}

} // namespace

double symmetrized_registration_loss(const FeatureMap& fa, std::span<const FeatureMap> fB,
                                     const RegistrationHead& head, DegeneratePolicy policy) {
    require(!fa.empty(), "empty feature map");
    for (const auto& f : fB) require(f.same_shape(fa), "reference shape mismatch");
    return loss_with_branch(fa, reference_branch(fB, head), head, policy);
}

namespace {

// Gradient of the non-stop-gradient half, 1/2 D(P(E(warp(moving, t))), z_B),
// with respect to the six theta entries.
std::array<double, 6> analytic_gradient(const FeatureMap& moving, const AffineTransform& t,
                                        const ReferenceBranch& ref, const RegistrationHead& head) {
    const FeatureMap fa = affine_warp(moving, t);
    const FeatureMap p_a = head.predict(head.encode(fa));
    const CosineTerms terms = cosine_terms(p_a, ref.z_B, DegeneratePolicy::skip, true);

    // back through the linear head: dL/dfa = (P E)^T dL/dp_a per position
    std::vector<double> grad_fa;
    if (head.mode() == RegistrationHead::Mode::identity) {
        grad_fa = terms.grad_p;
    } else {
        const Eigen::MatrixXd pe = head.predictor() * head.encoder();
        FeatureMap gp(p_a.channels(), p_a.height(), p_a.width(), terms.grad_p);
        grad_fa = apply_linear(pe.transpose(), gp).data();
    }
    const auto dwarp = warp_gradient_theta(moving, t);
    std::array<double, 6> g{};
    for (std::size_t i = 0; i < grad_fa.size(); ++i) {
        if (grad_fa[i] == 0.0) continue;
        for (int k = 0; k < 6; ++k) g[k] += 0.5 * grad_fa[i] * dwarp[i][k];
    }
    return g;
}

std::array<double, 6> finite_difference_gradient(const FeatureMap& moving, const AffineTransform& t,
                                                 const ReferenceBranch& ref, const RegistrationHead& head) {
    auto half_loss = [&](const AffineTransform& tt) {
        const FeatureMap p_a = head.predict(head.encode(affine_warp(moving, tt)));
        return 0.5 * cosine_similarity_loss(p_a, ref.z_B, DegeneratePolicy::skip);
    };
    constexpr double h = 1e-5;
    std::array<double, 6> g{};
    for (int k = 0; k < 6; ++k) {
        AffineTransform plus = t, minus = t;
        plus.theta(k / 3, k % 3) += h;
        minus.theta(k / 3, k % 3) -= h;
        g[k] = (half_loss(plus) - half_loss(minus)) / (2 * h);
    }
    return g;
}

} // namespace

RegistrationResult register_affine(const FeatureMap& moving, std::span<const FeatureMap> refs,
                                   const RegistrationHead& head, const RegistrationConfig& cfg) {
    require(cfg.learning_rate > 0.0, "learning_rate must be positive");
    require(cfg.max_iters >= 1, "max_iters must be at least 1");
    require(!moving.empty(), "empty feature map");
    for (const auto& r : refs) require(r.same_shape(moving), "reference shape mismatch");

    const ReferenceBranch ref = reference_branch(refs, head);
    auto loss_at = [&](const AffineTransform& t) {
        return loss_with_branch(affine_warp(moving, t), ref, head, DegeneratePolicy::skip);
    };

    RegistrationResult res;
    AffineTransform cur = AffineTransform::identity();
    double cur_loss = loss_at(cur);
    if (!std::isfinite(cur_loss)) throw Error("registration diverged");
    res.loss_history.push_back(cur_loss);

    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        const auto g = cfg.grad_mode == RegistrationConfig::GradMode::analytic
                           ? analytic_gradient(moving, cur, ref, head)
                           : finite_difference_gradient(moving, cur, ref, head);
        for (double v : g)
            if (!std::isfinite(v)) throw Error("registration diverged");

        double step = cfg.learning_rate;
        bool accepted = false;
        AffineTransform next;
        double next_loss = 0.0;
        for (int halvings = 0; halvings <= 20; ++halvings, step *= 0.5) {
            next = cur;
            for (int k = 0; k < 6; ++k) next.theta(k / 3, k % 3) -= step * g[k];
            try {
                next_loss = loss_at(next);
            } catch (const Error&) {
                continue; // the step pushed the whole map out of view
            }
            if (!std::isfinite(next_loss)) throw Error("registration diverged");
            if (next_loss <= cur_loss) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        const double change = cur_loss - next_loss;
        cur = next;
        cur_loss = next_loss;
        res.loss_history.push_back(cur_loss);
        res.iterations = it + 1;
        if (change < cfg.tol) break;
    }
    res.transform = cur;
    res.final_loss = cur_loss;
    return res;
}

FeatureMap inverse_remap(const FeatureMap& grid, std::span<const AffineTransform> transforms, std::size_t out_h,
                         std::size_t out_w) {
    require(!grid.empty(), "empty feature map");
    Eigen::Matrix3d inv = Eigen::Matrix3d::Identity();
    for (auto it = transforms.rbegin(); it != transforms.rend(); ++it)
        inv = inv * it->inverse().augmented();
    AffineTransform back;
    back.theta = inv.topRows<2>();

    const std::size_t H = grid.height(), W = grid.width();
    const double fill = *std::min_element(grid.data().begin(), grid.data().end());
    FeatureMap out(grid.channels(), H, W);
    constexpr double eps = 1e-9;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const SamplePoint s = sample_point(back, x, y, H, W);
            const bool valid = s.px >= -eps && s.py >= -eps && s.px <= static_cast<double>(W - 1) + eps &&
                               s.py <= static_cast<double>(H - 1) + eps;
            for (std::size_t c = 0; c < grid.channels(); ++c) {
                if (!valid) {
                    out.at(c, y, x) = fill;
                    continue;
                }
                // clamp-to-edge inside the valid box
                auto plane = grid.channel(c);
                auto val = [&](long xx, long yy) {
                    xx = std::clamp<long>(xx, 0, static_cast<long>(W) - 1);
                    yy = std::clamp<long>(yy, 0, static_cast<long>(H) - 1);
                    return plane[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
                };
                const Corners v{val(s.x0, s.y0), val(s.x0 + 1, s.y0), val(s.x0, s.y0 + 1), val(s.x0 + 1, s.y0 + 1)};
                out.at(c, y, x) = interpolate(v, s.fx, s.fy);
            }
        }
    return resize_bilinear(out, out_h, out_w);
}

} // namespace fsad
