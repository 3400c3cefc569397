#pragma once

// Independent reference implementations used as test oracles. Everything in
// this header is deliberately written the slow, obvious way and must not
// call into the fast paths it is used to check.

#include <austkit/tensor.hpp>

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

// Plain 6-loop cross-correlation over [N,C,H,W] x [O,C,kh,kw].
inline std::vector<double> conv2d_loops(const std::vector<double>& x, int N, int C, int H, int W,
                                        const std::vector<double>& k, int O, int kh, int kw,
                                        const std::vector<double>& bias, int stride, int pad,
                                        int& OH, int& OW) {
    OH = (H + 2 * pad - kh) / stride + 1;
    OW = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(N) * O * OH * OW, 0.0);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = bias[static_cast<std::size_t>(o)];
                    for (int c = 0; c < C; ++c)
                        for (int i = 0; i < kh; ++i)
                            for (int j = 0; j < kw; ++j) {
                                const int iy = oy * stride - pad + i;
                                const int ix = ox * stride - pad + j;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x[((static_cast<std::size_t>(n) * C + c) * H + iy) * W + ix] *
                                       k[((static_cast<std::size_t>(o) * C + c) * kh + i) * kw + j];
                            }
                    out[((static_cast<std::size_t>(n) * O + o) * OH + oy) * OW + ox] = acc;
                }
    return out;
}

inline double cosine(const double* a, const double* b, int C, double eps = 1e-8) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int c = 0; c < C; ++c) {
        dot += a[c] * b[c];
        na += a[c] * a[c];
        nb += b[c] * b[c];
    }
    return dot / (std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps));
}

// Mean pairwise cosine over ordered cross-region pairs; features as n rows of
// length C, mask as n entries in {0,1}. Returns false when a region is empty.
inline bool pair_means_loops(const std::vector<double>& feats, const std::vector<double>& mask,
                             int n, int C, double& s_inter, double& s_intra) {
    double inter_sum = 0.0, intra_sum = 0.0;
    long inter_cnt = 0, intra_cnt = 0;
    for (int p1 = 0; p1 < n; ++p1)
        for (int p2 = 0; p2 < n; ++p2) {
            if (p1 == p2) continue;
            const double c = cosine(feats.data() + static_cast<std::size_t>(p1) * C,
                                    feats.data() + static_cast<std::size_t>(p2) * C, C);
            if (mask[static_cast<std::size_t>(p1)] != mask[static_cast<std::size_t>(p2)]) {
                inter_sum += c;
                ++inter_cnt;
            } else {
                intra_sum += c;
                ++intra_cnt;
            }
        }
    if (inter_cnt == 0) return false;
    s_inter = inter_sum / static_cast<double>(inter_cnt);
    s_intra = intra_sum / static_cast<double>(intra_cnt);
    return true;
}

// Voting score by the direct double loop: S[p1] = sum_p2 w[p2] * sem[p1,p2] * V[p1,p2].
inline std::vector<double> vote_loops(const std::vector<double>& V, const std::vector<double>& voter_w,
                                      const std::vector<double>* sem, int n) {
    std::vector<double> S(static_cast<std::size_t>(n), 0.0);
    for (int p1 = 0; p1 < n; ++p1)
        for (int p2 = 0; p2 < n; ++p2) {
            double v = V[static_cast<std::size_t>(p1) * n + p2] * voter_w[static_cast<std::size_t>(p2)];
            if (sem) v *= (*sem)[static_cast<std::size_t>(p1) * n + p2];
            S[static_cast<std::size_t>(p1)] += v;
        }
    return S;
}

// Direct evaluation of the SSIM index between two equal-size maps under a
// given window (weights sum to 1), sliding in valid mode.
inline double ssim_direct(const std::vector<double>& x, const std::vector<double>& y, int H, int W,
                          const std::vector<double>& win, int wh, int ww, double c1, double c2) {
    const int OH = H - wh + 1, OW = W - ww + 1;
    double total = 0.0;
    for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
            double mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0, mxy = 0.0;
            for (int i = 0; i < wh; ++i)
                for (int j = 0; j < ww; ++j) {
                    const double w = win[static_cast<std::size_t>(i) * ww + j];
                    const double xv = x[static_cast<std::size_t>(oy + i) * W + (ox + j)];
                    const double yv = y[static_cast<std::size_t>(oy + i) * W + (ox + j)];
                    mx += w * xv;
                    my += w * yv;
                    mxx += w * xv * xv;
                    myy += w * yv * yv;
                    mxy += w * xv * yv;
                }
            const double vx = mxx - mx * mx, vy = myy - my * my, vxy = mxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * vxy + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    return total / (static_cast<double>(OH) * OW);
}

// Central finite differences of a scalar function of a flat parameter vector.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double rel_err(double a, double b, double floor = 1e-4) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

} // namespace oracle
