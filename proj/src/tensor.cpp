#include "segclr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_set>

namespace segclr::ad {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= std::size_t(d);
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {

Value make_node(Shape shape, std::vector<Value> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->x.assign(shape_numel(n->shape), 0.0);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->needs_grad) n->needs_grad = true;
    return n;
}

void check_same_shape(const Value& a, const Value& b, const char* op) {
    if (a->shape != b->shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a->shape) + " vs " + shape_str(b->shape));
}

}  // namespace

Value constant(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("constant: data size does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->x = std::move(data);
    return n;
}

Value scalar(double v) { return constant({1}, {v}); }

Value param(Shape shape, std::vector<double> data) {
    auto n = constant(std::move(shape), std::move(data));
    n->needs_grad = true;
    return n;
}

// ---- elementwise ----------------------------------------------------------

Value add(const Value& a, const Value& b) {
    check_same_shape(a, b, "add");
    auto out = make_node(a->shape, {a, b});
    for (std::size_t i = 0; i < out->numel(); ++i) out->x[i] = a->x[i] + b->x[i];
    Node* o = out.get();
    out->backprop = [o, a, b] {
        if (a->needs_grad) {
            auto& ga = a->grad();
            for (std::size_t i = 0; i < o->x.size(); ++i) ga[i] += o->g[i];
        }
        if (b->needs_grad) {
            auto& gb = b->grad();
            for (std::size_t i = 0; i < o->x.size(); ++i) gb[i] += o->g[i];
        }
    };
    return out;
}

Value sub(const Value& a, const Value& b) {
    check_same_shape(a, b, "sub");
    auto out = make_node(a->shape, {a, b});
    for (std::size_t i = 0; i < out->numel(); ++i) out->x[i] = a->x[i] - b->x[i];
    Node* o = out.get();
    out->backprop = [o, a, b] {
        if (a->needs_grad) {
            auto& ga = a->grad();
            for (std::size_t i = 0; i < o->x.size(); ++i) ga[i] += o->g[i];
        }
        if (b->needs_grad) {
            auto& gb = b->grad();
            for (std::size_t i = 0; i < o->x.size(); ++i) gb[i] -= o->g[i];
        }
    };
    return out;
}

Value mul(const Value& a, const Value& b) {
    check_same_shape(a, b, "mul");
    auto out = make_node(a->shape, {a, b});
    for (std::size_t i = 0; i < out->numel(); ++i) out->x[i] = a->x[i] * b->x[i];
    Node* o = out.get();
    out->backprop = [o, a, b] {
        if (a->needs_grad) {
            auto& ga = a->grad();
            for (std::size_t i = 0; i < o->x.size(); ++i) ga[i] += o->g[i] * b->x[i];
        }
        if (b->needs_grad) {
            auto& gb = b->grad();
            for (std::size_t i = 0; i < o->x.size(); ++i) gb[i] += o->g[i] * a->x[i];
        }
    };
    return out;
}

Value scale(const Value& a, double s) {
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->x[i] = a->x[i] * s;
    Node* o = out.get();
    out->backprop = [o, a, s] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (std::size_t i = 0; i < o->x.size(); ++i) ga[i] += o->g[i] * s;
    };
    return out;
}

Value add_scalar(const Value& a, double s) {
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->x[i] = a->x[i] + s;
    Node* o = out.get();
    out->backprop = [o, a] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (std::size_t i = 0; i < o->x.size(); ++i) ga[i] += o->g[i];
    };
    return out;
}

Value neg(const Value& a) { return scale(a, -1.0); }

Value relu(const Value& a) {
    auto out = make_node(a->shape, {a});
    // x*0 instead of literal 0 so NaN inputs propagate instead of washing out
    for (std::size_t i = 0; i < out->numel(); ++i)
        out->x[i] = a->x[i] > 0.0 ? a->x[i] : a->x[i] * 0.0;
    Node* o = out.get();
    out->backprop = [o, a] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (std::size_t i = 0; i < o->x.size(); ++i)
            if (a->x[i] > 0.0) ga[i] += o->g[i];
    };
    return out;
}

Value sigmoid(const Value& a) {
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->x[i] = 1.0 / (1.0 + std::exp(-a->x[i]));
    Node* o = out.get();
    out->backprop = [o, a] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (std::size_t i = 0; i < o->x.size(); ++i)
            ga[i] += o->g[i] * o->x[i] * (1.0 - o->x[i]);
    };
    return out;
}

Value log_(const Value& a) {
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->x[i] = std::log(a->x[i]);
    Node* o = out.get();
    out->backprop = [o, a] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (std::size_t i = 0; i < o->x.size(); ++i) ga[i] += o->g[i] / a->x[i];
    };
    return out;
}

Value exp_(const Value& a) {
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->x[i] = std::exp(a->x[i]);
    Node* o = out.get();
    out->backprop = [o, a] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (std::size_t i = 0; i < o->x.size(); ++i) ga[i] += o->g[i] * o->x[i];
    };
    return out;
}

Value sqrt_(const Value& a) {
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->numel(); ++i) out->x[i] = std::sqrt(a->x[i]);
    Node* o = out.get();
    out->backprop = [o, a] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (std::size_t i = 0; i < o->x.size(); ++i) ga[i] += o->g[i] * 0.5 / o->x[i];
    };
    return out;
}

Value stopgrad(const Value& a) {
    // Deliberately not wired to the parent: backward never reaches `a`.
    auto n = std::make_shared<Node>();
    n->shape = a->shape;
    n->x = a->x;
    n->parents = {a};  // keeps the subgraph alive, but needs_grad stays false
    return n;
}

Value reshape(const Value& a, Shape shape) {
    if (shape_numel(shape) != a->numel())
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(a->shape) +
                                    " -> " + shape_str(shape));
    auto out = make_node(std::move(shape), {a});
    out->x = a->x;
    Node* o = out.get();
    out->backprop = [o, a] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (std::size_t i = 0; i < o->x.size(); ++i) ga[i] += o->g[i];
    };
    return out;
}

// ---- linear algebra -------------------------------------------------------

Value dense(const Value& x, const Value& w, const Value& b) {
    if (x->shape.size() != 2 || w->shape.size() != 2 || b->shape.size() != 1)
        throw std::invalid_argument("dense: expected x[N,Di], w[Do,Di], b[Do]");
    const int N = x->shape[0], Di = x->shape[1], Do = w->shape[0];
    if (w->shape[1] != Di || b->shape[0] != Do)
        throw std::invalid_argument("dense: dimension mismatch");
    auto out = make_node({N, Do}, {x, w, b});
    for (int n = 0; n < N; ++n) {
        const double* xr = &x->x[std::size_t(n) * Di];
        double* orow = &out->x[std::size_t(n) * Do];
        for (int o = 0; o < Do; ++o) {
            const double* wr = &w->x[std::size_t(o) * Di];
            double acc = b->x[o];
            for (int i = 0; i < Di; ++i) acc += xr[i] * wr[i];
            orow[o] = acc;
        }
    }
    Node* onode = out.get();
    out->backprop = [onode, x, w, b, N, Di, Do] {
        const double* og = onode->g.data();
        if (x->needs_grad) {
            auto& gx = x->grad();
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < Do; ++o) {
                    const double go = og[std::size_t(n) * Do + o];
                    const double* wr = &w->x[std::size_t(o) * Di];
                    double* gxr = &gx[std::size_t(n) * Di];
                    for (int i = 0; i < Di; ++i) gxr[i] += go * wr[i];
                }
        }
        if (w->needs_grad) {
            auto& gw = w->grad();
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < Do; ++o) {
                    const double go = og[std::size_t(n) * Do + o];
                    const double* xr = &x->x[std::size_t(n) * Di];
                    double* gwr = &gw[std::size_t(o) * Di];
                    for (int i = 0; i < Di; ++i) gwr[i] += go * xr[i];
                }
        }
        if (b->needs_grad) {
            auto& gb = b->grad();
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < Do; ++o) gb[o] += og[std::size_t(n) * Do + o];
        }
    };
    return out;
}

Value matmul_nt(const Value& a, const Value& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[1])
        throw std::invalid_argument("matmul_nt: expected a[M,K], b[N,K]");
    const int M = a->shape[0], K = a->shape[1], N = b->shape[0];
    auto out = make_node({M, N}, {a, b});
    for (int m = 0; m < M; ++m) {
        const double* ar = &a->x[std::size_t(m) * K];
        for (int n = 0; n < N; ++n) {
            const double* br = &b->x[std::size_t(n) * K];
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += ar[k] * br[k];
            out->x[std::size_t(m) * N + n] = acc;
        }
    }
    Node* o = out.get();
    out->backprop = [o, a, b, M, K, N] {
        const double* og = o->g.data();
        if (a->needs_grad) {
            auto& ga = a->grad();
            for (int m = 0; m < M; ++m)
                for (int n = 0; n < N; ++n) {
                    const double g = og[std::size_t(m) * N + n];
                    const double* br = &b->x[std::size_t(n) * K];
                    double* gar = &ga[std::size_t(m) * K];
                    for (int k = 0; k < K; ++k) gar[k] += g * br[k];
                }
        }
        if (b->needs_grad) {
            auto& gb = b->grad();
            for (int m = 0; m < M; ++m)
                for (int n = 0; n < N; ++n) {
                    const double g = og[std::size_t(m) * N + n];
                    const double* ar = &a->x[std::size_t(m) * K];
                    double* gbr = &gb[std::size_t(n) * K];
                    for (int k = 0; k < K; ++k) gbr[k] += g * ar[k];
                }
        }
    };
    return out;
}

// ---- convolution / spatial ------------------------------------------------

Value conv2d(const Value& x, const Value& w, const Value& b, int pad) {
    if (x->shape.size() != 4 || w->shape.size() != 4 || b->shape.size() != 1)
        throw std::invalid_argument("conv2d: expected x[N,Ci,H,W], w[Co,Ci,kh,kw], b[Co]");
    const int N = x->shape[0], Ci = x->shape[1], H = x->shape[2], W = x->shape[3];
    const int Co = w->shape[0], kh = w->shape[2], kw = w->shape[3];
    if (w->shape[1] != Ci || b->shape[0] != Co)
        throw std::invalid_argument("conv2d: channel mismatch");
    const int Ho = H + 2 * pad - kh + 1;
    const int Wo = W + 2 * pad - kw + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: kernel larger than input");
    auto out = make_node({N, Co, Ho, Wo}, {x, w, b});

    const auto xi = [Ci, H, W](int n, int c) { return std::size_t(n * Ci + c) * H * W; };
    const auto oi = [Co, Ho, Wo](int n, int c) { return std::size_t(n * Co + c) * Ho * Wo; };

    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
            double* optr = &out->x[oi(n, co)];
            const double bias = b->x[co];
            for (int i = 0; i < Ho * Wo; ++i) optr[i] = bias;
            for (int ci = 0; ci < Ci; ++ci) {
                const double* xptr = &x->x[xi(n, ci)];
                for (int fh = 0; fh < kh; ++fh)
                    for (int fw = 0; fw < kw; ++fw) {
                        const double wv =
                            w->x[std::size_t(((co * Ci + ci) * kh + fh)) * kw + fw];
                        if (wv == 0.0) continue;
                        for (int oh = 0; oh < Ho; ++oh) {
                            const int ih = oh + fh - pad;
                            if (ih < 0 || ih >= H) continue;
                            const int wlo = std::max(0, pad - fw);
                            const int whi = std::min(Wo, W + pad - fw);
                            const double* xrow = xptr + std::size_t(ih) * W + (wlo + fw - pad);
                            double* orow = optr + std::size_t(oh) * Wo + wlo;
                            for (int ow = wlo; ow < whi; ++ow) *orow++ += wv * *xrow++;
                        }
                    }
            }
        }

    Node* o = out.get();
    out->backprop = [o, x, w, b, pad, N, Ci, H, W, Co, kh, kw, Ho, Wo, xi, oi] {
        const double* og = o->g.data();
        if (b->needs_grad) {
            auto& gb = b->grad();
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co) {
                    const double* optr = &og[oi(n, co)];
                    double acc = 0.0;
                    for (int i = 0; i < Ho * Wo; ++i) acc += optr[i];
                    gb[co] += acc;
                }
        }
        const bool need_x = x->needs_grad, need_w = w->needs_grad;
        if (!need_x && !need_w) return;
        if (need_x) x->grad();
        if (need_w) w->grad();
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co) {
                const double* gptr = &og[oi(n, co)];
                for (int ci = 0; ci < Ci; ++ci) {
                    const double* xptr = &x->x[xi(n, ci)];
                    double* gxptr = need_x ? &x->g[xi(n, ci)] : nullptr;
                    for (int fh = 0; fh < kh; ++fh)
                        for (int fw = 0; fw < kw; ++fw) {
                            const std::size_t widx =
                                std::size_t(((co * Ci + ci) * kh + fh)) * kw + fw;
                            const double wv = w->x[widx];
                            double wacc = 0.0;
                            for (int oh = 0; oh < Ho; ++oh) {
                                const int ih = oh + fh - pad;
                                if (ih < 0 || ih >= H) continue;
                                const int wlo = std::max(0, pad - fw);
                                const int whi = std::min(Wo, W + pad - fw);
                                const double* grow = gptr + std::size_t(oh) * Wo + wlo;
                                const std::size_t xoff = std::size_t(ih) * W + (wlo + fw - pad);
                                if (need_w) {
                                    const double* xrow = xptr + xoff;
                                    for (int k = 0; k < whi - wlo; ++k) wacc += grow[k] * xrow[k];
                                }
                                if (need_x) {
                                    double* gxrow = gxptr + xoff;
                                    for (int k = 0; k < whi - wlo; ++k) gxrow[k] += grow[k] * wv;
                                }
                            }
                            if (need_w) w->g[widx] += wacc;
                        }
                }
            }
    };
    return out;
}

Value maxpool2(const Value& x) {
    if (x->shape.size() != 4 || x->shape[2] % 2 != 0 || x->shape[3] % 2 != 0)
        throw std::invalid_argument("maxpool2: expected [N,C,H,W] with even H and W");
    const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    const int Ho = H / 2, Wo = W / 2;
    auto out = make_node({N, C, Ho, Wo}, {x});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out->numel());
    for (int nc = 0; nc < N * C; ++nc) {
        const double* xp = &x->x[std::size_t(nc) * H * W];
        double* op = &out->x[std::size_t(nc) * Ho * Wo];
        std::uint32_t* am = &(*argmax)[std::size_t(nc) * Ho * Wo];
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                const int base = (2 * oh) * W + 2 * ow;
                int best = base;
                double bv = xp[base];
                const int cands[3] = {base + 1, base + W, base + W + 1};
                for (int c : cands)
                    if (xp[c] > bv) {
                        bv = xp[c];
                        best = c;
                    }
                op[oh * Wo + ow] = bv;
                am[oh * Wo + ow] = std::uint32_t(best);
            }
    }
    Node* o = out.get();
    out->backprop = [o, x, argmax, N, C, H, W, Ho, Wo] {
        if (!x->needs_grad) return;
        auto& gx = x->grad();
        for (int nc = 0; nc < N * C; ++nc) {
            const double* gp = &o->g[std::size_t(nc) * Ho * Wo];
            const std::uint32_t* am = &(*argmax)[std::size_t(nc) * Ho * Wo];
            double* gxp = &gx[std::size_t(nc) * H * W];
            for (int i = 0; i < Ho * Wo; ++i) gxp[am[i]] += gp[i];
        }
    };
    return out;
}

Value upsample_nearest2(const Value& x) {
    if (x->shape.size() != 4) throw std::invalid_argument("upsample_nearest2: expected [N,C,H,W]");
    const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    const int Ho = H * 2, Wo = W * 2;
    auto out = make_node({N, C, Ho, Wo}, {x});
    for (int nc = 0; nc < N * C; ++nc) {
        const double* xp = &x->x[std::size_t(nc) * H * W];
        double* op = &out->x[std::size_t(nc) * Ho * Wo];
        for (int oh = 0; oh < Ho; ++oh) {
            const double* xrow = xp + std::size_t(oh / 2) * W;
            double* orow = op + std::size_t(oh) * Wo;
            for (int ow = 0; ow < Wo; ++ow) orow[ow] = xrow[ow / 2];
        }
    }
    Node* o = out.get();
    out->backprop = [o, x, N, C, H, W, Ho, Wo] {
        if (!x->needs_grad) return;
        auto& gx = x->grad();
        for (int nc = 0; nc < N * C; ++nc) {
            const double* gp = &o->g[std::size_t(nc) * Ho * Wo];
            double* gxp = &gx[std::size_t(nc) * H * W];
            for (int oh = 0; oh < Ho; ++oh) {
                double* gxrow = gxp + std::size_t(oh / 2) * W;
                const double* grow = gp + std::size_t(oh) * Wo;
                for (int ow = 0; ow < Wo; ++ow) gxrow[ow / 2] += grow[ow];
            }
        }
    };
    return out;
}

Value concat_channels(const Value& a, const Value& b) {
    if (a->shape.size() != 4 || b->shape.size() != 4 || a->shape[0] != b->shape[0] ||
        a->shape[2] != b->shape[2] || a->shape[3] != b->shape[3])
        throw std::invalid_argument("concat_channels: incompatible shapes");
    const int N = a->shape[0], Ca = a->shape[1], Cb = b->shape[1];
    const int H = a->shape[2], W = a->shape[3];
    const std::size_t plane = std::size_t(H) * W;
    auto out = make_node({N, Ca + Cb, H, W}, {a, b});
    for (int n = 0; n < N; ++n) {
        std::copy_n(&a->x[std::size_t(n) * Ca * plane], Ca * plane,
                    &out->x[std::size_t(n) * (Ca + Cb) * plane]);
        std::copy_n(&b->x[std::size_t(n) * Cb * plane], Cb * plane,
                    &out->x[std::size_t(n) * (Ca + Cb) * plane + Ca * plane]);
    }
    Node* o = out.get();
    out->backprop = [o, a, b, N, Ca, Cb, plane] {
        if (a->needs_grad) {
            auto& ga = a->grad();
            for (int n = 0; n < N; ++n) {
                const double* gp = &o->g[std::size_t(n) * (Ca + Cb) * plane];
                double* gap = &ga[std::size_t(n) * Ca * plane];
                for (std::size_t i = 0; i < Ca * plane; ++i) gap[i] += gp[i];
            }
        }
        if (b->needs_grad) {
            auto& gb = b->grad();
            for (int n = 0; n < N; ++n) {
                const double* gp = &o->g[std::size_t(n) * (Ca + Cb) * plane + Ca * plane];
                double* gbp = &gb[std::size_t(n) * Cb * plane];
                for (std::size_t i = 0; i < Cb * plane; ++i) gbp[i] += gp[i];
            }
        }
    };
    return out;
}

Value concat_rows(const Value& a, const Value& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[1])
        throw std::invalid_argument("concat_rows: expected [Na,D] and [Nb,D]");
    const int Na = a->shape[0], Nb = b->shape[0], D = a->shape[1];
    auto out = make_node({Na + Nb, D}, {a, b});
    std::copy(a->x.begin(), a->x.end(), out->x.begin());
    std::copy(b->x.begin(), b->x.end(), out->x.begin() + a->x.size());
    Node* o = out.get();
    out->backprop = [o, a, b] {
        if (a->needs_grad) {
            auto& ga = a->grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o->g[i];
        }
        if (b->needs_grad) {
            auto& gb = b->grad();
            const std::size_t off = a->x.size();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o->g[off + i];
        }
    };
    return out;
}

Value group_norm(const Value& x, const Value& gamma, const Value& beta, int groups, double eps) {
    Shape s = x->shape;
    int N, C, H = 1, W = 1;
    if (s.size() == 4) {
        N = s[0]; C = s[1]; H = s[2]; W = s[3];
    } else if (s.size() == 2) {
        N = s[0]; C = s[1];
    } else {
        throw std::invalid_argument("group_norm: expected [N,C,H,W] or [N,C]");
    }
    if (groups <= 0 || C % groups != 0)
        throw std::invalid_argument("group_norm: groups must divide channels (" +
                                    std::to_string(C) + " % " + std::to_string(groups) + ")");
    if (gamma->shape != Shape{C} || beta->shape != Shape{C})
        throw std::invalid_argument("group_norm: gamma/beta must be per-channel");
    const int cg = C / groups;                  // channels per group
    const std::size_t plane = std::size_t(H) * W;
    const std::size_t m = std::size_t(cg) * plane;  // elements per group

    auto out = make_node(s, {x, gamma, beta});
    auto mean = std::make_shared<std::vector<double>>(std::size_t(N) * groups);
    auto istd = std::make_shared<std::vector<double>>(std::size_t(N) * groups);

    for (int n = 0; n < N; ++n)
        for (int g = 0; g < groups; ++g) {
            const std::size_t base = (std::size_t(n) * C + std::size_t(g) * cg) * plane;
            double mu = 0.0;
            for (std::size_t i = 0; i < m; ++i) mu += x->x[base + i];
            mu /= double(m);
            double var = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const double d = x->x[base + i] - mu;
                var += d * d;
            }
            var /= double(m);
            const double is = 1.0 / std::sqrt(var + eps);
            (*mean)[std::size_t(n) * groups + g] = mu;
            (*istd)[std::size_t(n) * groups + g] = is;
            for (int c = 0; c < cg; ++c) {
                const double ga = gamma->x[std::size_t(g) * cg + c];
                const double be = beta->x[std::size_t(g) * cg + c];
                const std::size_t cbase = base + std::size_t(c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    out->x[cbase + i] = ga * (x->x[cbase + i] - mu) * is + be;
            }
        }

    Node* o = out.get();
    out->backprop = [o, x, gamma, beta, mean, istd, N, C, groups, cg, plane, m] {
        const bool need_x = x->needs_grad;
        if (need_x) x->grad();
        std::vector<double>* ggamma = gamma->needs_grad ? &gamma->grad() : nullptr;
        std::vector<double>* gbeta = beta->needs_grad ? &beta->grad() : nullptr;
        for (int n = 0; n < N; ++n)
            for (int g = 0; g < groups; ++g) {
                const std::size_t base = (std::size_t(n) * C + std::size_t(g) * cg) * plane;
                const double mu = (*mean)[std::size_t(n) * groups + g];
                const double is = (*istd)[std::size_t(n) * groups + g];
                // accumulate per-channel affine grads and the two group sums
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int c = 0; c < cg; ++c) {
                    const double ga = gamma->x[std::size_t(g) * cg + c];
                    const std::size_t cbase = base + std::size_t(c) * plane;
                    double gsum = 0.0, gxsum = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double go = o->g[cbase + i];
                        const double xhat = (x->x[cbase + i] - mu) * is;
                        gsum += go;
                        gxsum += go * xhat;
                        sum_dxhat += go * ga;
                        sum_dxhat_xhat += go * ga * xhat;
                    }
                    if (gbeta) (*gbeta)[std::size_t(g) * cg + c] += gsum;
                    if (ggamma) (*ggamma)[std::size_t(g) * cg + c] += gxsum;
                }
                if (need_x) {
                    const double inv_m = 1.0 / double(m);
                    for (int c = 0; c < cg; ++c) {
                        const double ga = gamma->x[std::size_t(g) * cg + c];
                        const std::size_t cbase = base + std::size_t(c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double xhat = (x->x[cbase + i] - mu) * is;
                            const double dxhat = o->g[cbase + i] * ga;
                            x->g[cbase + i] +=
                                is * (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
                        }
                    }
                }
            }
    };
    return out;
}

// ---- reductions -----------------------------------------------------------

Value sum_all(const Value& a) {
    auto out = make_node({1}, {a});
    double acc = 0.0;
    for (double v : a->x) acc += v;
    out->x[0] = acc;
    Node* o = out.get();
    out->backprop = [o, a] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        const double g = o->g[0];
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
    return out;
}

Value mean_all(const Value& a) { return scale(sum_all(a), 1.0 / double(a->numel())); }

Value row_sum(const Value& a) {
    if (a->shape.size() != 2) throw std::invalid_argument("row_sum: expected [N,D]");
    const int N = a->shape[0], D = a->shape[1];
    auto out = make_node({N}, {a});
    for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        const double* r = &a->x[std::size_t(n) * D];
        for (int d = 0; d < D; ++d) acc += r[d];
        out->x[n] = acc;
    }
    Node* o = out.get();
    out->backprop = [o, a, N, D] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (int n = 0; n < N; ++n) {
            const double g = o->g[n];
            double* r = &ga[std::size_t(n) * D];
            for (int d = 0; d < D; ++d) r[d] += g;
        }
    };
    return out;
}

Value spatial_mean(const Value& a) {
    if (a->shape.size() != 4) throw std::invalid_argument("spatial_mean: expected [N,C,H,W]");
    const int N = a->shape[0], C = a->shape[1];
    const std::size_t plane = std::size_t(a->shape[2]) * a->shape[3];
    auto out = make_node({N, C}, {a});
    for (int nc = 0; nc < N * C; ++nc) {
        const double* p = &a->x[std::size_t(nc) * plane];
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        out->x[nc] = acc / double(plane);
    }
    Node* o = out.get();
    out->backprop = [o, a, N, C, plane] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (int nc = 0; nc < N * C; ++nc) {
            const double g = o->g[nc] / double(plane);
            double* p = &ga[std::size_t(nc) * plane];
            for (std::size_t i = 0; i < plane; ++i) p[i] += g;
        }
    };
    return out;
}

Value sum_per_channel(const Value& a) {
    if (a->shape.size() != 4) throw std::invalid_argument("sum_per_channel: expected [N,C,H,W]");
    const int N = a->shape[0], C = a->shape[1];
    const std::size_t plane = std::size_t(a->shape[2]) * a->shape[3];
    auto out = make_node({C}, {a});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = &a->x[(std::size_t(n) * C + c) * plane];
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            out->x[c] += acc;
        }
    Node* o = out.get();
    out->backprop = [o, a, N, C, plane] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const double g = o->g[c];
                double* p = &ga[(std::size_t(n) * C + c) * plane];
                for (std::size_t i = 0; i < plane; ++i) p[i] += g;
            }
    };
    return out;
}

Value l2_normalize_rows(const Value& a) {
    if (a->shape.size() != 2) throw std::invalid_argument("l2_normalize_rows: expected [N,D]");
    const int N = a->shape[0], D = a->shape[1];
    auto out = make_node(a->shape, {a});
    auto inorm = std::make_shared<std::vector<double>>(N);
    for (int n = 0; n < N; ++n) {
        const double* r = &a->x[std::size_t(n) * D];
        double ss = 0.0;
        for (int d = 0; d < D; ++d) ss += r[d] * r[d];
        // clamp keeps an exactly-zero row (dead projection head) finite; the
        // row maps to zero, matching the degenerate cosine convention
        const double in = 1.0 / std::max(std::sqrt(ss), 1e-12);
        (*inorm)[n] = in;
        double* orow = &out->x[std::size_t(n) * D];
        for (int d = 0; d < D; ++d) orow[d] = r[d] * in;
    }
    Node* o = out.get();
    out->backprop = [o, a, inorm, N, D] {
        if (!a->needs_grad) return;
        auto& ga = a->grad();
        for (int n = 0; n < N; ++n) {
            const double in = (*inorm)[n];
            const double* u = &o->x[std::size_t(n) * D];  // normalized row
            const double* go = &o->g[std::size_t(n) * D];
            double dot = 0.0;
            for (int d = 0; d < D; ++d) dot += go[d] * u[d];
            double* gr = &ga[std::size_t(n) * D];
            for (int d = 0; d < D; ++d) gr[d] += in * (go[d] - dot * u[d]);
        }
    };
    return out;
}

// ---- graph ----------------------------------------------------------------

void backward(const Value& root) {
    if (root->numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    // iterative DFS topo sort (graphs can be deep for big batches)
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->needs_grad) n->backprop();
    }
}

}  // namespace segclr::ad
