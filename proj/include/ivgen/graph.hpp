#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ivgen/tensor.hpp"

namespace ivgen::autodiff {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;

// Reverse-mode tape. Nodes are appended in topological order, so backward is
// a single reverse sweep. Gradients are allocated lazily; closures only
// propagate into parents that require gradients.
template <typename T>
class Graph {
public:
    using BackFn = std::function<void(Graph&)>;

    int add_leaf(Tensor<T> val, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(val), Tensor<T>{}, requires_grad, nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    // `back` may be null for nodes nothing differentiates through
    int add(Tensor<T> val, bool requires_grad, BackFn back) {
        nodes_.push_back(Node{std::move(val), Tensor<T>{}, requires_grad, std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    int next_id() const { return static_cast<int>(nodes_.size()); }
    std::size_t size() const { return nodes_.size(); }

    Tensor<T>& val(int id) { return nodes_[static_cast<std::size_t>(id)].val; }
    const Tensor<T>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    bool requires_grad(int id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }

    Tensor<T>& grad(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.numel() == 0) n.grad = Tensor<T>(n.val.shape);
        return n.grad;
    }
    bool has_grad(int id) const {
        return nodes_[static_cast<std::size_t>(id)].grad.numel() != 0;
    }

    void backward(int root) {
        if (g_running_) throw std::logic_error("graph: reentrant backward");
        g_running_ = true;
        Tensor<T>& seed = grad(root);
        for (auto& v : seed.data) v = T(1);
        for (int id = root; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.back && n.grad.numel() != 0) n.back(*this);
        }
        g_running_ = false;
    }

private:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;
        bool requires_grad;
        BackFn back;
    };
    std::deque<Node> nodes_;
    bool g_running_ = false;
};

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
int add(Graph<T>& g, int a, int b) {
    check_same_shape(g.val(a), g.val(b), "autodiff add");
    Tensor<T> out = g.val(a);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += g.val(b).data[i];
    const bool rg = g.requires_grad(a) || g.requires_grad(b);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [a, b, id](Graph<T>& gr) {
        const auto& go = gr.grad(id).data;
        if (gr.requires_grad(a)) {
            auto& ga = gr.grad(a).data;
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (gr.requires_grad(b)) {
            auto& gb = gr.grad(b).data;
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
        }
    });
}

template <typename T>
int sub(Graph<T>& g, int a, int b) {
    check_same_shape(g.val(a), g.val(b), "autodiff sub");
    Tensor<T> out = g.val(a);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= g.val(b).data[i];
    const bool rg = g.requires_grad(a) || g.requires_grad(b);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [a, b, id](Graph<T>& gr) {
        const auto& go = gr.grad(id).data;
        if (gr.requires_grad(a)) {
            auto& ga = gr.grad(a).data;
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (gr.requires_grad(b)) {
            auto& gb = gr.grad(b).data;
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
        }
    });
}

template <typename T>
int mul(Graph<T>& g, int a, int b) {
    check_same_shape(g.val(a), g.val(b), "autodiff mul");
    Tensor<T> out = g.val(a);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= g.val(b).data[i];
    const bool rg = g.requires_grad(a) || g.requires_grad(b);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [a, b, id](Graph<T>& gr) {
        const auto& go = gr.grad(id).data;
        if (gr.requires_grad(a)) {
            auto& ga = gr.grad(a).data;
            const auto& vb = gr.val(b).data;
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * vb[i];
        }
        if (gr.requires_grad(b)) {
            auto& gb = gr.grad(b).data;
            const auto& va = gr.val(a).data;
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * va[i];
        }
    });
}

template <typename T>
int scale(Graph<T>& g, int a, T s) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v *= s;
    const bool rg = g.requires_grad(a);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [a, s, id](Graph<T>& gr) {
        const auto& go = gr.grad(id).data;
        auto& ga = gr.grad(a).data;
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
    });
}

template <typename T>
int silu(Graph<T>& g, int a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) {
        const T s = T(1) / (T(1) + std::exp(-v));
        v = v * s;
    }
    const bool rg = g.requires_grad(a);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [a, id](Graph<T>& gr) {
        const auto& go = gr.grad(id).data;
        auto& ga = gr.grad(a).data;
        const auto& va = gr.val(a).data;
        for (std::size_t i = 0; i < go.size(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-va[i]));
            ga[i] += go[i] * (s * (T(1) + va[i] * (T(1) - s)));
        }
    });
}

// mean of squares: L = (1/N) sum x_i^2, scalar output of shape {1}
template <typename T>
int mean_sq(Graph<T>& g, int a) {
    const auto& va = g.val(a).data;
    T acc = T(0);
    for (const T& v : va) acc += v * v;
    Tensor<T> out({1});
    out.data[0] = acc / static_cast<T>(va.size());
    const bool rg = g.requires_grad(a);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [a, id](Graph<T>& gr) {
        const T go = gr.grad(id).data[0];
        auto& ga = gr.grad(a).data;
        const auto& va = gr.val(a).data;
        const T n = static_cast<T>(va.size());
        for (std::size_t i = 0; i < va.size(); ++i) ga[i] += go * T(2) * va[i] / n;
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
int reshape(Graph<T>& g, int a, std::vector<int> shape) {
    Tensor<T> out = g.val(a).reshaped(std::move(shape));
    const bool rg = g.requires_grad(a);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [a, id](Graph<T>& gr) {
        const auto& go = gr.grad(id).data;
        auto& ga = gr.grad(a).data;
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
}

// concat two (F,H,W,C) maps along channels
template <typename T>
int concat_ch(Graph<T>& g, int a, int b) {
    const Tensor<T>& va = g.val(a);
    const Tensor<T>& vb = g.val(b);
    if (va.ndim() != 4 || vb.ndim() != 4 || va.dim(0) != vb.dim(0) || va.dim(1) != vb.dim(1) ||
        va.dim(2) != vb.dim(2))
        throw std::invalid_argument("concat_ch: incompatible shapes " + shape_str(va) + " vs " +
                                    shape_str(vb));
    const int ca = va.dim(3), cb = vb.dim(3);
    const int spatial = va.dim(0) * va.dim(1) * va.dim(2);
    Tensor<T> out({va.dim(0), va.dim(1), va.dim(2), ca + cb});
    for (int p = 0; p < spatial; ++p) {
        for (int c = 0; c < ca; ++c)
            out.data[static_cast<std::size_t>(p) * (ca + cb) + c] =
                va.data[static_cast<std::size_t>(p) * ca + c];
        for (int c = 0; c < cb; ++c)
            out.data[static_cast<std::size_t>(p) * (ca + cb) + ca + c] =
                vb.data[static_cast<std::size_t>(p) * cb + c];
    }
    const bool rg = g.requires_grad(a) || g.requires_grad(b);
    const int id = g.next_id();
    return g.add(std::move(out), rg,
                 !rg ? typename Graph<T>::BackFn{} : [a, b, ca, cb, spatial, id](Graph<T>& gr) {
                     const auto& go = gr.grad(id).data;
                     if (gr.requires_grad(a)) {
                         auto& ga = gr.grad(a).data;
                         for (int p = 0; p < spatial; ++p)
                             for (int c = 0; c < ca; ++c)
                                 ga[static_cast<std::size_t>(p) * ca + c] +=
                                     go[static_cast<std::size_t>(p) * (ca + cb) + c];
                     }
                     if (gr.requires_grad(b)) {
                         auto& gb = gr.grad(b).data;
                         for (int p = 0; p < spatial; ++p)
                             for (int c = 0; c < cb; ++c)
                                 gb[static_cast<std::size_t>(p) * cb + c] +=
                                     go[static_cast<std::size_t>(p) * (ca + cb) + ca + c];
                     }
                 });
}

// (F,H,W,C) -> (H*W, F, C): frame sequences per spatial site, for temporal
// attention. Row-major (F,H,W,C) is already (F, H*W, C) for spatial tokens.
template <typename T>
int to_temporal_tokens(Graph<T>& g, int a) {
    const Tensor<T>& va = g.val(a);
    if (va.ndim() != 4) throw std::invalid_argument("to_temporal_tokens: expected 4-d");
    const int F = va.dim(0), P = va.dim(1) * va.dim(2), C = va.dim(3);
    Tensor<T> out({P, F, C});
    for (int f = 0; f < F; ++f)
        for (int p = 0; p < P; ++p)
            for (int c = 0; c < C; ++c)
                out.data[(static_cast<std::size_t>(p) * F + f) * C + c] =
                    va.data[(static_cast<std::size_t>(f) * P + p) * C + c];
    const bool rg = g.requires_grad(a);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [a, F, P, C, id](Graph<T>& gr) {
        const auto& go = gr.grad(id).data;
        auto& ga = gr.grad(a).data;
        for (int f = 0; f < F; ++f)
            for (int p = 0; p < P; ++p)
                for (int c = 0; c < C; ++c)
                    ga[(static_cast<std::size_t>(f) * P + p) * C + c] +=
                        go[(static_cast<std::size_t>(p) * F + f) * C + c];
    });
}

// inverse of to_temporal_tokens: (H*W, F, C) -> (F, H, W, C)
template <typename T>
int from_temporal_tokens(Graph<T>& g, int a, int height, int width) {
    const Tensor<T>& va = g.val(a);
    if (va.ndim() != 3 || va.dim(0) != height * width)
        throw std::invalid_argument("from_temporal_tokens: shape mismatch");
    const int P = va.dim(0), F = va.dim(1), C = va.dim(2);
    Tensor<T> out({F, height, width, C});
    for (int p = 0; p < P; ++p)
        for (int f = 0; f < F; ++f)
            for (int c = 0; c < C; ++c)
                out.data[(static_cast<std::size_t>(f) * P + p) * C + c] =
                    va.data[(static_cast<std::size_t>(p) * F + f) * C + c];
    const bool rg = g.requires_grad(a);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [a, F, P, C, id](Graph<T>& gr) {
        const auto& go = gr.grad(id).data;
        auto& ga = gr.grad(a).data;
        for (int p = 0; p < P; ++p)
            for (int f = 0; f < F; ++f)
                for (int c = 0; c < C; ++c)
                    ga[(static_cast<std::size_t>(p) * F + f) * C + c] +=
                        go[(static_cast<std::size_t>(f) * P + p) * C + c];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

// tokens (R, Cin) x weight (Cin, Cout) + bias (Cout). Accepts any tensor whose
// trailing dim is Cin; output keeps the leading shape with Cout trailing.
template <typename T>
int linear(Graph<T>& g, int x, int w, int b) {
    const Tensor<T>& vx = g.val(x);
    const Tensor<T>& vw = g.val(w);
    if (vw.ndim() != 2) throw std::invalid_argument("linear: weight must be 2-d");
    const int cin = vw.dim(0), cout = vw.dim(1);
    if (vx.dim(vx.ndim() - 1) != cin)
        throw std::invalid_argument("linear: input trailing dim " + shape_str(vx) +
                                    " does not match weight " + shape_str(vw));
    const int rows = static_cast<int>(vx.numel()) / cin;
    std::vector<int> out_shape(vx.shape.begin(), vx.shape.end() - 1);
    out_shape.push_back(cout);
    Tensor<T> out(out_shape);
    CMapM<T> mx(vx.data.data(), rows, cin);
    CMapM<T> mw(vw.data.data(), cin, cout);
    MapM<T> mo(out.data.data(), rows, cout);
    mo.noalias() = mx * mw;
    if (b >= 0) {
        const Tensor<T>& vb = g.val(b);
        if (vb.numel() != static_cast<std::size_t>(cout))
            throw std::invalid_argument("linear: bias size mismatch");
        CMapM<T> mb(vb.data.data(), 1, cout);
        mo.rowwise() += mb.row(0);
    }
    const bool rg = g.requires_grad(x) || g.requires_grad(w) || (b >= 0 && g.requires_grad(b));
    const int id = g.next_id();
    return g.add(std::move(out), rg,
                 !rg ? typename Graph<T>::BackFn{} : [x, w, b, rows, cin, cout, id](Graph<T>& gr) {
                     CMapM<T> go(gr.grad(id).data.data(), rows, cout);
                     if (gr.requires_grad(x)) {
                         CMapM<T> mw(gr.val(w).data.data(), cin, cout);
                         MapM<T> gx(gr.grad(x).data.data(), rows, cin);
                         gx.noalias() += go * mw.transpose();
                     }
                     if (gr.requires_grad(w)) {
                         CMapM<T> mx(gr.val(x).data.data(), rows, cin);
                         MapM<T> gw(gr.grad(w).data.data(), cin, cout);
                         gw.noalias() += mx.transpose() * go;
                     }
                     if (b >= 0 && gr.requires_grad(b)) {
                         MapM<T> gb(gr.grad(b).data.data(), 1, cout);
                         gb.row(0) += go.colwise().sum();
                     }
                 });
}

namespace detail {

template <typename T>
void im2col(const T* frame, int height, int width, int cin, int k, int stride, int pad,
            int oh, int ow, Mat<T>& m) {
    m.resize(oh * ow, k * k * cin);
    for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
            T* row = m.data() + (static_cast<std::ptrdiff_t>(r) * ow + c) * m.cols();
            int idx = 0;
            for (int dr = 0; dr < k; ++dr) {
                const int sr = r * stride - pad + dr;
                for (int dc = 0; dc < k; ++dc) {
                    const int sc = c * stride - pad + dc;
                    if (sr >= 0 && sr < height && sc >= 0 && sc < width) {
                        const T* src = frame + (static_cast<std::ptrdiff_t>(sr) * width + sc) * cin;
                        for (int ch = 0; ch < cin; ++ch) row[idx++] = src[ch];
                    } else {
                        for (int ch = 0; ch < cin; ++ch) row[idx++] = T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const Mat<T>& m, int height, int width, int cin, int k, int stride, int pad,
                int oh, int ow, T* frame_grad) {
    for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
            const T* row = m.data() + (static_cast<std::ptrdiff_t>(r) * ow + c) * m.cols();
            int idx = 0;
            for (int dr = 0; dr < k; ++dr) {
                const int sr = r * stride - pad + dr;
                for (int dc = 0; dc < k; ++dc) {
                    const int sc = c * stride - pad + dc;
                    if (sr >= 0 && sr < height && sc >= 0 && sc < width) {
                        T* dst = frame_grad + (static_cast<std::ptrdiff_t>(sr) * width + sc) * cin;
                        for (int ch = 0; ch < cin; ++ch) dst[ch] += row[idx++];
                    } else {
                        idx += cin;
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2-d convolution applied per frame. x (F,H,W,Cin), w (k,k,Cin,Cout), b (Cout)
// or -1 for none. im2col + GEMM; the im2col matrix is recomputed in backward.
template <typename T>
int conv2d(Graph<T>& g, int x, int w, int b, int stride, int pad) {
    const Tensor<T>& vx = g.val(x);
    const Tensor<T>& vw = g.val(w);
    if (vx.ndim() != 4 || vw.ndim() != 4)
        throw std::invalid_argument("conv2d: expected 4-d input and kernel");
    const int F = vx.dim(0), H = vx.dim(1), W = vx.dim(2), Cin = vx.dim(3);
    const int k = vw.dim(0), Cout = vw.dim(3);
    if (vw.dim(1) != k || vw.dim(2) != Cin)
        throw std::invalid_argument("conv2d: kernel shape " + shape_str(vw) +
                                    " incompatible with input " + shape_str(vx));
    const int oh = (H + 2 * pad - k) / stride + 1;
    const int ow = (W + 2 * pad - k) / stride + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: output size underflow");

    Tensor<T> out({F, oh, ow, Cout});
    CMapM<T> mw(vw.data.data(), k * k * Cin, Cout);
    Mat<T> m;
    for (int f = 0; f < F; ++f) {
        detail::im2col(vx.data.data() + static_cast<std::ptrdiff_t>(f) * H * W * Cin, H, W, Cin,
                       k, stride, pad, oh, ow, m);
        MapM<T> mo(out.data.data() + static_cast<std::ptrdiff_t>(f) * oh * ow * Cout, oh * ow,
                   Cout);
        mo.noalias() = m * mw;
        if (b >= 0) {
            CMapM<T> mb(g.val(b).data.data(), 1, Cout);
            mo.rowwise() += mb.row(0);
        }
    }
    const bool rg = g.requires_grad(x) || g.requires_grad(w) || (b >= 0 && g.requires_grad(b));
    const int id = g.next_id();
    return g.add(std::move(out), rg,
                 !rg ? typename Graph<T>::BackFn{}
                     : [x, w, b, stride, pad, F, H, W, Cin, k, Cout, oh, ow, id](Graph<T>& gr) {
                     CMapM<T> mw(gr.val(w).data.data(), k * k * Cin, Cout);
                     Mat<T> m;
                     for (int f = 0; f < F; ++f) {
                         CMapM<T> go(gr.grad(id).data.data() +
                                         static_cast<std::ptrdiff_t>(f) * oh * ow * Cout,
                                     oh * ow, Cout);
                         if (gr.requires_grad(w) || gr.requires_grad(x))
                             detail::im2col(gr.val(x).data.data() +
                                                static_cast<std::ptrdiff_t>(f) * H * W * Cin,
                                            H, W, Cin, k, stride, pad, oh, ow, m);
                         if (gr.requires_grad(w)) {
                             MapM<T> gw(gr.grad(w).data.data(), k * k * Cin, Cout);
                             gw.noalias() += m.transpose() * go;
                         }
                         if (b >= 0 && gr.requires_grad(b)) {
                             MapM<T> gb(gr.grad(b).data.data(), 1, Cout);
                             gb.row(0) += go.colwise().sum();
                         }
                         if (gr.requires_grad(x)) {
                             Mat<T> gm = go * mw.transpose();
                             detail::col2im_add(gm, H, W, Cin, k, stride, pad, oh, ow,
                                                gr.grad(x).data.data() +
                                                    static_cast<std::ptrdiff_t>(f) * H * W * Cin);
                         }
                     }
                 });
}

// nearest-neighbor 2x spatial upsample of (F,H,W,C)
template <typename T>
int upsample2(Graph<T>& g, int x) {
    const Tensor<T>& vx = g.val(x);
    if (vx.ndim() != 4) throw std::invalid_argument("upsample2: expected 4-d");
    const int F = vx.dim(0), H = vx.dim(1), W = vx.dim(2), C = vx.dim(3);
    Tensor<T> out({F, 2 * H, 2 * W, C});
    for (int f = 0; f < F; ++f)
        for (int r = 0; r < 2 * H; ++r)
            for (int c = 0; c < 2 * W; ++c)
                for (int ch = 0; ch < C; ++ch)
                    out.at(f, r, c, ch) = vx.at(f, r / 2, c / 2, ch);
    const bool rg = g.requires_grad(x);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [x, F, H, W, C, id](Graph<T>& gr) {
        auto& gx = gr.grad(x);
        const auto& go = gr.grad(id);
        for (int f = 0; f < F; ++f)
            for (int r = 0; r < 2 * H; ++r)
                for (int c = 0; c < 2 * W; ++c)
                    for (int ch = 0; ch < C; ++ch)
                        gx.at(f, r / 2, c / 2, ch) += go.at(f, r, c, ch);
    });
}

// GroupNorm over (H,W,C/G) slices, independently per frame and group.
// x (F,H,W,C), gamma/beta (C).
template <typename T>
int group_norm(Graph<T>& g, int x, int gamma, int beta, int groups, T eps = T(1e-5)) {
    const Tensor<T>& vx = g.val(x);
    if (vx.ndim() != 4) throw std::invalid_argument("group_norm: expected 4-d");
    const int F = vx.dim(0), H = vx.dim(1), W = vx.dim(2), C = vx.dim(3);
    if (C % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const int m = C / groups;
    const T n = static_cast<T>(H * W * m);

    auto stats = std::make_shared<Tensor<T>>(Tensor<T>({F, groups, 2}));  // mean, inv_std
    Tensor<T> out(vx.shape);
    const auto& vgm = g.val(gamma);
    const auto& vbt = g.val(beta);
    for (int f = 0; f < F; ++f) {
        for (int gi = 0; gi < groups; ++gi) {
            T mean = T(0), var = T(0);
            for (int p = 0; p < H * W; ++p)
                for (int c = 0; c < m; ++c)
                    mean += vx.data[(static_cast<std::size_t>(f) * H * W + p) * C + gi * m + c];
            mean /= n;
            for (int p = 0; p < H * W; ++p)
                for (int c = 0; c < m; ++c) {
                    const T d =
                        vx.data[(static_cast<std::size_t>(f) * H * W + p) * C + gi * m + c] - mean;
                    var += d * d;
                }
            var /= n;
            const T inv_std = T(1) / std::sqrt(var + eps);
            stats->at(f, gi, 0) = mean;
            stats->at(f, gi, 1) = inv_std;
            for (int p = 0; p < H * W; ++p)
                for (int c = 0; c < m; ++c) {
                    const std::size_t idx =
                        (static_cast<std::size_t>(f) * H * W + p) * C + gi * m + c;
                    out.data[idx] = (vx.data[idx] - mean) * inv_std * vgm.data[static_cast<std::size_t>(gi * m + c)] +
                                    vbt.data[static_cast<std::size_t>(gi * m + c)];
                }
        }
    }
    const bool rg = g.requires_grad(x) || g.requires_grad(gamma) || g.requires_grad(beta);
    const int id = g.next_id();
    return g.add(std::move(out), rg,
                 !rg ? typename Graph<T>::BackFn{}
                     : [x, gamma, beta, groups, F, H, W, C, m, n, stats, id](Graph<T>& gr) {
                     const auto& go = gr.grad(id);
                     const auto& vx2 = gr.val(x);
                     const auto& vgm = gr.val(gamma);
                     for (int f = 0; f < F; ++f) {
                         for (int gi = 0; gi < groups; ++gi) {
                             const T mean = stats->at(f, gi, 0);
                             const T inv_std = stats->at(f, gi, 1);
                             // h_i = gamma_c * go_i; dx = inv_std*(h - mean(h) - xhat*mean(h*xhat))
                             T sum_h = T(0), sum_hx = T(0);
                             for (int p = 0; p < H * W; ++p)
                                 for (int c = 0; c < m; ++c) {
                                     const std::size_t idx =
                                         (static_cast<std::size_t>(f) * H * W + p) * C + gi * m + c;
                                     const T xhat = (vx2.data[idx] - mean) * inv_std;
                                     const T h = go.data[idx] * vgm.data[static_cast<std::size_t>(gi * m + c)];
                                     sum_h += h;
                                     sum_hx += h * xhat;
                                 }
                             const T mean_h = sum_h / n, mean_hx = sum_hx / n;
                             if (gr.requires_grad(x)) {
                                 auto& gx = gr.grad(x);
                                 for (int p = 0; p < H * W; ++p)
                                     for (int c = 0; c < m; ++c) {
                                         const std::size_t idx =
                                             (static_cast<std::size_t>(f) * H * W + p) * C +
                                             gi * m + c;
                                         const T xhat = (vx2.data[idx] - mean) * inv_std;
                                         const T h = go.data[idx] *
                                                     vgm.data[static_cast<std::size_t>(gi * m + c)];
                                         gx.data[idx] += inv_std * (h - mean_h - xhat * mean_hx);
                                     }
                             }
                             if (gr.requires_grad(gamma) || gr.requires_grad(beta)) {
                                 for (int c = 0; c < m; ++c) {
                                     T dg = T(0), db = T(0);
                                     for (int p = 0; p < H * W; ++p) {
                                         const std::size_t idx =
                                             (static_cast<std::size_t>(f) * H * W + p) * C +
                                             gi * m + c;
                                         const T xhat = (vx2.data[idx] - mean) * inv_std;
                                         dg += go.data[idx] * xhat;
                                         db += go.data[idx];
                                     }
                                     if (gr.requires_grad(gamma))
                                         gr.grad(gamma).data[static_cast<std::size_t>(gi * m + c)] += dg;
                                     if (gr.requires_grad(beta))
                                         gr.grad(beta).data[static_cast<std::size_t>(gi * m + c)] += db;
                                 }
                             }
                         }
                     }
                 });
}

// broadcast-add a channel vector v (C) to every position of x (F,H,W,C)
template <typename T>
int add_channel_vec(Graph<T>& g, int x, int v) {
    const Tensor<T>& vx = g.val(x);
    const Tensor<T>& vv = g.val(v);
    if (vx.ndim() != 4 || vv.numel() != static_cast<std::size_t>(vx.dim(3)))
        throw std::invalid_argument("add_channel_vec: shape mismatch");
    const int C = vx.dim(3);
    const int P = static_cast<int>(vx.numel()) / C;
    Tensor<T> out = vx;
    for (int p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c)
            out.data[static_cast<std::size_t>(p) * C + c] += vv.data[static_cast<std::size_t>(c)];
    const bool rg = g.requires_grad(x) || g.requires_grad(v);
    const int id = g.next_id();
    return g.add(std::move(out), rg, !rg ? typename Graph<T>::BackFn{} : [x, v, P, C, id](Graph<T>& gr) {
        const auto& go = gr.grad(id).data;
        if (gr.requires_grad(x)) {
            auto& gx = gr.grad(x).data;
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        }
        if (gr.requires_grad(v)) {
            auto& gv = gr.grad(v).data;
            for (int p = 0; p < P; ++p)
                for (int c = 0; c < C; ++c)
                    gv[static_cast<std::size_t>(c)] += go[static_cast<std::size_t>(p) * C + c];
        }
    });
}

// select rows of a table (V, D) by index; gradients scatter-add back
template <typename T>
int gather_rows(Graph<T>& g, int table, std::vector<int> rows) {
    const Tensor<T>& vt = g.val(table);
    if (vt.ndim() != 2) throw std::invalid_argument("gather_rows: table must be 2-d");
    const int V = vt.dim(0), D = vt.dim(1);
    for (int r : rows)
        if (r < 0 || r >= V) throw std::out_of_range("gather_rows: row index out of range");
    Tensor<T> out({static_cast<int>(rows.size()), D});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (int d = 0; d < D; ++d)
            out.at(static_cast<int>(i), d) = vt.at(rows[i], d);
    const bool rg = g.requires_grad(table);
    const int id = g.next_id();
    return g.add(std::move(out), rg,
                 !rg ? typename Graph<T>::BackFn{} : [table, rows, D, id](Graph<T>& gr) {
                     const auto& go = gr.grad(id);
                     auto& gt = gr.grad(table);
                     for (std::size_t i = 0; i < rows.size(); ++i)
                         for (int d = 0; d < D; ++d)
                             gt.at(rows[i], d) += go.at(static_cast<int>(i), d);
                 });
}

// add a (F, C) matrix to every leading slice of tokens (P, F, C)
template <typename T>
int add_row_mat(Graph<T>& g, int tokens, int mat) {
    const Tensor<T>& vt = g.val(tokens);
    const Tensor<T>& vm = g.val(mat);
    if (vt.ndim() != 3 || vm.ndim() != 2 || vt.dim(1) != vm.dim(0) || vt.dim(2) != vm.dim(1))
        throw std::invalid_argument("add_row_mat: shape mismatch " + shape_str(vt) + " vs " +
                                    shape_str(vm));
    const int P = vt.dim(0);
    const std::size_t sz = vm.numel();
    Tensor<T> out = vt;
    for (int p = 0; p < P; ++p)
        for (std::size_t i = 0; i < sz; ++i)
            out.data[static_cast<std::size_t>(p) * sz + i] += vm.data[i];
    const bool rg = g.requires_grad(tokens) || g.requires_grad(mat);
    const int id = g.next_id();
    return g.add(std::move(out), rg,
                 !rg ? typename Graph<T>::BackFn{} : [tokens, mat, P, sz, id](Graph<T>& gr) {
                     const auto& go = gr.grad(id).data;
                     if (gr.requires_grad(tokens)) {
                         auto& gt = gr.grad(tokens).data;
                         for (std::size_t i = 0; i < go.size(); ++i) gt[i] += go[i];
                     }
                     if (gr.requires_grad(mat)) {
                         auto& gm = gr.grad(mat).data;
                         for (int p = 0; p < P; ++p)
                             for (std::size_t i = 0; i < sz; ++i)
                                 gm[i] += go[static_cast<std::size_t>(p) * sz + i];
                     }
                 });
}

// Multi-head scaled dot-product attention. q (B,n,C), k/v (B,m,C); heads
// divides C. Softmax over keys; attention probabilities are cached for the
// backward pass.
template <typename T>
int attention(Graph<T>& g, int q, int k, int v, int heads) {
    const Tensor<T>& vq = g.val(q);
    const Tensor<T>& vk = g.val(k);
    const Tensor<T>& vv = g.val(v);
    if (vq.ndim() != 3 || vk.ndim() != 3 || vv.ndim() != 3)
        throw std::invalid_argument("attention: expected 3-d token tensors");
    const int B = vq.dim(0), n = vq.dim(1), C = vq.dim(2);
    const int m = vk.dim(1);
    if (vk.dim(0) != B || vv.dim(0) != B || vk.dim(2) != C || vv.dim(2) != C || vv.dim(1) != m)
        throw std::invalid_argument("attention: q/k/v shape mismatch");
    if (heads < 1 || C % heads != 0) throw std::invalid_argument("attention: bad head count");
    const int dh = C / heads;
    const T scale_f = T(1) / std::sqrt(static_cast<T>(dh));

    auto probs = std::make_shared<std::vector<Mat<T>>>();
    probs->reserve(static_cast<std::size_t>(B) * heads);
    Tensor<T> out({B, n, C});
    using Stride = Eigen::OuterStride<>;
    using StridedMap = Eigen::Map<Mat<T>, 0, Stride>;
    using CStridedMap = Eigen::Map<const Mat<T>, 0, Stride>;
    for (int b = 0; b < B; ++b) {
        for (int h = 0; h < heads; ++h) {
            CStridedMap qh(vq.data.data() + (static_cast<std::ptrdiff_t>(b) * n) * C + h * dh, n,
                           dh, Stride(C));
            CStridedMap kh(vk.data.data() + (static_cast<std::ptrdiff_t>(b) * m) * C + h * dh, m,
                           dh, Stride(C));
            CStridedMap vh(vv.data.data() + (static_cast<std::ptrdiff_t>(b) * m) * C + h * dh, m,
                           dh, Stride(C));
            Mat<T> s = (qh * kh.transpose()) * scale_f;
            for (int i = 0; i < n; ++i) {
                const T mx = s.row(i).maxCoeff();
                s.row(i) = (s.row(i).array() - mx).exp().matrix();
                s.row(i) /= s.row(i).sum();
            }
            StridedMap oh(out.data.data() + (static_cast<std::ptrdiff_t>(b) * n) * C + h * dh, n,
                          dh, Stride(C));
            oh.noalias() = s * vh;
            probs->push_back(std::move(s));
        }
    }
    const bool rg = g.requires_grad(q) || g.requires_grad(k) || g.requires_grad(v);
    const int id = g.next_id();
    return g.add(std::move(out), rg,
                 !rg ? typename Graph<T>::BackFn{}
                     : [q, k, v, heads, B, n, m, C, dh, scale_f, probs, id](Graph<T>& gr) {
                     using Stride = Eigen::OuterStride<>;
                     using StridedMap = Eigen::Map<Mat<T>, 0, Stride>;
                     using CStridedMap = Eigen::Map<const Mat<T>, 0, Stride>;
                     for (int b = 0; b < B; ++b) {
                         for (int h = 0; h < heads; ++h) {
                             const Mat<T>& a = (*probs)[static_cast<std::size_t>(b) * heads + h];
                             CStridedMap go(gr.grad(id).data.data() +
                                                (static_cast<std::ptrdiff_t>(b) * n) * C + h * dh,
                                            n, dh, Stride(C));
                             CStridedMap qh(gr.val(q).data.data() +
                                                (static_cast<std::ptrdiff_t>(b) * n) * C + h * dh,
                                            n, dh, Stride(C));
                             CStridedMap kh(gr.val(k).data.data() +
                                                (static_cast<std::ptrdiff_t>(b) * m) * C + h * dh,
                                            m, dh, Stride(C));
                             CStridedMap vh(gr.val(v).data.data() +
                                                (static_cast<std::ptrdiff_t>(b) * m) * C + h * dh,
                                            m, dh, Stride(C));
                             if (gr.requires_grad(v)) {
                                 StridedMap gv(gr.grad(v).data.data() +
                                                   (static_cast<std::ptrdiff_t>(b) * m) * C +
                                                   h * dh,
                                               m, dh, Stride(C));
                                 gv.noalias() += a.transpose() * go;
                             }
                             if (gr.requires_grad(q) || gr.requires_grad(k)) {
                                 Mat<T> da = go * vh.transpose();           // n x m
                                 Eigen::Array<T, Eigen::Dynamic, 1> rowdot =
                                     (da.array() * a.array()).rowwise().sum();
                                 Mat<T> ds =
                                     (a.array() * (da.array().colwise() - rowdot)).matrix() *
                                     scale_f;
                                 if (gr.requires_grad(q)) {
                                     StridedMap gq(gr.grad(q).data.data() +
                                                       (static_cast<std::ptrdiff_t>(b) * n) * C +
                                                       h * dh,
                                                   n, dh, Stride(C));
                                     gq.noalias() += ds * kh;
                                 }
                                 if (gr.requires_grad(k)) {
                                     StridedMap gk(gr.grad(k).data.data() +
                                                       (static_cast<std::ptrdiff_t>(b) * m) * C +
                                                       h * dh,
                                                   m, dh, Stride(C));
                                     gk.noalias() += ds.transpose() * qh;
                                 }
                             }
                         }
                     }
                 });
}

}  // namespace ivgen::autodiff
