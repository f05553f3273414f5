#pragma once

// Small reverse-mode tape over Tensor values. Exists to make the ELBO
// differentiable end to end; the contract it must satisfy is the
// finite-difference invariant in the test suite, nothing more. Ops are the
// closed set the model needs: dense layers, activations, slicing/pooling
// plumbing, and the structured-Gaussian pieces (bidiagonal solves, trace
// and log-det terms) with hand-derived adjoints.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tvgp/bidiagonal.hpp"
#include "tvgp/errors.hpp"
#include "tvgp/linalg.hpp"
#include "tvgp/tensor.hpp"

namespace tvgp::ad {

using NodeId = std::size_t;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Tracked input: parameters and anything else that needs a gradient.
    NodeId leaf(Tensor v) { return push(std::move(v)); }

    /// Same mechanics as leaf; the name marks caller intent (data, noise).
    NodeId constant(Tensor v) { return push(std::move(v)); }

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
    double scalar_value(NodeId id) const { return nodes_[id].value[0]; }

    std::size_t node_count() const { return nodes_.size(); }

    /// Seed d(root)/d(root) = 1 and sweep the tape in reverse creation
    /// order, accumulating into every node's grad. Root must be a scalar.
    void backward(NodeId root) {
        if (nodes_[root].value.size() != 1) {
            throw std::invalid_argument("backward: root must be a scalar node");
        }
        for (Node& n : nodes_) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.grad[i] = 0.0;
        }
        nodes_[root].grad[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].back) nodes_[i].back(*this);
        }
    }

    // ---- elementwise and dense ops ----

    NodeId add(NodeId a, NodeId b) {
        require_same_dims(a, b, "add");
        Tensor y = value(a);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += value(b)[i];
        NodeId id = push(std::move(y));
        nodes_[id].back = [id, a, b](Tape& t) {
            const Tensor& g = t.grad(id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                t.nodes_[a].grad[i] += g[i];
                t.nodes_[b].grad[i] += g[i];
            }
        };
        return id;
    }

    NodeId mul(NodeId a, NodeId b) {
        require_same_dims(a, b, "mul");
        Tensor y = value(a);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= value(b)[i];
        NodeId id = push(std::move(y));
        nodes_[id].back = [id, a, b](Tape& t) {
            const Tensor& g = t.grad(id);
            const Tensor& va = t.value(a);
            const Tensor& vb = t.value(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                t.nodes_[a].grad[i] += g[i] * vb[i];
                t.nodes_[b].grad[i] += g[i] * va[i];
            }
        };
        return id;
    }

    /// y = W x + b with W order-2 (out, in), b and x order-1.
    NodeId affine(NodeId w, NodeId b, NodeId x) {
        const Tensor& wv = value(w);
        const Tensor& bv = value(b);
        const Tensor& xv = value(x);
        if (wv.order() != 2 || bv.order() != 1 || xv.order() != 1) {
            throw std::invalid_argument("affine: need order-2 weight, order-1 bias and input");
        }
        const std::size_t out = wv.dim(1), in = wv.dim(2);
        if (bv.size() != out || xv.size() != in) {
            throw std::invalid_argument("affine: shape chain mismatch");
        }
        Tensor y({out});
        for (std::size_t i = 0; i < out; ++i) {
            double s = bv[i];
            for (std::size_t j = 0; j < in; ++j) s += wv[i * in + j] * xv[j];
            y[i] = s;
        }
        NodeId id = push(std::move(y));
        nodes_[id].back = [id, w, b, x, out, in](Tape& t) {
            const Tensor& g = t.grad(id);
            const Tensor& wv2 = t.value(w);
            const Tensor& xv2 = t.value(x);
            for (std::size_t i = 0; i < out; ++i) {
                const double gi = g[i];
                t.nodes_[b].grad[i] += gi;
                for (std::size_t j = 0; j < in; ++j) {
                    t.nodes_[w].grad[i * in + j] += gi * xv2[j];
                    t.nodes_[x].grad[j] += gi * wv2[i * in + j];
                }
            }
        };
        return id;
    }

    NodeId relu(NodeId x) {
        Tensor y = value(x);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
        NodeId id = push(std::move(y));
        nodes_[id].back = [id, x](Tape& t) {
            const Tensor& g = t.grad(id);
            const Tensor& xv = t.value(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xv[i] > 0.0) t.nodes_[x].grad[i] += g[i];
            }
        };
        return id;
    }

    NodeId logistic(NodeId x) {
        Tensor y = value(x);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = stable_logistic(y[i]);
        NodeId id = push(std::move(y));
        nodes_[id].back = [id, x](Tape& t) {
            const Tensor& g = t.grad(id);
            const Tensor& yv = t.value(id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                t.nodes_[x].grad[i] += g[i] * yv[i] * (1.0 - yv[i]);
            }
        };
        return id;
    }

    NodeId exp(NodeId x) {
        Tensor y = value(x);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(y[i]);
        NodeId id = push(std::move(y));
        nodes_[id].back = [id, x](Tape& t) {
            const Tensor& g = t.grad(id);
            const Tensor& yv = t.value(id);
            for (std::size_t i = 0; i < g.size(); ++i) t.nodes_[x].grad[i] += g[i] * yv[i];
        };
        return id;
    }

    /// y = softplus(x) + floor, the positivity map for Cholesky diagonals.
    NodeId softplus_floor(NodeId x, double floor) {
        Tensor y = value(x);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = softplus(y[i]) + floor;
        NodeId id = push(std::move(y));
        nodes_[id].back = [id, x](Tape& t) {
            const Tensor& g = t.grad(id);
            const Tensor& xv = t.value(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                t.nodes_[x].grad[i] += g[i] * stable_logistic(xv[i]);
            }
        };
        return id;
    }

    // ---- plumbing ops ----

    /// Contiguous range of the flat storage as an order-1 tensor.
    NodeId slice(NodeId x, std::size_t offset, std::size_t len) {
        const Tensor& xv = value(x);
        if (len == 0 || offset + len > xv.size()) {
            throw std::invalid_argument("slice: range out of bounds");
        }
        Tensor y({len});
        for (std::size_t i = 0; i < len; ++i) y[i] = xv[offset + i];
        NodeId id = push(std::move(y));
        nodes_[id].back = [id, x, offset, len](Tape& t) {
            const Tensor& g = t.grad(id);
            for (std::size_t i = 0; i < len; ++i) t.nodes_[x].grad[offset + i] += g[i];
        };
        return id;
    }

    /// Same flat storage, new dims.
    NodeId reshape(NodeId x, std::vector<std::size_t> dims) {
        const Tensor& xv = value(x);
        Tensor y(std::move(dims), {xv.data().begin(), xv.data().end()});
        NodeId id = push(std::move(y));
        nodes_[id].back = [id, x](Tape& t) {
            const Tensor& g = t.grad(id);
            for (std::size_t i = 0; i < g.size(); ++i) t.nodes_[x].grad[i] += g[i];
        };
        return id;
    }

    /// Flat storages of the parts, concatenated into one order-1 tensor.
    NodeId concat(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat: no parts");
        std::size_t total = 0;
        for (NodeId p : parts) total += value(p).size();
        Tensor y({total});
        std::size_t off = 0;
        for (NodeId p : parts) {
            const Tensor& pv = value(p);
            for (std::size_t i = 0; i < pv.size(); ++i) y[off + i] = pv[i];
            off += pv.size();
        }
        NodeId id = push(std::move(y));
        std::vector<NodeId> ps = parts;
        nodes_[id].back = [id, ps](Tape& t) {
            const Tensor& g = t.grad(id);
            std::size_t o = 0;
            for (NodeId p : ps) {
                Tensor& pg = t.nodes_[p].grad;
                for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[o + i];
                o += pg.size();
            }
        };
        return id;
    }

    NodeId sum(NodeId x) {
        double s = 0.0;
        for (std::size_t i = 0; i < value(x).size(); ++i) s += value(x)[i];
        NodeId id = push(Tensor::scalar(s));
        nodes_[id].back = [id, x](Tape& t) {
            const double g = t.grad(id)[0];
            Tensor& xg = t.nodes_[x].grad;
            for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += g;
        };
        return id;
    }

    /// c0 + sum_i coeffs[i] * xs[i] over scalar nodes.
    NodeId scalar_affine(const std::vector<NodeId>& xs, const std::vector<double>& coeffs,
                         double c0) {
        if (xs.size() != coeffs.size()) {
            throw std::invalid_argument("scalar_affine: one coefficient per input");
        }
        double s = c0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (value(xs[i]).size() != 1) {
                throw std::invalid_argument("scalar_affine: inputs must be scalars");
            }
            s += coeffs[i] * value(xs[i])[0];
        }
        NodeId id = push(Tensor::scalar(s));
        std::vector<NodeId> xs2 = xs;
        std::vector<double> cs2 = coeffs;
        nodes_[id].back = [id, xs2, cs2](Tape& t) {
            const double g = t.grad(id)[0];
            for (std::size_t i = 0; i < xs2.size(); ++i) t.nodes_[xs2[i]].grad[0] += g * cs2[i];
        };
        return id;
    }

    /// Average over every mode except `mode`: order-1 output of length D_m.
    NodeId mean_pool_except(NodeId x, std::size_t mode) {
        const Tensor& xv = value(x);
        xv.check_mode(mode);
        Matrix u = unfold(xv, mode);
        const double count = static_cast<double>(u.cols());
        Tensor y({u.rows()});
        for (std::size_t r = 0; r < u.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < u.cols(); ++c) s += u(r, c);
            y[r] = s / count;
        }
        NodeId id = push(std::move(y));
        nodes_[id].back = [id, x, mode, count](Tape& t) {
            const Tensor& g = t.grad(id);
            const Tensor& xv2 = t.value(x);
            Matrix gm(g.size(), xv2.size() / g.size());
            for (std::size_t r = 0; r < gm.rows(); ++r)
                for (std::size_t c = 0; c < gm.cols(); ++c) gm(r, c) = g[r] / count;
            Tensor gx = fold(gm, mode, xv2.dims());
            for (std::size_t i = 0; i < gx.size(); ++i) t.nodes_[x].grad[i] += gx[i];
        };
        return id;
    }

    /// Rank-one tensor from order-1 factors.
    NodeId outer_product(const std::vector<NodeId>& factors) {
        std::vector<Tensor> vals;
        vals.reserve(factors.size());
        for (NodeId f : factors) vals.push_back(value(f));
        Tensor y = outer(vals);
        NodeId id = push(std::move(y));
        std::vector<NodeId> fs = factors;
        nodes_[id].back = [id, fs](Tape& t) {
            const Tensor& g = t.grad(id);
            const std::size_t m_count = fs.size();
            std::vector<std::size_t> idx(m_count, 0);
            const auto& dims = t.value(id).dims();
            for (std::size_t pos = 0; pos < g.size(); ++pos) {
                for (std::size_t m = 0; m < m_count; ++m) {
                    double p = g[pos];
                    for (std::size_t o = 0; o < m_count; ++o) {
                        if (o != m) p *= t.value(fs[o])[idx[o]];
                    }
                    t.nodes_[fs[m]].grad[idx[m]] += p;
                }
                for (std::size_t j = m_count; j-- > 0;) {
                    if (++idx[j] < dims[j]) break;
                    idx[j] = 0;
                }
            }
        };
        return id;
    }

    // ---- structured-Gaussian ops ----
    // `diag` holds the (already positive) Cholesky diagonal of a bidiagonal
    // precision factor L; `sub` its subdiagonal, absent when the mode has
    // extent 1.

    /// Y_(m) = L^{-T} X_(m): applies the covariance square root of a
    /// precision-Cholesky mode along mode `mode`.
    NodeId mode_solve_transpose(NodeId x, NodeId diag, std::optional<NodeId> sub,
                                std::size_t mode) {
        const Tensor& xv = value(x);
        BidiagonalCholesky l = make_factor(diag, sub);
        if (l.size() != xv.dim(mode)) {
            throw std::invalid_argument("mode_solve_transpose: factor size vs mode extent");
        }
        Matrix u = unfold(xv, mode);
        std::vector<double> col(u.rows());
        for (std::size_t c = 0; c < u.cols(); ++c) {
            for (std::size_t r = 0; r < u.rows(); ++r) col[r] = u(r, c);
            std::vector<double> out = l.solve_transpose(col);
            for (std::size_t r = 0; r < u.rows(); ++r) u(r, c) = out[r];
        }
        NodeId id = push(fold(u, mode, xv.dims()));
        nodes_[id].back = [id, x, diag, sub, mode](Tape& t) {
            BidiagonalCholesky l2 = t.make_factor(diag, sub);
            const std::size_t n = l2.size();
            Matrix gy = unfold(t.grad(id), mode);
            // W = L^{-1} Ybar, column by column
            Matrix w(gy.rows(), gy.cols());
            std::vector<double> col2(n);
            for (std::size_t c = 0; c < gy.cols(); ++c) {
                for (std::size_t r = 0; r < n; ++r) col2[r] = gy(r, c);
                std::vector<double> out = l2.solve(col2);
                for (std::size_t r = 0; r < n; ++r) w(r, c) = out[r];
            }
            // Xbar = W folded back
            Tensor gx = fold(w, mode, t.value(x).dims());
            for (std::size_t i = 0; i < gx.size(); ++i) t.nodes_[x].grad[i] += gx[i];
            // Lbar = -(Y W^T) restricted to the diagonal and subdiagonal
            Matrix yv = unfold(t.value(id), mode);
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t c = 0; c < yv.cols(); ++c) s += yv(i, c) * w(i, c);
                t.nodes_[diag].grad[i] -= s;
            }
            if (sub) {
                for (std::size_t i = 0; i + 1 < n; ++i) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < yv.cols(); ++c) s += yv(i + 1, c) * w(i, c);
                    t.nodes_[*sub].grad[i] -= s;
                }
            }
        };
        return id;
    }

    /// tr(A Sigma) with A a constant symmetric matrix and
    /// Sigma = (L L^T)^{-1}. Dense inside, so mode-sized only.
    NodeId prec_chol_trace(const Matrix& a, NodeId diag, std::optional<NodeId> sub) {
        BidiagonalCholesky l = make_factor(diag, sub);
        if (a.rows() != l.size() || a.cols() != l.size()) {
            throw std::invalid_argument("prec_chol_trace: matrix side vs factor size");
        }
        Matrix sigma = l.to_dense_covariance(l.size());
        NodeId id = push(Tensor::scalar(trace_product_symmetric(a, sigma)));
        Matrix a_copy = a;
        nodes_[id].back = [id, a_copy, diag, sub](Tape& t) {
            const double g = t.grad(id)[0];
            BidiagonalCholesky l2 = t.make_factor(diag, sub);
            const std::size_t n = l2.size();
            Matrix sigma2 = l2.to_dense_covariance(n);
            // Lbar = -2 Sigma A Sigma L on the stored entries
            Matrix m = matmul(sigma2, matmul(a_copy, matmul(sigma2, l2.to_dense_factor())));
            for (std::size_t i = 0; i < n; ++i) t.nodes_[diag].grad[i] += g * -2.0 * m(i, i);
            if (sub) {
                for (std::size_t i = 0; i + 1 < n; ++i) {
                    t.nodes_[*sub].grad[i] += g * -2.0 * m(i + 1, i);
                }
            }
        };
        return id;
    }

    /// log|Sigma| = -2 sum log diag for Sigma = (L L^T)^{-1}.
    NodeId logdet_cov(NodeId diag) {
        const Tensor& d = value(diag);
        double s = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (!(d[i] > 0.0)) throw NumericalError("logdet_cov: non-positive diagonal");
            s += std::log(d[i]);
        }
        NodeId id = push(Tensor::scalar(-2.0 * s));
        nodes_[id].back = [id, diag](Tape& t) {
            const double g = t.grad(id)[0];
            const Tensor& d2 = t.value(diag);
            for (std::size_t i = 0; i < d2.size(); ++i) {
                t.nodes_[diag].grad[i] += g * (-2.0 / d2[i]);
            }
        };
        return id;
    }

    /// v^T A v with A a constant symmetric matrix.
    NodeId quad_form(const Matrix& a, NodeId v) {
        const Tensor& vv = value(v);
        if (vv.order() != 1 || a.rows() != vv.size() || a.cols() != vv.size()) {
            throw std::invalid_argument("quad_form: shape mismatch");
        }
        std::vector<double> av = matvec(a, vv.data());
        double s = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) s += vv[i] * av[i];
        NodeId id = push(Tensor::scalar(s));
        Matrix a_copy = a;
        nodes_[id].back = [id, a_copy, v](Tape& t) {
            const double g = t.grad(id)[0];
            std::vector<double> av2 = matvec(a_copy, t.value(v).data());
            for (std::size_t i = 0; i < av2.size(); ++i) {
                t.nodes_[v].grad[i] += g * 2.0 * av2[i];
            }
        };
        return id;
    }

    /// Unit-variance Gaussian log-likelihood of fixed data x under mean
    /// xhat: -1/2 ||x - xhat||^2 - (D/2) log 2 pi.
    NodeId gauss_recon_loglik(NodeId xhat, const Tensor& x) {
        const Tensor& mv = value(xhat);
        if (!mv.same_dims(x)) throw std::invalid_argument("gauss_recon_loglik: dims mismatch");
        double sse = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double r = mv[i] - x[i];
            sse += r * r;
        }
        const double d = static_cast<double>(x.size());
        NodeId id = push(Tensor::scalar(-0.5 * sse - 0.5 * d * std::log(2.0 * std::numbers::pi)));
        Tensor x_copy = x;
        nodes_[id].back = [id, xhat, x_copy](Tape& t) {
            const double g = t.grad(id)[0];
            const Tensor& mv2 = t.value(xhat);
            for (std::size_t i = 0; i < mv2.size(); ++i) {
                t.nodes_[xhat].grad[i] += g * (x_copy[i] - mv2[i]);
            }
        };
        return id;
    }

    /// KL(N(mu, diag(sigma^2)) || N(0, I)) with sigma = exp(logsigma),
    /// summed over entries: sum_k 1/2 (e^{2 s_k} + mu_k^2 - 1 - 2 s_k).
    NodeId kl_meanfield(NodeId mu, NodeId logsigma) {
        require_same_dims(mu, logsigma, "kl_meanfield");
        const Tensor& m = value(mu);
        const Tensor& s = value(logsigma);
        double kl = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            kl += 0.5 * (std::exp(2.0 * s[i]) + m[i] * m[i] - 1.0 - 2.0 * s[i]);
        }
        NodeId id = push(Tensor::scalar(kl));
        nodes_[id].back = [id, mu, logsigma](Tape& t) {
            const double g = t.grad(id)[0];
            const Tensor& m2 = t.value(mu);
            const Tensor& s2 = t.value(logsigma);
            for (std::size_t i = 0; i < m2.size(); ++i) {
                t.nodes_[mu].grad[i] += g * m2[i];
                t.nodes_[logsigma].grad[i] += g * (std::exp(2.0 * s2[i]) - 1.0);
            }
        };
        return id;
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&)> back;
    };

    NodeId push(Tensor v) {
        Node n;
        n.grad = Tensor(v.dims());
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    void require_same_dims(NodeId a, NodeId b, const char* op) const {
        if (!value(a).same_dims(value(b))) {
            throw std::invalid_argument(std::string(op) + ": dims mismatch");
        }
    }

    BidiagonalCholesky make_factor(NodeId diag, std::optional<NodeId> sub) const {
        const Tensor& d = value(diag);
        std::vector<double> dv(d.data().begin(), d.data().end());
        std::vector<double> sv;
        if (sub) {
            const Tensor& s = value(*sub);
            sv.assign(s.data().begin(), s.data().end());
        }
        return BidiagonalCholesky(std::move(dv), std::move(sv));
    }

    static double stable_logistic(double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
    }

    std::vector<Node> nodes_;
};

}  // namespace tvgp::ad
