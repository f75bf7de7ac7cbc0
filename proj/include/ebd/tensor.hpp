#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebd {

// Dense row-major matrix of doubles; vectors are n x 1, scalars 1 x 1.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
    std::size_t size() const { return v.size(); }

    bool finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

using Var = int;

// Reverse-mode tape over matrix-level operations. Values are computed eagerly;
// backward() accumulates gradients into every node.
class Tape {
public:
    Var constant(Tensor t) { return push(std::move(t), nullptr); }

    const Tensor& value(Var x) const { return nodes_[x].value; }
    const Tensor& grad(Var x) const { return nodes_[x].grad; }

    Var matmul(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.cols != tb.rows) throw std::invalid_argument("matmul: inner dimension mismatch");
        Tensor out(ta.rows, tb.cols);
        for (int i = 0; i < ta.rows; ++i)
            for (int k = 0; k < ta.cols; ++k) {
                const double aik = ta.at(i, k);
                if (aik == 0.0) continue;
                for (int j = 0; j < tb.cols; ++j) out.at(i, j) += aik * tb.at(k, j);
            }
        return push(std::move(out), [a, b](Tape& t, const Node& n) {
            const Tensor& ta = t.val(a);
            const Tensor& tb = t.val(b);
            Tensor& ga = t.nodes_[a].grad;
            Tensor& gb = t.nodes_[b].grad;
            // dA = dC B^T ; dB = A^T dC
            for (int i = 0; i < ta.rows; ++i)
                for (int j = 0; j < tb.cols; ++j) {
                    const double g = n.grad.at(i, j);
                    if (g == 0.0) continue;
                    for (int k = 0; k < ta.cols; ++k) {
                        ga.at(i, k) += g * tb.at(k, j);
                        gb.at(k, j) += ta.at(i, k) * g;
                    }
                }
        });
    }

    Var add(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        check_same_shape(ta, tb, "add");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += tb.v[i];
        return push(std::move(out), [a, b](Tape& t, const Node& n) {
            accumulate(t.nodes_[a].grad, n.grad);
            accumulate(t.nodes_[b].grad, n.grad);
        });
    }

    Var sub(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        check_same_shape(ta, tb, "sub");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= tb.v[i];
        return push(std::move(out), [a, b](Tape& t, const Node& n) {
            accumulate(t.nodes_[a].grad, n.grad);
            for (std::size_t i = 0; i < n.grad.size(); ++i) t.nodes_[b].grad.v[i] -= n.grad.v[i];
        });
    }

    // broadcast a 1 x c row vector over all rows
    Var add_rowvec(Var a, Var bias) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(bias);
        if (tb.rows != 1 || tb.cols != ta.cols) throw std::invalid_argument("add_rowvec: shape mismatch");
        Tensor out = ta;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out.at(i, j) += tb.at(0, j);
        return push(std::move(out), [a, bias](Tape& t, const Node& n) {
            accumulate(t.nodes_[a].grad, n.grad);
            Tensor& gb = t.nodes_[bias].grad;
            for (int i = 0; i < n.grad.rows; ++i)
                for (int j = 0; j < n.grad.cols; ++j) gb.at(0, j) += n.grad.at(i, j);
        });
    }

    Var scale(Var a, double s) {
        Tensor out = val(a);
        for (double& x : out.v) x *= s;
        return push(std::move(out), [a, s](Tape& t, const Node& n) {
            Tensor& ga = t.nodes_[a].grad;
            for (std::size_t i = 0; i < n.grad.size(); ++i) ga.v[i] += s * n.grad.v[i];
        });
    }

    Var add_const(Var a, double c) {
        Tensor out = val(a);
        for (double& x : out.v) x += c;
        return push(std::move(out), [a](Tape& t, const Node& n) {
            accumulate(t.nodes_[a].grad, n.grad);
        });
    }

    Var mul(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        check_same_shape(ta, tb, "mul");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= tb.v[i];
        return push(std::move(out), [a, b](Tape& t, const Node& n) {
            const Tensor& ta = t.val(a);
            const Tensor& tb = t.val(b);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                t.nodes_[a].grad.v[i] += n.grad.v[i] * tb.v[i];
                t.nodes_[b].grad.v[i] += n.grad.v[i] * ta.v[i];
            }
        });
    }

    Var div(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        check_same_shape(ta, tb, "div");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] /= tb.v[i];
        return push(std::move(out), [a, b](Tape& t, const Node& n) {
            const Tensor& ta = t.val(a);
            const Tensor& tb = t.val(b);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                const double inv = 1.0 / tb.v[i];
                t.nodes_[a].grad.v[i] += n.grad.v[i] * inv;
                t.nodes_[b].grad.v[i] -= n.grad.v[i] * ta.v[i] * inv * inv;
            }
        });
    }

    Var silu(Var a) {
        Tensor out = val(a);
        for (double& x : out.v) x = x / (1.0 + std::exp(-x));
        return push(std::move(out), [a](Tape& t, const Node& n) {
            const Tensor& ta = t.val(a);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                const double x = ta.v[i];
                const double sg = 1.0 / (1.0 + std::exp(-x));
                t.nodes_[a].grad.v[i] += n.grad.v[i] * sg * (1.0 + x * (1.0 - sg));
            }
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
        const int rows = val(parts[0]).rows;
        int cols = 0;
        for (Var p : parts) {
            if (val(p).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
            cols += val(p).cols;
        }
        Tensor out(rows, cols);
        int off = 0;
        for (Var p : parts) {
            const Tensor& tp = val(p);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < tp.cols; ++j) out.at(i, off + j) = tp.at(i, j);
            off += tp.cols;
        }
        return push(std::move(out), [parts](Tape& t, const Node& n) {
            int off = 0;
            for (Var p : parts) {
                Tensor& gp = t.nodes_[p].grad;
                for (int i = 0; i < gp.rows; ++i)
                    for (int j = 0; j < gp.cols; ++j) gp.at(i, j) += n.grad.at(i, off + j);
                off += gp.cols;
            }
        });
    }

    Var gather_rows(Var a, std::vector<int> idx) {
        const Tensor& ta = val(a);
        Tensor out(static_cast<int>(idx.size()), ta.cols);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < ta.cols; ++j) out.at(static_cast<int>(i), j) = ta.at(idx[i], j);
        return push(std::move(out), [a, idx = std::move(idx)](Tape& t, const Node& n) {
            Tensor& ga = t.nodes_[a].grad;
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (int j = 0; j < n.grad.cols; ++j)
                    ga.at(idx[i], j) += n.grad.at(static_cast<int>(i), j);
        });
    }

    // out[seg[i]] += a[i]; out has out_rows rows
    Var scatter_add_rows(Var a, std::vector<int> seg, int out_rows) {
        const Tensor& ta = val(a);
        if (static_cast<int>(seg.size()) != ta.rows)
            throw std::invalid_argument("scatter_add_rows: segment length mismatch");
        Tensor out(out_rows, ta.cols);
        for (int i = 0; i < ta.rows; ++i)
            for (int j = 0; j < ta.cols; ++j) out.at(seg[i], j) += ta.at(i, j);
        return push(std::move(out), [a, seg = std::move(seg)](Tape& t, const Node& n) {
            Tensor& ga = t.nodes_[a].grad;
            for (int i = 0; i < ga.rows; ++i)
                for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += n.grad.at(seg[i], j);
        });
    }

    // mean over rows sharing a segment id
    Var segment_mean_rows(Var a, const std::vector<int>& seg, int out_rows) {
        std::vector<int> counts(out_rows, 0);
        for (int s : seg) ++counts[s];
        for (int c : counts)
            if (c == 0) throw std::invalid_argument("segment_mean_rows: empty segment");
        Var sum = scatter_add_rows(a, seg, out_rows);
        // scale each row by 1/count via a diagonal constant
        const Tensor& ts = val(sum);
        Tensor w(out_rows, 1);
        for (int i = 0; i < out_rows; ++i) w.at(i, 0) = 1.0 / counts[i];
        (void)ts;
        return mul_colvec(sum, constant(std::move(w)));
    }

    // scale row i of a by s[i] (s is r x 1)
    Var mul_colvec(Var a, Var s) {
        const Tensor& ta = val(a);
        const Tensor& tsv = val(s);
        if (tsv.rows != ta.rows || tsv.cols != 1) throw std::invalid_argument("mul_colvec: shape mismatch");
        Tensor out = ta;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out.at(i, j) *= tsv.at(i, 0);
        return push(std::move(out), [a, s](Tape& t, const Node& n) {
            const Tensor& ta = t.val(a);
            const Tensor& tsv = t.val(s);
            Tensor& ga = t.nodes_[a].grad;
            Tensor& gs = t.nodes_[s].grad;
            for (int i = 0; i < ta.rows; ++i) {
                double acc = 0;
                for (int j = 0; j < ta.cols; ++j) {
                    ga.at(i, j) += n.grad.at(i, j) * tsv.at(i, 0);
                    acc += n.grad.at(i, j) * ta.at(i, j);
                }
                gs.at(i, 0) += acc;
            }
        });
    }

    // sqrt(row sum of squares + eps), r x 1; eps guards coincident points
    Var row_norm(Var a, double eps = 1e-12) {
        const Tensor& ta = val(a);
        Tensor out(ta.rows, 1);
        for (int i = 0; i < ta.rows; ++i) {
            double s = eps;
            for (int j = 0; j < ta.cols; ++j) s += ta.at(i, j) * ta.at(i, j);
            out.at(i, 0) = std::sqrt(s);
        }
        return push(std::move(out), [a](Tape& t, const Node& n) {
            const Tensor& ta = t.val(a);
            Tensor& ga = t.nodes_[a].grad;
            for (int i = 0; i < ta.rows; ++i) {
                const double inv = n.grad.at(i, 0) / n.value.at(i, 0);
                for (int j = 0; j < ta.cols; ++j) ga.at(i, j) += inv * ta.at(i, j);
            }
        });
    }

    // subtract the column means (projection onto the zero center-of-mass
    // subspace); the projector is symmetric so backward reuses it
    Var center_rows(Var a) {
        const Tensor& ta = val(a);
        Tensor out = ta;
        for (int j = 0; j < ta.cols; ++j) {
            double mean = 0;
            for (int i = 0; i < ta.rows; ++i) mean += ta.at(i, j);
            mean /= ta.rows;
            for (int i = 0; i < ta.rows; ++i) out.at(i, j) -= mean;
        }
        return push(std::move(out), [a](Tape& t, const Node& n) {
            Tensor& ga = t.nodes_[a].grad;
            for (int j = 0; j < n.grad.cols; ++j) {
                double mean = 0;
                for (int i = 0; i < n.grad.rows; ++i) mean += n.grad.at(i, j);
                mean /= n.grad.rows;
                for (int i = 0; i < n.grad.rows; ++i) ga.at(i, j) += n.grad.at(i, j) - mean;
            }
        });
    }

    // mean of all entries, 1 x 1
    Var mean_all(Var a) {
        const Tensor& ta = val(a);
        Tensor out(1, 1);
        double s = 0;
        for (double x : ta.v) s += x;
        out.at(0, 0) = s / static_cast<double>(ta.size());
        return push(std::move(out), [a](Tape& t, const Node& n) {
            Tensor& ga = t.nodes_[a].grad;
            const double g = n.grad.at(0, 0) / static_cast<double>(ga.size());
            for (double& x : ga.v) x += g;
        });
    }

    /// Reverse pass from a scalar node; clears previous gradients.
    void backward(Var loss) {
        const Tensor& tl = val(loss);
        if (tl.rows != 1 || tl.cols != 1) throw std::invalid_argument("backward: loss must be scalar");
        for (auto& n : nodes_) {
            n.grad = Tensor(n.value.rows, n.value.cols);
        }
        nodes_[loss].grad.at(0, 0) = 1.0;
        for (int i = loss; i >= 0; --i)
            if (nodes_[i].backward) nodes_[i].backward(*this, nodes_[i]);
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&, const Node&)> backward;
    };

    const Tensor& val(Var x) const { return nodes_[x].value; }

    Var push(Tensor value, std::function<void(Tape&, const Node&)> backward) {
        Node n;
        n.value = std::move(value);
        n.grad = Tensor(n.value.rows, n.value.cols);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    static void check_same_shape(const Tensor& a, const Tensor& b, const std::string& op) {
        if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument(op + ": shape mismatch");
    }

    static void accumulate(Tensor& g, const Tensor& d) {
        for (std::size_t i = 0; i < g.size(); ++i) g.v[i] += d.v[i];
    }

    std::vector<Node> nodes_;
};

} // namespace ebd
