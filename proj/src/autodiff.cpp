#include "deepvlf/autodiff.hpp"

#include <cassert>
#include <cmath>

namespace deepvlf::ad {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

void Tape::backward(Var loss) {
    assert(recording);
    assert(nodes[loss.id].val.rows == 1 && nodes[loss.id].val.cols == 1);
    for (auto& n : nodes) {
        n.grad = Mat(n.val.rows, n.val.cols);
    }
    nodes[loss.id].grad.a[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        if (nodes[i].back) nodes[i].back(*this, i);
    }
}

Var constant(Tape& t, Mat m) { return t.push(std::move(m)); }

Var zeros(Tape& t, int rows, int cols) { return t.push(Mat(rows, cols)); }

Var matmul(Tape& t, Var a, Var b) {
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    Mat C(A.rows, B.cols);
    gemm_nn(A, B, C, false);
    return t.push(std::move(C), [a, b](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        gemm_nt(g, tp.nodes[b.id].val, tp.nodes[a.id].grad, true);
        gemm_tn(tp.nodes[a.id].val, g, tp.nodes[b.id].grad, true);
    });
}

Var add(Tape& t, Var a, Var b) {
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    assert(A.same_shape(B));
    Mat C = A;
    for (size_t i = 0; i < C.size(); ++i) C.a[i] += B.a[i];
    return t.push(std::move(C), [a, b](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        Mat& ga = tp.nodes[a.id].grad;
        Mat& gb = tp.nodes[b.id].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            ga.a[i] += g.a[i];
            gb.a[i] += g.a[i];
        }
    });
}

Var sub(Tape& t, Var a, Var b) {
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    assert(A.same_shape(B));
    Mat C = A;
    for (size_t i = 0; i < C.size(); ++i) C.a[i] -= B.a[i];
    return t.push(std::move(C), [a, b](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        Mat& ga = tp.nodes[a.id].grad;
        Mat& gb = tp.nodes[b.id].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            ga.a[i] += g.a[i];
            gb.a[i] -= g.a[i];
        }
    });
}

Var mul(Tape& t, Var a, Var b) {
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    assert(A.same_shape(B));
    Mat C = A;
    for (size_t i = 0; i < C.size(); ++i) C.a[i] *= B.a[i];
    return t.push(std::move(C), [a, b](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        const Mat& va = tp.nodes[a.id].val;
        const Mat& vb = tp.nodes[b.id].val;
        Mat& ga = tp.nodes[a.id].grad;
        Mat& gb = tp.nodes[b.id].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            ga.a[i] += g.a[i] * vb.a[i];
            gb.a[i] += g.a[i] * va.a[i];
        }
    });
}

Var scale(Tape& t, Var a, double c) {
    Mat C = t.val(a);
    for (double& v : C.a) v *= c;
    return t.push(std::move(C), [a, c](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        Mat& ga = tp.nodes[a.id].grad;
        for (size_t i = 0; i < g.size(); ++i) ga.a[i] += c * g.a[i];
    });
}

Var add_rowvec(Tape& t, Var a, Var bias) {
    const Mat& A = t.val(a);
    const Mat& B = t.val(bias);
    assert(B.rows == 1 && B.cols == A.cols);
    Mat C = A;
    for (int i = 0; i < C.rows; ++i) {
        double* ci = C.row(i);
        for (int j = 0; j < C.cols; ++j) ci[j] += B.a[j];
    }
    return t.push(std::move(C), [a, bias](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        Mat& ga = tp.nodes[a.id].grad;
        Mat& gb = tp.nodes[bias.id].grad;
        for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
        for (int i = 0; i < g.rows; ++i) {
            const double* gi = g.row(i);
            for (int j = 0; j < g.cols; ++j) gb.a[j] += gi[j];
        }
    });
}

Var mul_const(Tape& t, Var a, const Mat& c) {
    const Mat& A = t.val(a);
    assert(A.same_shape(c));
    Mat C = A;
    for (size_t i = 0; i < C.size(); ++i) C.a[i] *= c.a[i];
    return t.push(std::move(C), [a, c](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        Mat& ga = tp.nodes[a.id].grad;
        for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * c.a[i];
    });
}

Var mul_colbcast(Tape& t, Var a, const Mat& col) {
    const Mat& A = t.val(a);
    assert(col.rows == A.rows && col.cols == 1);
    Mat C = A;
    for (int i = 0; i < C.rows; ++i) {
        double s = col.a[i];
        double* ci = C.row(i);
        for (int j = 0; j < C.cols; ++j) ci[j] *= s;
    }
    return t.push(std::move(C), [a, col](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        Mat& ga = tp.nodes[a.id].grad;
        for (int i = 0; i < g.rows; ++i) {
            double s = col.a[i];
            const double* gi = g.row(i);
            double* gai = ga.row(i);
            for (int j = 0; j < g.cols; ++j) gai[j] += s * gi[j];
        }
    });
}

Var relu(Tape& t, Var a) {
    Mat C = t.val(a);
    for (double& v : C.a) v = v > 0.0 ? v : 0.0;
    return t.push(std::move(C), [a](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        const Mat& x = tp.nodes[a.id].val;
        Mat& ga = tp.nodes[a.id].grad;
        for (size_t i = 0; i < g.size(); ++i)
            if (x.a[i] > 0.0) ga.a[i] += g.a[i];
    });
}

Var gelu(Tape& t, Var a) {
    Mat C = t.val(a);
    for (double& v : C.a) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    return t.push(std::move(C), [a](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        const Mat& x = tp.nodes[a.id].val;
        Mat& ga = tp.nodes[a.id].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            double v = x.a[i];
            double phi_cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            ga.a[i] += g.a[i] * (phi_cdf + v * phi_pdf);
        }
    });
}

Var row_softmax(Tape& t, Var a) {
    const Mat& A = t.val(a);
    Mat C(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i) {
        const double* xi = A.row(i);
        double* yi = C.row(i);
        double mx = xi[0];
        for (int j = 1; j < A.cols; ++j) mx = std::max(mx, xi[j]);
        double s = 0.0;
        for (int j = 0; j < A.cols; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            s += yi[j];
        }
        for (int j = 0; j < A.cols; ++j) yi[j] /= s;
    }
    return t.push(std::move(C), [a](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        const Mat& y = tp.nodes[self].val;
        Mat& ga = tp.nodes[a.id].grad;
        for (int i = 0; i < g.rows; ++i) {
            const double* gi = g.row(i);
            const double* yi = y.row(i);
            double* gai = ga.row(i);
            double dot = 0.0;
            for (int j = 0; j < g.cols; ++j) dot += gi[j] * yi[j];
            for (int j = 0; j < g.cols; ++j) gai[j] += yi[j] * (gi[j] - dot);
        }
    });
}

Var logclamp(Tape& t, Var a, double eps) {
    Mat C = t.val(a);
    for (double& v : C.a) v = std::log(v > eps ? v : eps);
    return t.push(std::move(C), [a, eps](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        const Mat& x = tp.nodes[a.id].val;
        Mat& ga = tp.nodes[a.id].grad;
        for (size_t i = 0; i < g.size(); ++i)
            if (x.a[i] > eps) ga.a[i] += g.a[i] / x.a[i];
    });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    assert(!parts.empty());
    int rows = t.val(parts[0]).rows;
    int cols = 0;
    for (Var p : parts) {
        assert(t.val(p).rows == rows);
        cols += t.val(p).cols;
    }
    Mat C(rows, cols);
    int off = 0;
    for (Var p : parts) {
        const Mat& P = t.val(p);
        for (int i = 0; i < rows; ++i) {
            const double* pi = P.row(i);
            double* ci = C.row(i) + off;
            for (int j = 0; j < P.cols; ++j) ci[j] = pi[j];
        }
        off += P.cols;
    }
    return t.push(std::move(C), [parts](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        int off = 0;
        for (Var p : parts) {
            Mat& gp = tp.nodes[p.id].grad;
            for (int i = 0; i < g.rows; ++i) {
                const double* gi = g.row(i) + off;
                double* gpi = gp.row(i);
                for (int j = 0; j < gp.cols; ++j) gpi[j] += gi[j];
            }
            off += gp.cols;
        }
    });
}

namespace {

// Lightweight views of one block inside a stacked matrix.
Mat block_of(const Mat& m, int r0, int rows) {
    Mat out(rows, m.cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < m.cols; ++j) out(i, j) = m(r0 + i, j);
    return out;
}

void add_block(Mat& dst, const Mat& src, int r0) {
    for (int i = 0; i < src.rows; ++i)
        for (int j = 0; j < src.cols; ++j) dst(r0 + i, j) += src(i, j);
}

}  // namespace

Var bmm_nt(Tape& t, Var a, Var b, int block) {
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    assert(A.rows == B.rows && A.cols == B.cols && A.rows % block == 0);
    const int nblocks = A.rows / block;
    Mat C(A.rows, block);
    for (int bl = 0; bl < nblocks; ++bl) {
        int r0 = bl * block;
        for (int i = 0; i < block; ++i) {
            const double* ai = A.row(r0 + i);
            double* ci = C.row(r0 + i);
            for (int j = 0; j < block; ++j) {
                const double* bj = B.row(r0 + j);
                double s = 0.0;
                for (int k = 0; k < A.cols; ++k) s += ai[k] * bj[k];
                ci[j] = s;
            }
        }
    }
    return t.push(std::move(C), [a, b, block](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        const Mat& A = tp.nodes[a.id].val;
        const Mat& B = tp.nodes[b.id].val;
        Mat& ga = tp.nodes[a.id].grad;
        Mat& gb = tp.nodes[b.id].grad;
        const int nblocks = A.rows / block;
        for (int bl = 0; bl < nblocks; ++bl) {
            int r0 = bl * block;
            Mat gblk = block_of(g, r0, block);
            Mat ablk = block_of(A, r0, block);
            Mat bblk = block_of(B, r0, block);
            Mat da(block, A.cols), db(block, B.cols);
            gemm_nn(gblk, bblk, da, false);  // dA = dS * B
            gemm_tn(gblk, ablk, db, false);  // dB = dS^T * A
            add_block(ga, da, r0);
            add_block(gb, db, r0);
        }
    });
}

Var bmm_nn(Tape& t, Var a, Var b, int block) {
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    assert(A.cols == block && A.rows == B.rows && A.rows % block == 0);
    const int nblocks = A.rows / block;
    Mat C(B.rows, B.cols);
    for (int bl = 0; bl < nblocks; ++bl) {
        int r0 = bl * block;
        for (int i = 0; i < block; ++i) {
            const double* ai = A.row(r0 + i);
            double* ci = C.row(r0 + i);
            for (int k = 0; k < block; ++k) {
                const double aik = ai[k];
                const double* bk = B.row(r0 + k);
                for (int j = 0; j < B.cols; ++j) ci[j] += aik * bk[j];
            }
        }
    }
    return t.push(std::move(C), [a, b, block](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        const Mat& A = tp.nodes[a.id].val;
        const Mat& B = tp.nodes[b.id].val;
        Mat& ga = tp.nodes[a.id].grad;
        Mat& gb = tp.nodes[b.id].grad;
        const int nblocks = A.rows / block;
        for (int bl = 0; bl < nblocks; ++bl) {
            int r0 = bl * block;
            Mat gblk = block_of(g, r0, block);
            Mat ablk = block_of(A, r0, block);
            Mat bblk = block_of(B, r0, block);
            Mat da(block, block), db(block, B.cols);
            gemm_nt(gblk, bblk, da, false);  // dP = dC * L^T
            gemm_tn(ablk, gblk, db, false);  // dL = P^T * dC
            add_block(ga, da, r0);
            add_block(gb, db, r0);
        }
    });
}

Var ssum(Tape& t, Var a) {
    const Mat& A = t.val(a);
    Mat C(1, 1);
    double s = 0.0;
    for (double v : A.a) s += v;
    C.a[0] = s;
    return t.push(std::move(C), [a](Tape& tp, int self) {
        double g = tp.nodes[self].grad.a[0];
        Mat& ga = tp.nodes[a.id].grad;
        for (double& v : ga.a) v += g;
    });
}

Var sadd(Tape& t, Var a, Var b) { return add(t, a, b); }

Var sscale(Tape& t, Var a, double c) { return scale(t, a, c); }

Var sadd_const(Tape& t, Var a, double c) {
    Mat C = t.val(a);
    for (double& v : C.a) v += c;
    return t.push(std::move(C), [a](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        Mat& ga = tp.nodes[a.id].grad;
        for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
    });
}

Var ssqrt(Tape& t, Var a) {
    Mat C = t.val(a);
    for (double& v : C.a) v = std::sqrt(v);
    return t.push(std::move(C), [a](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        const Mat& y = tp.nodes[self].val;
        Mat& ga = tp.nodes[a.id].grad;
        for (size_t i = 0; i < g.size(); ++i) ga.a[i] += 0.5 * g.a[i] / y.a[i];
    });
}

Var sub_sbcast(Tape& t, Var a, Var s) {
    const Mat& A = t.val(a);
    assert(t.val(s).size() == 1);
    double sv = t.val(s).a[0];
    Mat C = A;
    for (double& v : C.a) v -= sv;
    return t.push(std::move(C), [a, s](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        Mat& ga = tp.nodes[a.id].grad;
        Mat& gs = tp.nodes[s.id].grad;
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) {
            ga.a[i] += g.a[i];
            acc += g.a[i];
        }
        gs.a[0] -= acc;
    });
}

Var div_sbcast(Tape& t, Var a, Var s) {
    const Mat& A = t.val(a);
    assert(t.val(s).size() == 1);
    double sv = t.val(s).a[0];
    Mat C = A;
    for (double& v : C.a) v /= sv;
    return t.push(std::move(C), [a, s](Tape& tp, int self) {
        const Mat& g = tp.nodes[self].grad;
        const Mat& va = tp.nodes[a.id].val;
        double sv = tp.nodes[s.id].val.a[0];
        Mat& ga = tp.nodes[a.id].grad;
        Mat& gs = tp.nodes[s.id].grad;
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) {
            ga.a[i] += g.a[i] / sv;
            acc += g.a[i] * va.a[i];
        }
        gs.a[0] -= acc / (sv * sv);
    });
}

}  // namespace deepvlf::ad
