#include "cdiff/graph.hpp"

#include <cmath>
#include <cstring>

#include "cdiff/errors.hpp"
#include "cdiff/kernels.hpp"

namespace cdiff::ad {

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

int Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::input(Mat v) {
    Node n;
    n.op = Op::kInput;
    n.val = std::move(v);
    return push(std::move(n));
}

int Graph::param(const Mat* p) {
    Node n;
    n.op = Op::kParam;
    n.val = *p;
    n.bound = p;
    n.needs_grad = want_grad;
    return push(std::move(n));
}

int Graph::leaf(Mat v) {
    Node n;
    n.op = Op::kLeaf;
    n.val = std::move(v);
    n.needs_grad = want_grad;
    return push(std::move(n));
}

int Graph::binary(Op op, int a, int b) {
    const Mat& va = at(a).val;
    const Mat& vb = at(b).val;
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    if (va.same_shape(vb)) {
        n.bcast = Bcast::none;
    } else if (vb.is_scalar()) {
        n.bcast = Bcast::scalar;
    } else if (vb.rows == 1 && vb.cols == va.cols) {
        n.bcast = Bcast::row;
    } else if (vb.cols == 1 && vb.rows == va.rows) {
        n.bcast = Bcast::col;
    } else {
        throw ShapeError("binary op operands " + va.shape_str() + " vs " + vb.shape_str());
    }
    n.needs_grad = want_grad && (at(a).needs_grad || at(b).needs_grad);
    n.val = Mat(va.rows, va.cols);
    const size_t sz = va.size();
    switch (n.bcast) {
        case Bcast::none:
            if (op == Op::kAdd) kernels::add(sz, va.d.data(), vb.d.data(), n.val.d.data());
            else if (op == Op::kSub) kernels::sub(sz, va.d.data(), vb.d.data(), n.val.d.data());
            else kernels::mul(sz, va.d.data(), vb.d.data(), n.val.d.data());
            break;
        case Bcast::scalar: {
            double s = vb.d[0];
            for (size_t i = 0; i < sz; ++i)
                n.val.d[i] = op == Op::kAdd ? va.d[i] + s : op == Op::kSub ? va.d[i] - s : va.d[i] * s;
            break;
        }
        case Bcast::row:
            for (int i = 0; i < va.rows; ++i)
                for (int j = 0; j < va.cols; ++j) {
                    double s = vb.at(0, j);
                    n.val.at(i, j) = op == Op::kAdd ? va.at(i, j) + s
                                   : op == Op::kSub ? va.at(i, j) - s
                                                    : va.at(i, j) * s;
                }
            break;
        case Bcast::col:
            for (int i = 0; i < va.rows; ++i) {
                double s = vb.at(i, 0);
                for (int j = 0; j < va.cols; ++j)
                    n.val.at(i, j) = op == Op::kAdd ? va.at(i, j) + s
                                   : op == Op::kSub ? va.at(i, j) - s
                                                    : va.at(i, j) * s;
            }
            break;
    }
    return push(std::move(n));
}

int Graph::add(int a, int b) { return binary(Op::kAdd, a, b); }
int Graph::sub(int a, int b) { return binary(Op::kSub, a, b); }
int Graph::mul(int a, int b) { return binary(Op::kMul, a, b); }

int Graph::unary(Op op, int a, double c0, double c1) {
    const Mat& x = at(a).val;
    Node n;
    n.op = op;
    n.a = a;
    n.c0 = c0;
    n.c1 = c1;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(x.rows, x.cols);
    const size_t sz = x.size();
    switch (op) {
        case Op::kScale:
            kernels::scale(sz, c0, x.d.data(), n.val.d.data());
            break;
        case Op::kAddConst:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = x.d[i] + c0;
            break;
        case Op::kPowConst:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = std::pow(x.d[i], c0);
            break;
        case Op::kClampMin:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = x.d[i] < c0 ? c0 : x.d[i];
            break;
        case Op::kLog:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = std::log(x.d[i]);
            break;
        case Op::kExp:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = std::exp(x.d[i]);
            break;
        case Op::kLogistic:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = 1.0 / (1.0 + std::exp(-x.d[i]));
            break;
        case Op::kTanh:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = std::tanh(x.d[i]);
            break;
        case Op::kRelu:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = x.d[i] > 0.0 ? x.d[i] : 0.0;
            break;
        case Op::kLeakyRelu:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = x.d[i] > 0.0 ? x.d[i] : c0 * x.d[i];
            break;
        case Op::kElu:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = x.d[i] > 0.0 ? x.d[i] : std::expm1(x.d[i]);
            break;
        case Op::kSilu:
            for (size_t i = 0; i < sz; ++i) n.val.d[i] = x.d[i] / (1.0 + std::exp(-x.d[i]));
            break;
        case Op::kGelu:
            for (size_t i = 0; i < sz; ++i) {
                double v = x.d[i];
                double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
                n.val.d[i] = 0.5 * v * (1.0 + t);
            }
            break;
        default:
            throw ArgumentError("unary: bad op");
    }
    return push(std::move(n));
}

int Graph::scale(int a, double s) { return unary(Op::kScale, a, s); }
int Graph::add_const(int a, double c) { return unary(Op::kAddConst, a, c); }
int Graph::pow_const(int a, double p) { return unary(Op::kPowConst, a, p); }
int Graph::clamp_min(int a, double c) { return unary(Op::kClampMin, a, c); }
int Graph::log_(int a) { return unary(Op::kLog, a); }
int Graph::exp_(int a) { return unary(Op::kExp, a); }
int Graph::logistic(int a) { return unary(Op::kLogistic, a); }
int Graph::tanh_(int a) { return unary(Op::kTanh, a); }
int Graph::relu(int a) { return unary(Op::kRelu, a); }
int Graph::leaky_relu(int a, double slope) { return unary(Op::kLeakyRelu, a, slope); }
int Graph::elu(int a) { return unary(Op::kElu, a); }
int Graph::silu(int a) { return unary(Op::kSilu, a); }
int Graph::gelu(int a) { return unary(Op::kGelu, a); }

int Graph::matmul(int a, int b) {
    const Mat& A = at(a).val;
    const Mat& B = at(b).val;
    if (A.cols != B.rows) throw ShapeError("matmul " + A.shape_str() + " * " + B.shape_str());
    Node n;
    n.op = Op::kMatMul;
    n.a = a;
    n.b = b;
    n.needs_grad = want_grad && (at(a).needs_grad || at(b).needs_grad);
    n.val = Mat(A.rows, B.cols);
    kernels::gemm_nn(A.rows, B.cols, A.cols, A.d.data(), B.d.data(), n.val.d.data(), false);
    return push(std::move(n));
}

int Graph::matmul_nt(int a, int b) {
    const Mat& A = at(a).val;
    const Mat& B = at(b).val;
    if (A.cols != B.cols) throw ShapeError("matmul_nt " + A.shape_str() + " * " + B.shape_str() + "^T");
    Node n;
    n.op = Op::kMatMulNT;
    n.a = a;
    n.b = b;
    n.needs_grad = want_grad && (at(a).needs_grad || at(b).needs_grad);
    n.val = Mat(A.rows, B.rows);
    kernels::gemm_nt(A.rows, B.rows, A.cols, A.d.data(), B.d.data(), n.val.d.data(), false);
    return push(std::move(n));
}

int Graph::matmul_tn(int a, int b) {
    const Mat& A = at(a).val;
    const Mat& B = at(b).val;
    if (A.rows != B.rows) throw ShapeError("matmul_tn " + A.shape_str() + "^T * " + B.shape_str());
    Node n;
    n.op = Op::kMatMulTN;
    n.a = a;
    n.b = b;
    n.needs_grad = want_grad && (at(a).needs_grad || at(b).needs_grad);
    n.val = Mat(A.cols, B.cols);
    kernels::gemm_tn(A.cols, B.cols, A.rows, A.d.data(), B.d.data(), n.val.d.data(), false);
    return push(std::move(n));
}

int Graph::transpose_(int a) {
    Node n;
    n.op = Op::kTranspose;
    n.a = a;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = transpose(at(a).val);
    return push(std::move(n));
}

int Graph::sum_all(int a) {
    Node n;
    n.op = Op::kSumAll;
    n.a = a;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(1, 1);
    n.val.d[0] = kernels::sum(at(a).val.size(), at(a).val.d.data());
    return push(std::move(n));
}

int Graph::mean_all(int a) {
    const Mat& x = at(a).val;
    if (x.size() == 0) throw ShapeError("mean_all of empty");
    Node n;
    n.op = Op::kMeanAll;
    n.a = a;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(1, 1);
    n.val.d[0] = kernels::sum(x.size(), x.d.data()) / static_cast<double>(x.size());
    return push(std::move(n));
}

int Graph::row_sums(int a) {
    const Mat& x = at(a).val;
    Node n;
    n.op = Op::kRowSums;
    n.a = a;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) n.val.at(i, 0) = kernels::sum(static_cast<size_t>(x.cols), x.row(i));
    return push(std::move(n));
}

int Graph::col_sums(int a) {
    const Mat& x = at(a).val;
    Node n;
    n.op = Op::kColSums;
    n.a = a;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(1, x.cols);
    for (int i = 0; i < x.rows; ++i)
        kernels::axpy(static_cast<size_t>(x.cols), 1.0, x.row(i), n.val.d.data());
    return push(std::move(n));
}

int Graph::col_means(int a) {
    const Mat& x = at(a).val;
    if (x.rows == 0) throw ShapeError("col_means of empty");
    Node n;
    n.op = Op::kColMeans;
    n.a = a;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(1, x.cols);
    for (int i = 0; i < x.rows; ++i)
        kernels::axpy(static_cast<size_t>(x.cols), 1.0, x.row(i), n.val.d.data());
    kernels::scale(static_cast<size_t>(x.cols), 1.0 / x.rows, n.val.d.data(), n.val.d.data());
    return push(std::move(n));
}

int Graph::softmax_rows(int a) {
    const Mat& x = at(a).val;
    Node n;
    n.op = Op::kSoftmaxRows;
    n.a = a;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        double* yr = n.val.row(i);
        double m = xr[0];
        for (int j = 1; j < x.cols; ++j) m = std::max(m, xr[j]);
        double s = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            yr[j] = std::exp(xr[j] - m);
            s += yr[j];
        }
        kernels::scale(static_cast<size_t>(x.cols), 1.0 / s, yr, yr);
    }
    return push(std::move(n));
}

int Graph::masked_softmax_rows(int a, Mat mask) {
    const Mat& x = at(a).val;
    check_same_shape(x, mask, "masked_softmax_rows");
    Node n;
    n.op = Op::kMaskedSoftmaxRows;
    n.a = a;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(x.rows, x.cols);
    n.aux = std::move(mask);
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        const double* mr = n.aux.row(i);
        double* yr = n.val.row(i);
        double m = -HUGE_VAL;
        for (int j = 0; j < x.cols; ++j)
            if (mr[j] != 0.0) m = std::max(m, xr[j]);
        if (m == -HUGE_VAL)
            throw DegenerateError("masked softmax: empty neighborhood at row " + std::to_string(i));
        double s = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            if (mr[j] != 0.0) {
                yr[j] = std::exp(xr[j] - m);
                s += yr[j];
            } else {
                yr[j] = 0.0;
            }
        }
        kernels::scale(static_cast<size_t>(x.cols), 1.0 / s, yr, yr);
    }
    return push(std::move(n));
}

int Graph::outer_sum(int a, int b) {
    const Mat& va = at(a).val;
    const Mat& vb = at(b).val;
    if (va.cols != 1 || vb.cols != 1) throw ShapeError("outer_sum expects column vectors");
    Node n;
    n.op = Op::kOuterSum;
    n.a = a;
    n.b = b;
    n.needs_grad = want_grad && (at(a).needs_grad || at(b).needs_grad);
    n.val = Mat(va.rows, vb.rows);
    for (int i = 0; i < va.rows; ++i)
        for (int j = 0; j < vb.rows; ++j) n.val.at(i, j) = va.at(i, 0) + vb.at(j, 0);
    return push(std::move(n));
}

int Graph::diag(int a) {
    const Mat& x = at(a).val;
    if (x.rows != x.cols) throw ShapeError("diag of non-square " + x.shape_str());
    Node n;
    n.op = Op::kDiag;
    n.a = a;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) n.val.at(i, 0) = x.at(i, i);
    return push(std::move(n));
}

int Graph::concat_rows(int a, int b) {
    const Mat& va = at(a).val;
    const Mat& vb = at(b).val;
    if (va.cols != vb.cols) throw ShapeError("concat_rows " + va.shape_str() + " | " + vb.shape_str());
    Node n;
    n.op = Op::kConcatRows;
    n.a = a;
    n.b = b;
    n.i0 = va.rows;
    n.needs_grad = want_grad && (at(a).needs_grad || at(b).needs_grad);
    n.val = Mat(va.rows + vb.rows, va.cols);
    std::memcpy(n.val.d.data(), va.d.data(), sizeof(double) * va.size());
    std::memcpy(n.val.d.data() + va.size(), vb.d.data(), sizeof(double) * vb.size());
    return push(std::move(n));
}

int Graph::concat_cols(int a, int b) {
    const Mat& va = at(a).val;
    const Mat& vb = at(b).val;
    if (va.rows != vb.rows) throw ShapeError("concat_cols " + va.shape_str() + " | " + vb.shape_str());
    Node n;
    n.op = Op::kConcatCols;
    n.a = a;
    n.b = b;
    n.i0 = va.cols;
    n.needs_grad = want_grad && (at(a).needs_grad || at(b).needs_grad);
    n.val = Mat(va.rows, va.cols + vb.cols);
    for (int i = 0; i < va.rows; ++i) {
        std::memcpy(n.val.row(i), va.row(i), sizeof(double) * va.cols);
        std::memcpy(n.val.row(i) + va.cols, vb.row(i), sizeof(double) * vb.cols);
    }
    return push(std::move(n));
}

int Graph::slice_rows(int a, int r0, int r1) {
    const Mat& x = at(a).val;
    if (r0 < 0 || r1 > x.rows || r0 >= r1) throw ShapeError("slice_rows range");
    Node n;
    n.op = Op::kSliceRows;
    n.a = a;
    n.i0 = r0;
    n.i1 = r1;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(r1 - r0, x.cols);
    std::memcpy(n.val.d.data(), x.row(r0), sizeof(double) * n.val.size());
    return push(std::move(n));
}

int Graph::slice_cols(int a, int c0, int c1) {
    const Mat& x = at(a).val;
    if (c0 < 0 || c1 > x.cols || c0 >= c1) throw ShapeError("slice_cols range");
    Node n;
    n.op = Op::kSliceCols;
    n.a = a;
    n.i0 = c0;
    n.i1 = c1;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(x.rows, c1 - c0);
    for (int i = 0; i < x.rows; ++i)
        std::memcpy(n.val.row(i), x.row(i) + c0, sizeof(double) * (c1 - c0));
    return push(std::move(n));
}

int Graph::reshape(int a, int r, int c) {
    const Mat& x = at(a).val;
    if (static_cast<size_t>(r) * c != x.size()) throw ShapeError("reshape size mismatch");
    Node n;
    n.op = Op::kReshape;
    n.a = a;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(r, c);
    n.val.d = x.d;
    return push(std::move(n));
}

namespace {
inline int conv_out(int extent, int k, int stride, int pad) { return (extent + 2 * pad - k) / stride + 1; }
}  // namespace

int Graph::im2col2d(int a, int C, int H, int W, int k, int stride, int pad) {
    const Mat& x = at(a).val;
    if (x.rows != C || x.cols != H * W) throw ShapeError("im2col2d input " + x.shape_str());
    int Ho = conv_out(H, k, stride, pad);
    int Wo = conv_out(W, k, stride, pad);
    Node n;
    n.op = Op::kIm2Col2D;
    n.a = a;
    n.i0 = C;
    n.i1 = H;
    n.i2 = W;
    n.i3 = k;
    n.i4 = stride;
    n.i5 = pad;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(C * k * k, Ho * Wo);
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* orow = n.val.row((c * k + ky) * k + kx);
                const double* xc = x.row(c);
                int idx = 0;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < Wo; ++ox, ++idx) {
                        int ix = ox * stride - pad + kx;
                        orow[idx] = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? xc[iy * W + ix] : 0.0;
                    }
                }
            }
    return push(std::move(n));
}

int Graph::im2col3d(int a, int C, int D, int H, int W, int k, int stride, int pad) {
    const Mat& x = at(a).val;
    if (x.rows != C || x.cols != D * H * W) throw ShapeError("im2col3d input " + x.shape_str());
    int Do = conv_out(D, k, stride, pad);
    int Ho = conv_out(H, k, stride, pad);
    int Wo = conv_out(W, k, stride, pad);
    Node n;
    n.op = Op::kIm2Col3D;
    n.a = a;
    n.i0 = C;
    n.i1 = D;
    n.i2 = H;
    n.i3 = W;
    n.i4 = k;
    n.i5 = stride;
    n.c0 = pad;
    n.needs_grad = want_grad && at(a).needs_grad;
    n.val = Mat(C * k * k * k, Do * Ho * Wo);
    for (int c = 0; c < C; ++c)
        for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    double* orow = n.val.row(((c * k + kz) * k + ky) * k + kx);
                    const double* xc = x.row(c);
                    int idx = 0;
                    for (int oz = 0; oz < Do; ++oz) {
                        int iz = oz * stride - pad + kz;
                        for (int oy = 0; oy < Ho; ++oy) {
                            int iy = oy * stride - pad + ky;
                            for (int ox = 0; ox < Wo; ++ox, ++idx) {
                                int ix = ox * stride - pad + kx;
                                orow[idx] = (iz >= 0 && iz < D && iy >= 0 && iy < H && ix >= 0 && ix < W)
                                                ? xc[(iz * H + iy) * W + ix]
                                                : 0.0;
                            }
                        }
                    }
                }
    return push(std::move(n));
}

int Graph::upsample2d(int a, int C, int H, int W, int factor) {
    const Mat& x = at(a).val;
    if (x.rows != C || x.cols != H * W) throw ShapeError("upsample2d input " + x.shape_str());
    Node n;
    n.op = Op::kUpsample2D;
    n.a = a;
    n.i0 = C;
    n.i1 = H;
    n.i2 = W;
    n.i3 = factor;
    n.needs_grad = want_grad && at(a).needs_grad;
    int Ho = H * factor, Wo = W * factor;
    n.val = Mat(C, Ho * Wo);
    for (int c = 0; c < C; ++c) {
        const double* xc = x.row(c);
        double* oc = n.val.row(c);
        for (int y = 0; y < Ho; ++y)
            for (int xpos = 0; xpos < Wo; ++xpos)
                oc[y * Wo + xpos] = xc[(y / factor) * W + (xpos / factor)];
    }
    return push(std::move(n));
}

const Mat& Graph::grad(int ref) {
    ensure_grad(ref);
    return at(ref).grad;
}

void Graph::ensure_grad(int ref) {
    Node& n = at(ref);
    if (n.grad.rows == 0) n.grad = Mat(n.val.rows, n.val.cols);
}

void Graph::clear() { nodes_.clear(); }

void Graph::for_each_param_grad(const std::function<void(const Mat*, const Mat&)>& fn) const {
    for (const Node& n : nodes_)
        if (n.op == Op::kParam && n.grad.rows != 0) fn(n.bound, n.grad);
}

void Graph::backward(int root) {
    if (!want_grad) throw ArgumentError("backward on a no-grad graph");
    Node& r = at(root);
    if (!r.val.is_scalar()) throw ArgumentError("backward root must be 1x1, got " + r.val.shape_str());
    if (!r.needs_grad) return;  // nothing differentiable below
    ensure_grad(root);
    r.grad.d[0] = 1.0;
    for (int i = root; i >= 0; --i) {
        Node& n = at(i);
        if (!n.needs_grad || n.grad.rows == 0) continue;
        backward_node(i);
    }
}

void Graph::backward_node(int ref) {
    Node& n = at(ref);
    const Mat& g = n.grad;
    const size_t sz = n.val.size();

    auto grad_into_a = [&]() -> Mat* {
        if (n.a < 0 || !at(n.a).needs_grad) return nullptr;
        ensure_grad(n.a);
        return &at(n.a).grad;
    };
    auto grad_into_b = [&]() -> Mat* {
        if (n.b < 0 || !at(n.b).needs_grad) return nullptr;
        ensure_grad(n.b);
        return &at(n.b).grad;
    };

    // Reduce an unbroadcast full-shape gradient into operand b's shape.
    auto reduce_to_b = [&](const std::function<double(int, int)>& cell, Mat& gb) {
        const Mat& full = n.val;
        switch (n.bcast) {
            case Bcast::none:
                for (int i = 0; i < full.rows; ++i)
                    for (int j = 0; j < full.cols; ++j) gb.at(i, j) += cell(i, j);
                break;
            case Bcast::scalar: {
                double s = 0.0;
                for (int i = 0; i < full.rows; ++i)
                    for (int j = 0; j < full.cols; ++j) s += cell(i, j);
                gb.d[0] += s;
                break;
            }
            case Bcast::row:
                for (int i = 0; i < full.rows; ++i)
                    for (int j = 0; j < full.cols; ++j) gb.at(0, j) += cell(i, j);
                break;
            case Bcast::col:
                for (int i = 0; i < full.rows; ++i) {
                    double s = 0.0;
                    for (int j = 0; j < full.cols; ++j) s += cell(i, j);
                    gb.at(i, 0) += s;
                }
                break;
        }
    };

    switch (n.op) {
        case Op::kInput:
        case Op::kParam:
        case Op::kLeaf:
            return;

        case Op::kAdd: {
            if (Mat* ga = grad_into_a()) kernels::axpy(sz, 1.0, g.d.data(), ga->d.data());
            if (Mat* gb = grad_into_b())
                reduce_to_b([&](int i, int j) { return g.at(i, j); }, *gb);
            return;
        }
        case Op::kSub: {
            if (Mat* ga = grad_into_a()) kernels::axpy(sz, 1.0, g.d.data(), ga->d.data());
            if (Mat* gb = grad_into_b())
                reduce_to_b([&](int i, int j) { return -g.at(i, j); }, *gb);
            return;
        }
        case Op::kMul: {
            const Mat& va = at(n.a).val;
            const Mat& vb = at(n.b).val;
            if (Mat* ga = grad_into_a()) {
                switch (n.bcast) {
                    case Bcast::none: {
                        for (size_t i = 0; i < sz; ++i) ga->d[i] += g.d[i] * vb.d[i];
                        break;
                    }
                    case Bcast::scalar:
                        kernels::axpy(sz, vb.d[0], g.d.data(), ga->d.data());
                        break;
                    case Bcast::row:
                        for (int i = 0; i < va.rows; ++i)
                            for (int j = 0; j < va.cols; ++j) ga->at(i, j) += g.at(i, j) * vb.at(0, j);
                        break;
                    case Bcast::col:
                        for (int i = 0; i < va.rows; ++i)
                            kernels::axpy(static_cast<size_t>(va.cols), vb.at(i, 0), g.row(i), ga->row(i));
                        break;
                }
            }
            if (Mat* gb = grad_into_b())
                reduce_to_b([&](int i, int j) { return g.at(i, j) * va.at(i, j); }, *gb);
            return;
        }
        case Op::kScale: {
            if (Mat* ga = grad_into_a()) kernels::axpy(sz, n.c0, g.d.data(), ga->d.data());
            return;
        }
        case Op::kAddConst: {
            if (Mat* ga = grad_into_a()) kernels::axpy(sz, 1.0, g.d.data(), ga->d.data());
            return;
        }
        case Op::kPowConst: {
            if (Mat* ga = grad_into_a()) {
                const Mat& x = at(n.a).val;
                for (size_t i = 0; i < sz; ++i)
                    ga->d[i] += g.d[i] * n.c0 * std::pow(x.d[i], n.c0 - 1.0);
            }
            return;
        }
        case Op::kClampMin: {
            if (Mat* ga = grad_into_a()) {
                const Mat& x = at(n.a).val;
                for (size_t i = 0; i < sz; ++i)
                    if (x.d[i] > n.c0) ga->d[i] += g.d[i];
            }
            return;
        }
        case Op::kLog: {
            if (Mat* ga = grad_into_a()) {
                const Mat& x = at(n.a).val;
                for (size_t i = 0; i < sz; ++i) ga->d[i] += g.d[i] / x.d[i];
            }
            return;
        }
        case Op::kExp: {
            if (Mat* ga = grad_into_a())
                for (size_t i = 0; i < sz; ++i) ga->d[i] += g.d[i] * n.val.d[i];
            return;
        }
        case Op::kLogistic: {
            if (Mat* ga = grad_into_a())
                for (size_t i = 0; i < sz; ++i) {
                    double y = n.val.d[i];
                    ga->d[i] += g.d[i] * y * (1.0 - y);
                }
            return;
        }
        case Op::kTanh: {
            if (Mat* ga = grad_into_a())
                for (size_t i = 0; i < sz; ++i) {
                    double y = n.val.d[i];
                    ga->d[i] += g.d[i] * (1.0 - y * y);
                }
            return;
        }
        case Op::kRelu: {
            if (Mat* ga = grad_into_a()) {
                const Mat& x = at(n.a).val;
                for (size_t i = 0; i < sz; ++i)
                    if (x.d[i] > 0.0) ga->d[i] += g.d[i];
            }
            return;
        }
        case Op::kLeakyRelu: {
            if (Mat* ga = grad_into_a()) {
                const Mat& x = at(n.a).val;
                for (size_t i = 0; i < sz; ++i) ga->d[i] += g.d[i] * (x.d[i] > 0.0 ? 1.0 : n.c0);
            }
            return;
        }
        case Op::kElu: {
            if (Mat* ga = grad_into_a()) {
                const Mat& x = at(n.a).val;
                for (size_t i = 0; i < sz; ++i)
                    ga->d[i] += g.d[i] * (x.d[i] > 0.0 ? 1.0 : n.val.d[i] + 1.0);
            }
            return;
        }
        case Op::kSilu: {
            if (Mat* ga = grad_into_a()) {
                const Mat& x = at(n.a).val;
                for (size_t i = 0; i < sz; ++i) {
                    double s = 1.0 / (1.0 + std::exp(-x.d[i]));
                    ga->d[i] += g.d[i] * s * (1.0 + x.d[i] * (1.0 - s));
                }
            }
            return;
        }
        case Op::kGelu: {
            if (Mat* ga = grad_into_a()) {
                const Mat& x = at(n.a).val;
                for (size_t i = 0; i < sz; ++i) {
                    double v = x.d[i];
                    double inner = kGeluC * (v + kGeluA * v * v * v);
                    double t = std::tanh(inner);
                    double dinner = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                    ga->d[i] += g.d[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner);
                }
            }
            return;
        }
        case Op::kMatMul: {
            const Mat& A = at(n.a).val;
            const Mat& B = at(n.b).val;
            if (Mat* ga = grad_into_a())
                kernels::gemm_nt(A.rows, A.cols, B.cols, g.d.data(), B.d.data(), ga->d.data(), true);
            if (Mat* gb = grad_into_b())
                kernels::gemm_tn(B.rows, B.cols, A.rows, A.d.data(), g.d.data(), gb->d.data(), true);
            return;
        }
        case Op::kMatMulNT: {
            const Mat& A = at(n.a).val;
            const Mat& B = at(n.b).val;
            if (Mat* ga = grad_into_a())
                kernels::gemm_nn(A.rows, A.cols, B.rows, g.d.data(), B.d.data(), ga->d.data(), true);
            if (Mat* gb = grad_into_b())
                kernels::gemm_tn(B.rows, B.cols, A.rows, g.d.data(), A.d.data(), gb->d.data(), true);
            return;
        }
        case Op::kMatMulTN: {
            const Mat& A = at(n.a).val;  // k x m
            const Mat& B = at(n.b).val;  // k x n
            if (Mat* ga = grad_into_a())
                kernels::gemm_nt(A.rows, A.cols, B.cols, B.d.data(), g.d.data(), ga->d.data(), true);
            if (Mat* gb = grad_into_b())
                kernels::gemm_nn(B.rows, B.cols, A.cols, A.d.data(), g.d.data(), gb->d.data(), true);
            return;
        }
        case Op::kTranspose: {
            if (Mat* ga = grad_into_a()) {
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) ga->at(j, i) += g.at(i, j);
            }
            return;
        }
        case Op::kSumAll: {
            if (Mat* ga = grad_into_a()) {
                double s = g.d[0];
                for (auto& v : ga->d) v += s;
            }
            return;
        }
        case Op::kMeanAll: {
            if (Mat* ga = grad_into_a()) {
                double s = g.d[0] / static_cast<double>(ga->size());
                for (auto& v : ga->d) v += s;
            }
            return;
        }
        case Op::kRowSums: {
            if (Mat* ga = grad_into_a())
                for (int i = 0; i < ga->rows; ++i) {
                    double s = g.at(i, 0);
                    for (int j = 0; j < ga->cols; ++j) ga->at(i, j) += s;
                }
            return;
        }
        case Op::kColSums: {
            if (Mat* ga = grad_into_a())
                for (int i = 0; i < ga->rows; ++i)
                    kernels::axpy(static_cast<size_t>(ga->cols), 1.0, g.d.data(), ga->row(i));
            return;
        }
        case Op::kColMeans: {
            if (Mat* ga = grad_into_a()) {
                double inv = 1.0 / ga->rows;
                for (int i = 0; i < ga->rows; ++i)
                    kernels::axpy(static_cast<size_t>(ga->cols), inv, g.d.data(), ga->row(i));
            }
            return;
        }
        case Op::kSoftmaxRows:
        case Op::kMaskedSoftmaxRows: {
            if (Mat* ga = grad_into_a()) {
                const Mat& y = n.val;
                for (int i = 0; i < y.rows; ++i) {
                    double dotgy = kernels::dot(static_cast<size_t>(y.cols), g.row(i), y.row(i));
                    const double* gr = g.row(i);
                    const double* yr = y.row(i);
                    double* ar = ga->row(i);
                    for (int j = 0; j < y.cols; ++j) ar[j] += yr[j] * (gr[j] - dotgy);
                }
            }
            return;
        }
        case Op::kOuterSum: {
            if (Mat* ga = grad_into_a())
                for (int i = 0; i < g.rows; ++i)
                    ga->at(i, 0) += kernels::sum(static_cast<size_t>(g.cols), g.row(i));
            if (Mat* gb = grad_into_b())
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gb->at(j, 0) += g.at(i, j);
            return;
        }
        case Op::kDiag: {
            if (Mat* ga = grad_into_a())
                for (int i = 0; i < g.rows; ++i) ga->at(i, i) += g.at(i, 0);
            return;
        }
        case Op::kConcatRows: {
            int ra = n.i0;
            if (Mat* ga = grad_into_a())
                kernels::axpy(ga->size(), 1.0, g.d.data(), ga->d.data());
            if (Mat* gb = grad_into_b())
                kernels::axpy(gb->size(), 1.0, g.d.data() + static_cast<size_t>(ra) * g.cols, gb->d.data());
            return;
        }
        case Op::kConcatCols: {
            int ca = n.i0;
            if (Mat* ga = grad_into_a())
                for (int i = 0; i < g.rows; ++i)
                    kernels::axpy(static_cast<size_t>(ca), 1.0, g.row(i), ga->row(i));
            if (Mat* gb = grad_into_b())
                for (int i = 0; i < g.rows; ++i)
                    kernels::axpy(static_cast<size_t>(g.cols - ca), 1.0, g.row(i) + ca, gb->row(i));
            return;
        }
        case Op::kSliceRows: {
            if (Mat* ga = grad_into_a())
                kernels::axpy(g.size(), 1.0, g.d.data(), ga->row(n.i0));
            return;
        }
        case Op::kSliceCols: {
            if (Mat* ga = grad_into_a())
                for (int i = 0; i < g.rows; ++i)
                    kernels::axpy(static_cast<size_t>(g.cols), 1.0, g.row(i), ga->row(i) + n.i0);
            return;
        }
        case Op::kReshape: {
            if (Mat* ga = grad_into_a())
                kernels::axpy(g.size(), 1.0, g.d.data(), ga->d.data());
            return;
        }
        case Op::kIm2Col2D: {
            Mat* ga = grad_into_a();
            if (!ga) return;
            int C = n.i0, H = n.i1, W = n.i2, k = n.i3, stride = n.i4, pad = n.i5;
            int Ho = conv_out(H, k, stride, pad);
            int Wo = conv_out(W, k, stride, pad);
            for (int c = 0; c < C; ++c)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const double* grow = g.row((c * k + ky) * k + kx);
                        double* xc = ga->row(c);
                        int idx = 0;
                        for (int oy = 0; oy < Ho; ++oy) {
                            int iy = oy * stride - pad + ky;
                            for (int ox = 0; ox < Wo; ++ox, ++idx) {
                                int ix = ox * stride - pad + kx;
                                if (iy >= 0 && iy < H && ix >= 0 && ix < W) xc[iy * W + ix] += grow[idx];
                            }
                        }
                    }
            return;
        }
        case Op::kIm2Col3D: {
            Mat* ga = grad_into_a();
            if (!ga) return;
            int C = n.i0, D = n.i1, H = n.i2, W = n.i3, k = n.i4, stride = n.i5;
            int pad = static_cast<int>(n.c0);
            int Do = conv_out(D, k, stride, pad);
            int Ho = conv_out(H, k, stride, pad);
            int Wo = conv_out(W, k, stride, pad);
            for (int c = 0; c < C; ++c)
                for (int kz = 0; kz < k; ++kz)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const double* grow = g.row(((c * k + kz) * k + ky) * k + kx);
                            double* xc = ga->row(c);
                            int idx = 0;
                            for (int oz = 0; oz < Do; ++oz) {
                                int iz = oz * stride - pad + kz;
                                for (int oy = 0; oy < Ho; ++oy) {
                                    int iy = oy * stride - pad + ky;
                                    for (int ox = 0; ox < Wo; ++ox, ++idx) {
                                        int ix = ox * stride - pad + kx;
                                        if (iz >= 0 && iz < D && iy >= 0 && iy < H && ix >= 0 && ix < W)
                                            xc[(iz * H + iy) * W + ix] += grow[idx];
                                    }
                                }
                            }
                        }
            return;
        }
        case Op::kUpsample2D: {
            Mat* ga = grad_into_a();
            if (!ga) return;
            int C = n.i0, H = n.i1, W = n.i2, f = n.i3;
            int Wo = W * f;
            for (int c = 0; c < C; ++c) {
                const double* gc = g.row(c);
                double* xc = ga->row(c);
                for (int y = 0; y < H * f; ++y)
                    for (int x = 0; x < Wo; ++x) xc[(y / f) * W + (x / f)] += gc[y * Wo + x];
            }
            return;
        }
    }
}

}  // namespace cdiff::ad
