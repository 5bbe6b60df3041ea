#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cdiff/mat.hpp"

namespace cdiff::ad {

// Reverse-mode autodiff tape over Mat. Ops are recorded eagerly (values are
// computed at build time); backward() walks the tape in reverse. Heavy inner
// loops (matmul, elementwise) run through the kernels backend.
//
// Binary ops broadcast their second operand when it is 1x1 (scalar), 1xC
// (row, with a RxC first operand) or Rx1 (column).
class Graph {
  public:
    // When false the tape still evaluates but records no gradient structure
    // and backward() is an error; used for inference/sampling.
    bool want_grad = true;

    int input(Mat v);
    // Leaf bound to an external parameter; its gradient is collected by
    // for_each_param_grad. The pointed-to Mat must outlive the graph pass.
    int param(const Mat* p);
    // Differentiable leaf that is not a model parameter (e.g. the latent in
    // classifier guidance). Query its gradient with grad(ref).
    int leaf(Mat v);

    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, double s);
    int add_const(int a, double c);
    int pow_const(int a, double p);
    int clamp_min(int a, double c);
    int log_(int a);
    int exp_(int a);
    int logistic(int a);
    int tanh_(int a);
    int relu(int a);
    int leaky_relu(int a, double slope);
    int elu(int a);
    int silu(int a);
    int gelu(int a);

    int matmul(int a, int b);     // A(m,k) * B(k,n)
    int matmul_nt(int a, int b);  // A(m,k) * B(n,k)^T
    int matmul_tn(int a, int b);  // A(k,m)^T * B(k,n)
    int transpose_(int a);

    int sum_all(int a);
    int mean_all(int a);
    int row_sums(int a);   // RxC -> Rx1
    int col_sums(int a);   // RxC -> 1xC
    int col_means(int a);  // RxC -> 1xC

    int softmax_rows(int a);
    // Row-wise softmax restricted to mask != 0 entries; masked-out outputs
    // are exactly zero. A row with an empty mask is a degenerate input.
    int masked_softmax_rows(int a, Mat mask);
    int outer_sum(int a, int b);  // a Rx1, b Sx1 -> RxS of a[i]+b[j]
    int diag(int a);              // BxB -> Bx1

    int concat_rows(int a, int b);
    int concat_cols(int a, int b);
    int slice_rows(int a, int r0, int r1);
    int slice_cols(int a, int c0, int c1);
    int reshape(int a, int r, int c);

    // Feature-map ops; a Mat holds channels x (spatial positions).
    int im2col2d(int a, int C, int H, int W, int k, int stride, int pad);
    int im2col3d(int a, int C, int D, int H, int W, int k, int stride, int pad);
    int upsample2d(int a, int C, int H, int W, int factor);

    const Mat& val(int ref) const { return nodes_[static_cast<size_t>(ref)].val; }
    const Mat& grad(int ref) const;

    void backward(int root);
    void clear();
    size_t node_count() const { return nodes_.size(); }

    // Invokes fn(param_ptr, grad) for every bound parameter that received
    // gradient, in binding order.
    void for_each_param_grad(const std::function<void(const Mat*, const Mat&)>& fn) const;

  private:
    enum class Op : uint8_t {
        kInput, kParam, kLeaf,
        kAdd, kSub, kMul,
        kScale, kAddConst, kPowConst, kClampMin,
        kLog, kExp, kLogistic, kTanh,
        kRelu, kLeakyRelu, kElu, kSilu, kGelu,
        kMatMul, kMatMulNT, kMatMulTN, kTranspose,
        kSumAll, kMeanAll, kRowSums, kColSums, kColMeans,
        kSoftmaxRows, kMaskedSoftmaxRows, kOuterSum, kDiag,
        kConcatRows, kConcatCols, kSliceRows, kSliceCols, kReshape,
        kIm2Col2D, kIm2Col3D, kUpsample2D,
    };

    // Broadcast mode of the second operand in binary ops.
    enum class Bcast : uint8_t { none, scalar, row, col };

    struct Node {
        Op op;
        int a = -1, b = -1;
        int i0 = 0, i1 = 0, i2 = 0, i3 = 0, i4 = 0, i5 = 0;
        double c0 = 0.0, c1 = 0.0;
        Bcast bcast = Bcast::none;
        bool needs_grad = false;
        Mat val;
        Mat aux;  // op-owned constant (softmax mask)
        Mat grad;
        const Mat* bound = nullptr;
    };

    std::vector<Node> nodes_;

    int push(Node n);
    int binary(Op op, int a, int b);
    int unary(Op op, int a, double c0 = 0.0, double c1 = 0.0);
    void ensure_grad(int ref);
    void backward_node(int ref);
    Node& at(int ref) { return nodes_[static_cast<size_t>(ref)]; }
    const Node& at(int ref) const { return nodes_[static_cast<size_t>(ref)]; }
};

}  // namespace cdiff::ad
