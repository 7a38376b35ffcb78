#pragma once

#include <functional>
#include <vector>

#include "deepvlf/tensor.hpp"

namespace deepvlf::ad {

// Handle into a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape over Mat values, double precision.
//
// Ops append nodes; backward() runs the recorded closures in reverse,
// accumulating gradients into every node (parameter leaves included).
// With recording=false ops compute values only, for inference paths.
class Tape {
  public:
    struct Node {
        Mat val;
        Mat grad;
        std::function<void(Tape&, int)> back;
    };

    bool recording = true;

    std::vector<Node> nodes;

    Var push(Mat val, std::function<void(Tape&, int)> back = nullptr) {
        Node n;
        n.val = std::move(val);
        if (recording) n.back = std::move(back);
        nodes.push_back(std::move(n));
        return {static_cast<int>(nodes.size()) - 1};
    }

    const Mat& val(Var v) const { return nodes[v.id].val; }
    Mat& grad(Var v) { return nodes[v.id].grad; }

    void backward(Var loss);
};

Var constant(Tape& t, Mat m);
Var zeros(Tape& t, int rows, int cols);

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var add_rowvec(Tape& t, Var a, Var bias);            // bias: 1 x C
Var mul_const(Tape& t, Var a, const Mat& c);         // elementwise, c fixed
Var mul_colbcast(Tape& t, Var a, const Mat& col);    // row i scaled by col(i,0)
Var relu(Tape& t, Var a);
Var gelu(Tape& t, Var a);
Var row_softmax(Tape& t, Var a);
Var logclamp(Tape& t, Var a, double eps);
Var concat_cols(Tape& t, const std::vector<Var>& parts);

// Per-block products over B stacked blocks of `block` rows.
Var bmm_nt(Tape& t, Var a, Var b, int block);  // per block: A * B^T
Var bmm_nn(Tape& t, Var a, Var b, int block);  // per block: A * B

// Scalar (1x1) node helpers.
Var ssum(Tape& t, Var a);
Var sadd(Tape& t, Var a, Var b);
Var sscale(Tape& t, Var a, double c);
Var sadd_const(Tape& t, Var a, double c);
Var ssqrt(Tape& t, Var a);
Var sub_sbcast(Tape& t, Var a, Var s);  // a - s, s scalar node
Var div_sbcast(Tape& t, Var a, Var s);  // a / s, s scalar node

}  // namespace deepvlf::ad
