#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace deepvlf {

// Dense row-major double matrix. The one numeric container used throughout;
// vectors are 1-column or 1-row matrices.
struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}
    Mat(int r, int c, double fill) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
    double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }
    size_t size() const { return a.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// C (+)= A * B
void gemm_nn(const Mat& A, const Mat& B, Mat& C, bool accumulate);
// C (+)= A * B^T
void gemm_nt(const Mat& A, const Mat& B, Mat& C, bool accumulate);
// C (+)= A^T * B
void gemm_tn(const Mat& A, const Mat& B, Mat& C, bool accumulate);

}  // namespace deepvlf
