#include "deepvlf/tensor.hpp"

namespace deepvlf {

void gemm_nn(const Mat& A, const Mat& B, Mat& C, bool accumulate) {
    assert(A.cols == B.rows && C.rows == A.rows && C.cols == B.cols);
    if (!accumulate) C.zero();
    const int n = B.cols;
    for (int i = 0; i < A.rows; ++i) {
        const double* ai = A.row(i);
        double* ci = C.row(i);
        for (int k = 0; k < A.cols; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = B.row(k);
            for (int j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

void gemm_nt(const Mat& A, const Mat& B, Mat& C, bool accumulate) {
    assert(A.cols == B.cols && C.rows == A.rows && C.cols == B.rows);
    if (!accumulate) C.zero();
    const int k = A.cols;
    for (int i = 0; i < A.rows; ++i) {
        const double* ai = A.row(i);
        double* ci = C.row(i);
        for (int j = 0; j < B.rows; ++j) {
            const double* bj = B.row(j);
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += ai[t] * bj[t];
            ci[j] += s;
        }
    }
}

void gemm_tn(const Mat& A, const Mat& B, Mat& C, bool accumulate) {
    assert(A.rows == B.rows && C.rows == A.cols && C.cols == B.cols);
    if (!accumulate) C.zero();
    const int n = B.cols;
    for (int k = 0; k < A.rows; ++k) {
        const double* ak = A.row(k);
        const double* bk = B.row(k);
        for (int i = 0; i < A.cols; ++i) {
            const double aki = ak[i];
            if (aki == 0.0) continue;
            double* ci = C.row(i);
            for (int j = 0; j < n; ++j) ci[j] += aki * bk[j];
        }
    }
}

}  // namespace deepvlf
