#pragma once

#include <Eigen/Dense>

#include "sonate/rng.hpp"

namespace sonate {

// Row-major double matrices: a row is one token / time step, columns are
// channels. All model math runs in double so gradient checks hold at 1e-4.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

inline Mat randn(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
    return m;
}

inline Vec randn_vec(Eigen::Index n, Rng& rng, double stddev = 1.0) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = stddev * rng.normal();
    return v;
}

// Random unit vector, uniform on the sphere.
inline Vec random_unit(Eigen::Index n, Rng& rng) {
    Vec v = randn_vec(n, rng);
    const double norm = v.norm();
    return norm > 0 ? Vec(v / norm) : random_unit(n, rng);
}

inline double rms(const Mat& m) {
    if (m.size() == 0) return 0.0;
    return std::sqrt(m.array().square().mean());
}

}  // namespace sonate
