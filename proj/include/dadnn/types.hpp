#pragma once

#include <Eigen/Dense>

namespace dadnn {

template <class T, int Rows = Eigen::Dynamic, int Cols = Eigen::Dynamic>
using Matrix = Eigen::Matrix<T, Rows, Cols>;

template <class T, int Rows = Eigen::Dynamic>
using Vector = Eigen::Matrix<T, Rows, 1>;

using Vec = Vector<double>;
using Mat = Matrix<double>;
using IVec = Eigen::VectorXi;

}  // namespace dadnn
