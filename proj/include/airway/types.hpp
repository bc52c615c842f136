#pragma once

#include <Eigen/Dense>

namespace airway {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;
using MatrixXi = Eigen::MatrixXi;
using Vec3 = Eigen::Vector3d;

/// N x N integer matrix of shortest-path hop counts on the undirected tree.
struct SpdMatrix {
  MatrixXi values;
};

/// N x N binary matrix; values(i,j) = 1 iff node j is a strict descendant of node i.
struct DescendantMask {
  MatrixXi values;
};

}  // namespace airway
