#pragma once

#include "neureg/autodiff.hpp"
#include "neureg/volume.hpp"

namespace neureg {

/// Backward warping: out(i,j,k) = moving(i+dx, j+dy, k+dz), trilinear, with
/// coordinates clamped to the grid (border replication).
Volume3 warp_trilinear(const Volume3& moving, const DeformationField& field);

/// Nearest-neighbour resampling of labels; an exact .5 tie goes to the lower index.
LabelVolume warp_labels(const LabelVolume& labels, const DeformationField& field);

struct JacobianStats {
    double min_det = 0.0;
    double nonpositive_fraction = 0.0;
};

/// Determinant of the Jacobian of x -> x + u(x), central differences inside and
/// one-sided differences on the faces.
JacobianStats jacobian_stats(const DeformationField& field);

namespace ad_ops {

/// Tape op: moving [D, H, W], field [3, D, H, W] -> warped [D, H, W].
/// Differentiable in both the intensities and the displacements.
ad::Tensor warp(const ad::Tensor& moving, const ad::Tensor& field);

}  // namespace ad_ops

}  // namespace neureg
