#pragma once

#include "reg/volume.hpp"

namespace reg {

// Samples `moving` at v + d(v) with trilinear interpolation; source corner
// indices are clamped per axis (border replication).
Volume warp_trilinear(const Volume& moving, const DisplacementField& field);

// Nearest-neighbor variant for label maps; rounds half away from zero and
// never interpolates codes.
Volume warp_nearest(const Volume& labels, const DisplacementField& field);

// Non-overlapping 2x2x2 block averaging; every dim must be even.
Volume downsample_half(const Volume& vol);

// Differentiable warp on batched tensors.
//   moving [B,C,D,H,W], field [B,3,D,H,W] ordered (dz,dy,dx)
// Gradients flow to both the field (analytic trilinear-weight derivative)
// and the moving intensities.
Tensor warp3d(const Tensor& moving, const Tensor& field);

// Trilinear upsampling by an integer factor with half-voxel-center sampling;
// interpolated values are multiplied by value_scale (displacements measured
// in voxels of a grid r times finer scale by r).
Tensor upsample_trilinear(const Tensor& input, int factor, float value_scale = 1.0f);

// Per-item 2x2x2 block averaging on a batched leaf tensor (pyramid levels
// for images; not differentiable).
Tensor downsample_half_batch(const Tensor& input);

// General trilinear resize between arbitrary grids (volume utility).
Volume resize_trilinear(const Volume& vol, Dims out_dims);

}  // namespace reg
