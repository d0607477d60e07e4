/* Copyright 2026 The voxelstruct Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <cstddef>
#include <functional>

#include "voxelstruct/autodiff.hpp"
#include "voxelstruct/tensor.hpp"

namespace voxelstruct {

// Elementwise and reductions.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var add_scalar(Var x, double c);
Var sum(Var x);
Var mean(Var x);
Var reshape(Var x, Shape shape);

/// y = x·w + b for x[B,I], w[I,O], b[O].
Var dense(Var x, Var w, Var b);

/// Output extent of a strided convolution along one axis; throws ConfigError
/// when (extent + 2·pad − kernel) is negative or not divisible by stride.
std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Cross-correlation of x[B,C,D,H,W] with cubic kernels k[F,C,k,k,k].
Var conv3d(Var x, Var k, std::size_t stride, std::size_t pad);

/// The adjoint of conv3d(·, k, stride, pad): maps [B,F,D',H',W'] back to
/// [B,C,D,H,W] with D = (D'−1)·stride − 2·pad + k.
Var conv_transpose3d(Var y, Var k, std::size_t stride, std::size_t pad);

/// Adds b[C] to every spatial position of channel c of x[B,C,...].
Var add_channel_bias(Var x, Var b);

enum class Activation { relu, sigmoid };
Var activation(Var x, Activation kind);
inline Var relu(Var x) { return activation(x, Activation::relu); }
inline Var sigmoid(Var x) { return activation(x, Activation::sigmoid); }

/// Non-overlapping max pooling over the three trailing axes. Ties go to the
/// lowest linear index inside the window, and only that element gets gradient.
Var maxpool3d(Var x, std::size_t window);

/// z = mu + exp(0.5·logvar)·noise; noise is recorded as a constant.
Var reparameterize(Var mu, Var logvar, const Tensor& noise);

/// Multiplies by a constant mask (already scaled by 1/keep_prob by the caller).
Var apply_mask(Var x, const Tensor& mask);

/// Batch normalization over (batch, spatial) per channel for x[B,C,...] using
/// batch statistics. The computed statistics are written to `batch_mean` and
/// `batch_var` so callers can keep running averages.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, Tensor* batch_mean, Tensor* batch_var);
/// Inference-mode batch normalization with fixed statistics.
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var, double eps);

/// Max over coordinates of |analytic − central difference| / max(1, |analytic|)
/// for the scalar function f built on a fresh tape around input x.
double gradient_check(const std::function<Var(Var)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace voxelstruct
