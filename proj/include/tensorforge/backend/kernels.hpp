#pragma once

// Reference CPU kernels over 4-padded row-major float32 storage. Every kernel
// writes the logical elements of its outputs and zeroes their pad lanes.
// Shape arguments are trusted here; CpuBackend checks them against buffer
// capacities before calling in.

#include <cstdint>

#include "tensorforge/backend/types.hpp"

namespace tensorforge::backend::kernels {

// c = op(a) * op(b) (+ bias per column). Logical shapes are given before
// transposition; op(a) is [m, k] and op(b) is [k, n].
void gemm(const float* a, MatShape a_shape, bool transpose_a, const float* b, MatShape b_shape,
          bool transpose_b, const float* bias, float* c);

// Dispatch rule for ConvAlgorithm::automatic.
ConvAlgorithm resolve_conv_algorithm(const ConvDescriptor& desc, const Nhwc& out_shape,
                                     std::int64_t small_feature_threshold);

void conv2d_forward(const float* x, const Nhwc& xs, const float* w, const ConvDescriptor& desc,
                    const float* bias, float* y, ConvAlgorithm algorithm);
void conv2d_backward_data(const float* dy, const Nhwc& dys, const float* w, const ConvDescriptor& desc,
                          float* dx, const Nhwc& dxs, ConvAlgorithm algorithm);
void conv2d_backward_filter(const float* x, const Nhwc& xs, const float* dy, const Nhwc& dys,
                            const ConvDescriptor& desc, float* dw, ConvAlgorithm algorithm);

// Batch normalization over [rows, channels]; gamma/beta may be null for the
// identity affine transform (gamma = 1, beta = 0).
void batchnorm_forward_train(const float* x, MatShape shape, const float* gamma, const float* beta,
                             float* running_mean, float* running_var, BatchNormHyper hyper, float* y,
                             float* saved_mean, float* saved_inv_std);
void batchnorm_forward_infer(const float* x, MatShape shape, const float* gamma, const float* beta,
                             const float* running_mean, const float* running_var, float eps, float* y);
// `x` is the forward input, or the normalized activations when
// `x_is_normalized` is set (in-place execution without affine parameters).
// dgamma / dbeta may be null.
void batchnorm_backward(const float* dy, const float* x, bool x_is_normalized, MatShape shape,
                        const float* gamma, const float* saved_mean, const float* saved_inv_std, float* dx,
                        float* dgamma, float* dbeta);

// argmax receives the flat logical input index n*H*W*C + h*W*C + w*C + c.
void maxpool2d_forward(const float* x, const Nhwc& xs, const PoolDescriptor& desc, float* y,
                       std::int64_t* argmax);
void maxpool2d_backward(const float* dy, const Nhwc& ys, const std::int64_t* argmax, float* dx,
                        const Nhwc& xs);

// `x` points at bytes for pix2float and at floats otherwise.
void elementwise_unary(UnaryOp op, const void* x, const float* aux, MatShape shape, float* y);
void elementwise_binary(BinaryCode code, const float* x1, const float* x2, MatShape shape, float* y);
// y += x
void accumulate(const float* x, MatShape shape, float* y);
void fill(float* y, MatShape shape, float value);

// out[c] = sum over rows of x[r, c]
void reduce_field_sum(const float* x, MatShape shape, float* out);

// Returns false when `validate_labels` is set and some row is not one-hot.
bool softmax_crossentropy(const float* logits, const float* onehot, MatShape shape, bool validate_labels,
                          float* loss, float* dlogits);

void adam_step(float* param, const float* grad, float* m, float* v, std::int64_t count, std::int64_t step,
               AdamHyper hyper);
void sgd_step(float* param, const float* grad, std::int64_t count, float lr);

void uniform_fill(float* y, MatShape shape, float low, float high, std::uint64_t seed);

}  // namespace tensorforge::backend::kernels
