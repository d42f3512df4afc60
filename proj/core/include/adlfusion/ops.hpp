#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adlfusion/rng.hpp"
#include "adlfusion/tensor.hpp"

// Numeric primitives used by the model.  Each forward op has a matching
// explicit backward that *accumulates* into the passed gradient buffers;
// model code composes them by hand in reverse order, so no tape is needed.
namespace adlfusion::ops {

// Raw row-major kernels.  c is overwritten unless `accumulate`.
void mm_nn(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate = false); // c = a[m,k] b[k,n]
void mm_nt(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate = false); // c = a[m,k] b[n,k]^T
void mm_tn(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate = false); // c = a[k,m]^T b[k,n]

DenseTensor matmul(const DenseTensor& a, const DenseTensor& b);
// da += dc b^T, db += a^T dc.  Either output may be null.
void matmul_backward(const DenseTensor& a, const DenseTensor& b, const DenseTensor& dc,
                     DenseTensor* da, DenseTensor* db);

// Numerically stable softmax over a rank-1 tensor (max subtraction).
DenseTensor softmax(const DenseTensor& x);
void softmax_row(const double* x, double* y, std::size_t n);
// dx = y * (dy - <y, dy>), accumulated into dx.
void softmax_backward_row(const double* y, const double* dy, double* dx, std::size_t n);
DenseTensor softmax_backward(const DenseTensor& y, const DenseTensor& dy);

enum class Activation { identity, relu };

// Fully connected layer over the trailing axis of x.
struct DenseLayer {
    Parameter w; // [d_in, d_out]
    Parameter b; // [d_out]
    Activation act = Activation::identity;

    DenseLayer() = default;
    DenseLayer(std::string name, std::size_t d_in, std::size_t d_out, Activation act);

    std::size_t d_in() const { return w.value.dim(0); }
    std::size_t d_out() const { return w.value.dim(1); }
    void init(Rng& rng); // Glorot uniform weights, zero bias
};

// y = act(x w + b); x has shape [..., d_in], y has shape [..., d_out].
DenseTensor dense_apply(const DenseTensor& x, const DenseLayer& layer);
// Accumulates into layer.w.grad / layer.b.grad, and into *dx when non-null.
// `y` must be the forward output for this x (the ReLU derivative is read
// from it).
void dense_backward(const DenseTensor& x, const DenseTensor& y, const DenseTensor& dy,
                    DenseLayer& layer, DenseTensor* dx);

// Temporal 1x1 convolution collapsing the trailing time axis:
// out[j, c, 0] = sum_t x[j, c, t] w[t, 0].
DenseTensor conv1x1_temporal(const DenseTensor& x, const Parameter& w);
void conv1x1_temporal_backward(const DenseTensor& x, const DenseTensor& dout,
                               Parameter& w, DenseTensor* dx);

// Bias-corrected Adam over an explicit parameter list; zeroes gradients
// after applying the update.
void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg);

// Inverted dropout: kept units are scaled by 1/(1-rate) so evaluation needs
// no rescaling.  rate == 0 produces an all-ones mask.
struct DropoutMask {
    std::vector<double> scale;
};
DropoutMask sample_dropout_mask(Rng& rng, std::size_t n, double rate);
void dropout_apply(DenseTensor& x, const DropoutMask& mask);
void dropout_backward(DenseTensor& grad, const DropoutMask& mask);

// Glorot uniform initialization in-place: U(-L, L) with
// L = sqrt(6 / (fan_in + fan_out)).
void glorot_init(DenseTensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Central-difference gradient verification.  Call after populating every
// parameter's grad analytically; `loss` must re-evaluate the model at the
// current parameter values.  Relative error uses
// |a - n| / max(|a|, |n|, 1e-6) so tiny gradients are judged on absolute
// terms.  A non-finite loss aborts with NumericError.
struct GradCheckEntry {
    std::string param;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;

    bool pass(double tol) const { return max_rel_err < tol; }
    std::string summary() const;
};

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<Parameter* const> params, double h);

double grad_rel_err(double analytic, double numeric);

} // namespace adlfusion::ops
