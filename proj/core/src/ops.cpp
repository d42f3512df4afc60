#include "adlfusion/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "adlfusion/errors.hpp"

namespace adlfusion::ops {

void mm_nn(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        if (!accumulate) std::fill(ci, ci + n, 0.0);
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void mm_nt(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            if (accumulate)
                ci[j] += acc;
            else
                ci[j] = acc;
        }
    }
}

void mm_tn(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate)
        std::fill(c, c + m * n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            double av = ap[i];
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

DenseTensor matmul(const DenseTensor& a, const DenseTensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul expects rank-2 tensors, got " + shape_string(a.shape()) +
                             " and " + shape_string(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner dimensions disagree: " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    DenseTensor c({a.dim(0), b.dim(1)});
    mm_nn(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
    return c;
}

void matmul_backward(const DenseTensor& a, const DenseTensor& b, const DenseTensor& dc,
                     DenseTensor* da, DenseTensor* db) {
    std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (dc.rank() != 2 || dc.dim(0) != m || dc.dim(1) != n)
        throw DimensionError("matmul_backward: upstream gradient shape " +
                             shape_string(dc.shape()) + " does not match product shape [" +
                             std::to_string(m) + ", " + std::to_string(n) + "]");
    if (da) {
        if (!da->same_shape(a)) throw DimensionError("matmul_backward: da shape mismatch");
        mm_nt(dc.data(), b.data(), da->data(), m, n, k, /*accumulate=*/true);
    }
    if (db) {
        if (!db->same_shape(b)) throw DimensionError("matmul_backward: db shape mismatch");
        mm_tn(a.data(), dc.data(), db->data(), k, m, n, /*accumulate=*/true);
    }
}

void softmax_row(const double* x, double* y, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        sum += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= sum;
}

DenseTensor softmax(const DenseTensor& x) {
    if (x.rank() != 1)
        throw DimensionError("softmax expects a rank-1 tensor, got " + shape_string(x.shape()));
    if (x.size() == 0) throw DimensionError("softmax: empty input");
    if (!x.all_finite()) throw NumericError("softmax: non-finite input");
    DenseTensor y(x.shape());
    softmax_row(x.data(), y.data(), x.size());
    return y;
}

void softmax_backward_row(const double* y, const double* dy, double* dx, std::size_t n) {
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += y[i] * dy[i];
    for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] * (dy[i] - dot);
}

DenseTensor softmax_backward(const DenseTensor& y, const DenseTensor& dy) {
    if (!y.same_shape(dy))
        throw DimensionError("softmax_backward: value shape " + shape_string(y.shape()) +
                             " vs gradient shape " + shape_string(dy.shape()));
    DenseTensor dx(y.shape());
    softmax_backward_row(y.data(), dy.data(), dx.data(), y.size());
    return dx;
}

DenseLayer::DenseLayer(std::string name, std::size_t d_in, std::size_t d_out, Activation act_)
    : w(name + ".w", {d_in, d_out}), b(name + ".b", {d_out}), act(act_) {}

void DenseLayer::init(Rng& rng) {
    glorot_init(w.value, d_in(), d_out(), rng);
    b.value.fill(0.0);
}

namespace {

std::size_t leading_rows(const DenseTensor& x, std::size_t trailing,
                         const char* op) {
    if (x.rank() == 0 || x.shape().back() != trailing)
        throw DimensionError(std::string(op) + ": trailing axis of " + shape_string(x.shape()) +
                             " must be " + std::to_string(trailing));
    return x.size() / trailing;
}

std::vector<std::size_t> with_trailing(const DenseTensor& x, std::size_t d) {
    auto shape = x.shape();
    shape.back() = d;
    return shape;
}

} // namespace

DenseTensor dense_apply(const DenseTensor& x, const DenseLayer& layer) {
    std::size_t rows = leading_rows(x, layer.d_in(), "dense_apply");
    DenseTensor y(with_trailing(x, layer.d_out()));
    std::size_t dout = layer.d_out();
    mm_nn(x.data(), layer.w.value.data(), y.data(), rows, layer.d_in(), dout);
    const double* bias = layer.b.value.data();
    double* yd = y.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < dout; ++j) yd[r * dout + j] += bias[j];
    if (layer.act == Activation::relu)
        for (std::size_t i = 0; i < y.size(); ++i) yd[i] = std::max(0.0, yd[i]);
    return y;
}

void dense_backward(const DenseTensor& x, const DenseTensor& y, const DenseTensor& dy,
                    DenseLayer& layer, DenseTensor* dx) {
    std::size_t rows = leading_rows(x, layer.d_in(), "dense_backward");
    if (!y.same_shape(dy))
        throw DimensionError("dense_backward: output shape " + shape_string(y.shape()) +
                             " vs gradient shape " + shape_string(dy.shape()));
    std::size_t dout = layer.d_out();
    // dz = dy masked by the activation derivative.  For ReLU the output is
    // zero exactly where the pre-activation was clamped, so y > 0 recovers
    // the mask without caching pre-activations.
    DenseTensor dz(dy.shape());
    if (layer.act == Activation::relu) {
        for (std::size_t i = 0; i < dy.size(); ++i) dz[i] = y[i] > 0.0 ? dy[i] : 0.0;
    } else {
        dz = dy;
    }
    mm_tn(x.data(), dz.data(), layer.w.grad.data(), layer.d_in(), rows, dout, true);
    double* bg = layer.b.grad.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < dout; ++j) bg[j] += dz[r * dout + j];
    if (dx) {
        if (!dx->same_shape(x)) throw DimensionError("dense_backward: dx shape mismatch");
        mm_nt(dz.data(), layer.w.value.data(), dx->data(), rows, dout, layer.d_in(), true);
    }
}

DenseTensor conv1x1_temporal(const DenseTensor& x, const Parameter& w) {
    if (x.rank() != 3)
        throw DimensionError("conv1x1_temporal expects [J, 3, T] input, got " +
                             shape_string(x.shape()));
    std::size_t t = x.dim(2);
    if (w.value.rank() != 2 || w.value.dim(0) != t || w.value.dim(1) != 1)
        throw DimensionError("conv1x1_temporal: weight shape " + shape_string(w.value.shape()) +
                             " does not match time axis " + std::to_string(t));
    DenseTensor out({x.dim(0), x.dim(1), 1});
    const double* wd = w.value.data();
    std::size_t cells = x.dim(0) * x.dim(1);
    for (std::size_t jc = 0; jc < cells; ++jc) {
        const double* row = x.data() + jc * t;
        double acc = 0.0;
        for (std::size_t s = 0; s < t; ++s) acc += row[s] * wd[s];
        out[jc] = acc;
    }
    return out;
}

void conv1x1_temporal_backward(const DenseTensor& x, const DenseTensor& dout,
                               Parameter& w, DenseTensor* dx) {
    std::size_t t = x.dim(2);
    std::size_t cells = x.dim(0) * x.dim(1);
    if (dout.size() != cells)
        throw DimensionError("conv1x1_temporal_backward: gradient shape " +
                             shape_string(dout.shape()) + " does not match input " +
                             shape_string(x.shape()));
    double* wg = w.grad.data();
    const double* wd = w.value.data();
    for (std::size_t jc = 0; jc < cells; ++jc) {
        const double* row = x.data() + jc * t;
        double g = dout[jc];
        for (std::size_t s = 0; s < t; ++s) wg[s] += row[s] * g;
        if (dx) {
            double* dr = dx->data() + jc * t;
            for (std::size_t s = 0; s < t; ++s) dr[s] += wd[s] * g;
        }
    }
}

void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg) {
    cfg.validate();
    for (Parameter* p : params) {
        p->step_count += 1;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step_count));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step_count));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            double g = p->grad[i];
            double m = cfg.beta1 * p->adam_m[i] + (1.0 - cfg.beta1) * g;
            double v = cfg.beta2 * p->adam_v[i] + (1.0 - cfg.beta2) * g * g;
            p->adam_m[i] = m;
            p->adam_v[i] = v;
            double update = cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
            p->value[i] -= update;
        }
        if (!p->value.all_finite())
            throw NumericError("adam_step: parameter " + p->name + " became non-finite");
        p->zero_grad();
    }
}

DropoutMask sample_dropout_mask(Rng& rng, std::size_t n, double rate) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    DropoutMask mask;
    mask.scale.assign(n, 1.0);
    if (rate == 0.0) return mask;
    double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < n; ++i)
        mask.scale[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    return mask;
}

void dropout_apply(DenseTensor& x, const DropoutMask& mask) {
    if (x.size() != mask.scale.size())
        throw DimensionError("dropout mask length " + std::to_string(mask.scale.size()) +
                             " does not match tensor " + shape_string(x.shape()));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask.scale[i];
}

void dropout_backward(DenseTensor& grad, const DropoutMask& mask) {
    dropout_apply(grad, mask);
}

void glorot_init(DenseTensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
}

double grad_rel_err(double analytic, double numeric) {
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<Parameter* const> params, double h) {
    if (!(h > 0.0)) throw ConfigError("finite_diff_check: step size must be positive");
    GradCheckReport report;
    for (Parameter* p : params) {
        GradCheckEntry entry;
        entry.param = p->name;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            double saved = p->value[i];
            p->value[i] = saved + h;
            double up = loss();
            p->value[i] = saved - h;
            double down = loss();
            p->value[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("finite_diff_check: non-finite loss while perturbing " +
                                   p->name + "[" + std::to_string(i) + "]");
            double numeric = (up - down) / (2.0 * h);
            double analytic = p->grad[i];
            double err = grad_rel_err(analytic, numeric);
            if (err >= entry.max_rel_err) {
                entry.max_rel_err = err;
                entry.worst_index = i;
                entry.analytic = analytic;
                entry.numeric = numeric;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    os << "max rel err " << max_rel_err;
    for (const auto& e : entries) {
        if (e.max_rel_err == max_rel_err) {
            os << " (" << e.param << "[" << e.worst_index << "]: analytic " << e.analytic
               << ", numeric " << e.numeric << ")";
            break;
        }
    }
    return os.str();
}

} // namespace adlfusion::ops
