#include "fsdiff/nn/tape.hpp"

#include <algorithm>
#include <cmath>

#include "fsdiff/common.hpp"

namespace fsdiff::nn {

int ParamSet::add(std::string name, Mat value) {
  if (find(name) >= 0) throw ValidationError("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return size() - 1;
}

int ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return -1;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Mat& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

std::vector<Mat> ParamSet::zeros_like() const {
  std::vector<Mat> out;
  out.reserve(values_.size());
  for (const Mat& m : values_) out.push_back(Mat::Zero(m.rows(), m.cols()));
  return out;
}

Var Tape::push(Mat value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_ref(int id) {
  Node& n = node(id);
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::constant(Mat value) { return push(std::move(value), false); }

Var Tape::param(int index) {
  if (!params_ || index < 0 || index >= params_->size()) throw ValidationError("tape: bad parameter index");
  Var v = push(params_->value(index), true);
  node(v.id).param = index;
  return v;
}

Var Tape::linear(Var x, Var w, Var b) {
  const Mat& xv = value(x);
  const Mat& wv = value(w);
  if (xv.cols() != wv.rows() || value(b).rows() != 1 || value(b).cols() != wv.cols()) {
    throw ValidationError("linear: shape mismatch");
  }
  Mat out = xv * wv;
  out.rowwise() += value(b).row(0);
  Var y = push(std::move(out), needs(x) || needs(w) || needs(b));
  node(y.id).backward = [this, x, w, b, y] {
    const Mat& g = node(y.id).grad;
    if (needs(x)) grad_ref(x.id).noalias() += g * value(w).transpose();
    if (needs(w)) grad_ref(w.id).noalias() += value(x).transpose() * g;
    if (needs(b)) grad_ref(b.id) += g.colwise().sum();
  };
  return y;
}

Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
    throw ValidationError("add: shape mismatch");
  }
  Var y = push(value(a) + value(b), needs(a) || needs(b));
  node(y.id).backward = [this, a, b, y] {
    const Mat& g = node(y.id).grad;
    if (needs(a)) grad_ref(a.id) += g;
    if (needs(b)) grad_ref(b.id) += g;
  };
  return y;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Mat& xv = value(x);
  const Eigen::Index n = xv.rows(), d = xv.cols();
  Mat xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = xv.row(i).mean();
    const double var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Mat out = (xhat.array().rowwise() * value(gamma).row(0).array()).rowwise() + value(beta).row(0).array();
  Var y = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
  node(y.id).backward = [this, x, gamma, beta, y, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
    const Mat& g = node(y.id).grad;
    if (needs(gamma)) grad_ref(gamma.id) += (g.array() * xhat.array()).colwise().sum().matrix();
    if (needs(beta)) grad_ref(beta.id) += g.colwise().sum();
    if (needs(x)) {
      const Mat gx = (g.array().rowwise() * value(gamma).row(0).array()).matrix();
      Mat& dx = grad_ref(x.id);
      const double d_cols = static_cast<double>(gx.cols());
      for (Eigen::Index i = 0; i < gx.rows(); ++i) {
        const double m1 = gx.row(i).sum() / d_cols;
        const double m2 = gx.row(i).dot(xhat.row(i)) / d_cols;
        dx.row(i).array() += inv_std(i) * (gx.row(i).array() - m1 - xhat.row(i).array() * m2);
      }
    }
  };
  return y;
}

double gelu_value(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

Var Tape::gelu(Var x) {
  Var y = push(value(x).unaryExpr([](double v) { return gelu_value(v); }), needs(x));
  node(y.id).backward = [this, x, y] {
    constexpr double k = 0.7978845608028654;
    const Mat& g = node(y.id).grad;
    const Mat& xv = value(x);
    Mat& dx = grad_ref(x.id);
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double u = k * (v + 0.044715 * v * v * v);
      const double th = std::tanh(u);
      const double du = k * (1.0 + 3.0 * 0.044715 * v * v);
      dx.data()[i] += g.data()[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  };
  return y;
}

Var Tape::silu(Var x) {
  Var y = push(value(x).unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); }), needs(x));
  node(y.id).backward = [this, x, y] {
    const Mat& g = node(y.id).grad;
    const Mat& xv = value(x);
    Mat& dx = grad_ref(x.id);
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double s = 1.0 / (1.0 + std::exp(-v));
      dx.data()[i] += g.data()[i] * (s * (1.0 + v * (1.0 - s)));
    }
  };
  return y;
}

Var Tape::concat_cols(Var a, Var b) {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.rows() != bv.rows()) throw ValidationError("concat_cols: row mismatch");
  Mat out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  Var y = push(std::move(out), needs(a) || needs(b));
  node(y.id).backward = [this, a, b, y] {
    const Mat& g = node(y.id).grad;
    const Eigen::Index ca = value(a).cols();
    if (needs(a)) grad_ref(a.id) += g.leftCols(ca);
    if (needs(b)) grad_ref(b.id) += g.rightCols(g.cols() - ca);
  };
  return y;
}

Var Tape::stack_rows(std::span<const Var> parts, std::span<const RowRef> rows) {
  if (parts.empty()) throw ValidationError("stack_rows: no inputs");
  const Eigen::Index cols = value(parts[0]).cols();
  bool req = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw ValidationError("stack_rows: column mismatch");
    req = req || needs(p);
  }
  Mat out(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const RowRef ref = rows[r];
    if (ref.part < 0 || ref.part >= static_cast<int>(parts.size()) || ref.row < 0 ||
        ref.row >= value(parts[static_cast<std::size_t>(ref.part)]).rows()) {
      throw ValidationError("stack_rows: row reference out of range");
    }
    out.row(static_cast<Eigen::Index>(r)) = value(parts[static_cast<std::size_t>(ref.part)]).row(ref.row);
  }
  Var y = push(std::move(out), req);
  node(y.id).backward = [this, y, parts = std::vector<Var>(parts.begin(), parts.end()),
                         rows = std::vector<RowRef>(rows.begin(), rows.end())] {
    const Mat& g = node(y.id).grad;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Var p = parts[static_cast<std::size_t>(rows[r].part)];
      if (!needs(p)) continue;
      grad_ref(p.id).row(rows[r].row) += g.row(static_cast<Eigen::Index>(r));
    }
  };
  return y;
}

Var Tape::attention(Var qkv, std::span<const int> offsets, int heads) {
  const Mat& in = value(qkv);
  if (in.cols() % 3 != 0) throw ValidationError("attention: qkv width must be 3*D");
  const Eigen::Index d = in.cols() / 3;
  if (heads < 1 || d % heads != 0) throw ValidationError("attention: D not divisible by heads");
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != in.rows()) {
    throw ValidationError("attention: bad group offsets");
  }
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat out(in.rows(), d);
  std::vector<Mat> probs;
  probs.reserve((offsets.size() - 1) * static_cast<std::size_t>(heads));
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    const Eigen::Index r0 = offsets[g], n = offsets[g + 1] - offsets[g];
    for (int h = 0; h < heads; ++h) {
      const auto q = in.block(r0, h * dh, n, dh);
      const auto k = in.block(r0, d + h * dh, n, dh);
      const auto v = in.block(r0, 2 * d + h * dh, n, dh);
      Mat s = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      out.block(r0, h * dh, n, dh).noalias() = s * v;
      probs.push_back(std::move(s));
    }
  }
  last_attention_ = probs;
  Var y = push(std::move(out), needs(qkv));
  node(y.id).backward = [this, qkv, y, heads, d, dh, scale, probs = std::move(probs),
                         offsets = std::vector<int>(offsets.begin(), offsets.end())] {
    const Mat& g = node(y.id).grad;
    const Mat& in = value(qkv);
    Mat& dx = grad_ref(qkv.id);
    std::size_t idx = 0;
    for (std::size_t grp = 0; grp + 1 < offsets.size(); ++grp) {
      const Eigen::Index r0 = offsets[grp], n = offsets[grp + 1] - offsets[grp];
      for (int h = 0; h < heads; ++h, ++idx) {
        const Mat& p = probs[idx];
        const auto q = in.block(r0, h * dh, n, dh);
        const auto k = in.block(r0, d + h * dh, n, dh);
        const auto v = in.block(r0, 2 * d + h * dh, n, dh);
        const auto go = g.block(r0, h * dh, n, dh);
        dx.block(r0, 2 * d + h * dh, n, dh).noalias() += p.transpose() * go;
        Mat dp = go * v.transpose();
        const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
        Mat ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * scale;
        dx.block(r0, h * dh, n, dh).noalias() += ds * k;
        dx.block(r0, d + h * dh, n, dh).noalias() += ds.transpose() * q;
      }
    }
  };
  return y;
}

Var Tape::im2col(Var x, FeatureMapShape s) {
  const Mat& xv = value(x);
  if (xv.rows() != static_cast<Eigen::Index>(s.batch) * s.height * s.width || xv.cols() != s.channels) {
    throw ValidationError("im2col: shape mismatch");
  }
  if (s.height % 2 != 0 || s.width % 2 != 0) throw ValidationError("im2col: odd spatial size");
  const int ho = s.height / 2, wo = s.width / 2, c = s.channels;
  Mat out = Mat::Zero(static_cast<Eigen::Index>(s.batch) * ho * wo, 9 * c);
  for (int b = 0; b < s.batch; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index orow = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = 2 * oy + ky - 1;
          if (iy < 0 || iy >= s.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = 2 * ox + kx - 1;
            if (ix < 0 || ix >= s.width) continue;
            const Eigen::Index irow = (static_cast<Eigen::Index>(b) * s.height + iy) * s.width + ix;
            out.block(orow, (ky * 3 + kx) * c, 1, c) = xv.row(irow);
          }
        }
      }
    }
  }
  Var y = push(std::move(out), needs(x));
  node(y.id).backward = [this, x, y, s] {
    const Mat& g = node(y.id).grad;
    Mat& dx = grad_ref(x.id);
    const int ho = s.height / 2, wo = s.width / 2, c = s.channels;
    for (int b = 0; b < s.batch; ++b) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const Eigen::Index orow = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy + ky - 1;
            if (iy < 0 || iy >= s.height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox + kx - 1;
              if (ix < 0 || ix >= s.width) continue;
              const Eigen::Index irow = (static_cast<Eigen::Index>(b) * s.height + iy) * s.width + ix;
              dx.row(irow) += g.block(orow, (ky * 3 + kx) * c, 1, c);
            }
          }
        }
      }
    }
  };
  return y;
}

namespace {

struct Tap {
  Eigen::Index rows[4];
  double weights[4];
};

Tap bilinear_tap(double px, double py, const FeatureMapShape& s, int map) {
  const auto axis = [](double p, int size, int& i0, int& i1, double& w) {
    double g = ((p + 1.0) * size - 1.0) * 0.5;
    if (!std::isfinite(g)) g = 0.0;
    g = std::clamp(g, 0.0, static_cast<double>(size - 1));
    i0 = static_cast<int>(std::floor(g));
    i1 = std::min(i0 + 1, size - 1);
    w = g - i0;
  };
  int x0, x1, y0, y1;
  double wx, wy;
  axis(px, s.width, x0, x1, wx);
  axis(py, s.height, y0, y1, wy);
  const Eigen::Index base = static_cast<Eigen::Index>(map) * s.height * s.width;
  return Tap{{base + static_cast<Eigen::Index>(y0) * s.width + x0, base + static_cast<Eigen::Index>(y0) * s.width + x1,
              base + static_cast<Eigen::Index>(y1) * s.width + x0, base + static_cast<Eigen::Index>(y1) * s.width + x1},
             {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy}};
}

}  // namespace

Var Tape::bilinear_sample(Var features, FeatureMapShape s, const Mat& points, std::span<const int> map_of_row) {
  const Mat& f = value(features);
  if (f.rows() != static_cast<Eigen::Index>(s.batch) * s.height * s.width || f.cols() != s.channels) {
    throw ValidationError("bilinear_sample: feature shape mismatch");
  }
  if (points.cols() != 2 || static_cast<std::size_t>(points.rows()) != map_of_row.size()) {
    throw ValidationError("bilinear_sample: points shape mismatch");
  }
  std::vector<Tap> taps;
  taps.reserve(map_of_row.size());
  Mat out(points.rows(), s.channels);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int map = map_of_row[static_cast<std::size_t>(i)];
    if (map < 0 || map >= s.batch) throw ValidationError("bilinear_sample: map index out of range");
    const Tap tap = bilinear_tap(points(i, 0), points(i, 1), s, map);
    out.row(i) = tap.weights[0] * f.row(tap.rows[0]) + tap.weights[1] * f.row(tap.rows[1]) +
                 tap.weights[2] * f.row(tap.rows[2]) + tap.weights[3] * f.row(tap.rows[3]);
    taps.push_back(tap);
  }
  Var y = push(std::move(out), needs(features));
  node(y.id).backward = [this, features, y, taps = std::move(taps)] {
    const Mat& g = node(y.id).grad;
    Mat& df = grad_ref(features.id);
    for (std::size_t i = 0; i < taps.size(); ++i) {
      for (int k = 0; k < 4; ++k) df.row(taps[i].rows[k]) += taps[i].weights[k] * g.row(static_cast<Eigen::Index>(i));
    }
  };
  return y;
}

Var Tape::mse(Var pred, const Mat& target) {
  const Mat& p = value(pred);
  if (p.rows() != target.rows() || p.cols() != target.cols()) throw ValidationError("mse: shape mismatch");
  Mat diff = p - target;
  Mat out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<double>(diff.size());
  Var y = push(std::move(out), needs(pred));
  node(y.id).backward = [this, pred, y, diff = std::move(diff)] {
    const double g = node(y.id).grad(0, 0);
    grad_ref(pred.id) += diff * (2.0 * g / static_cast<double>(diff.size()));
  };
  return y;
}

void Tape::backward(Var loss, std::vector<Mat>& param_grads) {
  if (value(loss).size() != 1) throw ValidationError("backward: loss must be a scalar");
  if (params_ && param_grads.size() != static_cast<std::size_t>(params_->size())) {
    throw ValidationError("backward: gradient list does not match the parameter set");
  }
  grad_ref(loss.id)(0, 0) += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = node(id);
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward();
    if (n.param >= 0) param_grads[static_cast<std::size_t>(n.param)] += n.grad;
  }
}

}  // namespace fsdiff::nn
