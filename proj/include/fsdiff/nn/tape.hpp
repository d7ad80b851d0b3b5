#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fsdiff::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Named parameter tensors in a fixed order. The order is the checkpoint order.
class ParamSet {
 public:
  int add(std::string name, Mat value);
  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
  Mat& value(int i) { return values_[static_cast<std::size_t>(i)]; }
  const Mat& value(int i) const { return values_[static_cast<std::size_t>(i)]; }
  int find(const std::string& name) const;  // -1 when absent
  std::size_t scalar_count() const;
  std::vector<Mat> zeros_like() const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
};

struct Var {
  int id = -1;
};

/// One row of a stack_rows result: row `row` of input `part`.
struct RowRef {
  int part = 0;
  int row = 0;
};

struct FeatureMapShape {
  int batch = 1;
  int height = 1;
  int width = 1;
  int channels = 1;
};

/// Reverse-mode tape. Values are recorded eagerly; backward() replays the
/// recorded closures in reverse and accumulates parameter gradients.
class Tape {
 public:
  explicit Tape(const ParamSet* params = nullptr) : params_(params) {}

  Var constant(Mat value);
  Var param(int index);

  const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  const Mat& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  std::size_t node_count() const { return nodes_.size(); }

  /// x (n×in) · w (in×out) + b (1×out).
  Var linear(Var x, Var w, Var b);
  Var add(Var a, Var b);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var gelu(Var x);
  Var silu(Var x);
  Var concat_cols(Var a, Var b);
  Var stack_rows(std::span<const Var> parts, std::span<const RowRef> rows);

  /// Multi-head self-attention inside row groups. `qkv` holds [Q | K | V]
  /// column blocks; group g spans rows [offsets[g], offsets[g+1]).
  Var attention(Var qkv, std::span<const int> offsets, int heads);
  /// Softmax rows of the most recent attention call, group-major then head.
  const std::vector<Mat>& last_attention() const { return last_attention_; }

  /// 3×3 convolution patches, stride 2, zero padding 1. Input rows are
  /// pixels (b, y, x) in raster order, columns are channels.
  Var im2col(Var x, FeatureMapShape shape);

  /// Samples feature maps at normalized points (align-corners false, border
  /// clamp). Row i of `points` is read from map `map_of_row[i]`. Gradient
  /// flows to `features` only.
  Var bilinear_sample(Var features, FeatureMapShape shape, const Mat& points, std::span<const int> map_of_row);

  /// Mean of squared differences against a constant target, as a 1×1 value.
  Var mse(Var pred, const Mat& target);

  /// Seeds d(loss)/d(loss)=1 and accumulates into `param_grads` (sized like the ParamSet).
  void backward(Var loss, std::vector<Mat>& param_grads);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    int param = -1;
    std::function<void()> backward;
  };

  Var push(Mat value, bool requires_grad);
  Mat& grad_ref(int id);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  const ParamSet* params_;
  std::vector<Node> nodes_;
  std::vector<Mat> last_attention_;
};

double gelu_value(double x);

}  // namespace fsdiff::nn
