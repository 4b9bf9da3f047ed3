#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

// Minimal reverse-mode differentiation over small dense matrices.
//
// Values are column-major Eigen matrices. Batched quantities put one item per
// column (a ray sample, a graph incidence, a camera). There is no implicit
// broadcasting: every op that mixes shapes says so in its name.
//
//   ad::Tape tape;
//   ad::Var x = tape.Leaf(Eigen::MatrixXd::Constant(1, 1, 3.0));
//   ad::Var y = x * x;
//   ad::Gradients g = tape.Backward(y);
//   g.Wrt(x);  // 6
namespace rmnerf::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Value of a 1x1 variable.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddConst,
  kScaleBy,
  kSin,
  kCos,
  kExp,
  kLog,
  kSqrt,
  kTanh,
  kSigmoid,
  kSoftplus,
  kMinConst,
  kMin,
  kSum,
  kMatMul,
  kTranspose,
  kAddColumn,
  kSliceRows,
  kConcatRows,
  kConcatCols,
  kGatherCols,
  kScatterAddCols,
  kRepeatCols,
  kNormalizeCols,
  kColumnNorm,
  kQuatMul,
  kQuatConj,
  kQuatToRotation,
  kSignCanonical,
  kIntegratedEncoding,
  kSinusoidalEncoding,
  kComposite,
};

const char* OpName(Op op);

// Per-node adjoints produced by Tape::Backward.
class Gradients {
 public:
  // Gradient with respect to v; a zero matrix when v does not influence the
  // output.
  Matrix Wrt(const Var& v) const;
  bool Touches(const Var& v) const;

 private:
  friend class Tape;
  std::vector<Matrix> adjoints_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes_;
};

// Append-only record of primitive evaluations. Nodes are stored in creation
// order, which is a topological order. A tape is single-threaded; separate
// tapes are independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input.
  Var Leaf(Matrix value);
  // Non-differentiable input; receives no gradient.
  Var Constant(Matrix value);
  Var Scalar(double v) { return Constant(Matrix::Constant(1, 1, v)); }

  const Matrix& Value(const Var& v) const { return nodes_[v.id()].value; }
  std::size_t size() const { return nodes_.size(); }
  Op op(int id) const { return nodes_[id].op; }

  // Reverse accumulation from a 1x1 output. Throws std::invalid_argument for
  // non-scalar outputs. Does not modify the tape, so repeated calls agree
  // bit for bit.
  Gradients Backward(const Var& output) const;

  // Internal: used by the primitive free functions below.
  struct Node {
    Op op = Op::kConstant;
    std::vector<int> inputs;
    Matrix value;
    Matrix aux;               // cached locals or op constants
    std::vector<int> index;   // gather/scatter indices
    double param = 0.0;       // scalar op constant
    int count = 0;            // repeat count, slice offset, samples per ray
    int octaves = 0;          // encoding octave count
  };
  Var Record(Node node);
  const Node& node(int id) const { return nodes_[id]; }

 private:
  std::vector<Node> nodes_;
};

// Elementwise arithmetic on equal shapes.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator*(double c, const Var& a);
Var operator-(const Var& a);
Var Scale(const Var& a, double c);
Var AddConst(const Var& a, double c);
// s * a with s a 1x1 variable.
Var ScaleBy(const Var& a, const Var& s);

Var Sin(const Var& a);
Var Cos(const Var& a);
Var Exp(const Var& a);
Var Log(const Var& a);
Var Sqrt(const Var& a);
Var Tanh(const Var& a);
Var Sigmoid(const Var& a);
Var Softplus(const Var& a);
// min(a, c) elementwise. The gradient at a == c is 0 (subgradient choice).
Var MinConst(const Var& a, double c);
// Elementwise min(a, b); ties route the gradient to a.
Var Min(const Var& a, const Var& b);

// Sum of all entries as a 1x1 value.
Var Sum(const Var& a);
Var MatMul(const Var& a, const Var& b);
Var Transpose(const Var& a);
// x + b * 1^T for an m x n matrix x and an m x 1 column b.
Var AddColumn(const Var& x, const Var& b);
Var SliceRows(const Var& a, int first, int count);
Var ConcatRows(std::span<const Var> parts);
Var ConcatCols(std::span<const Var> parts);
// out.col(k) = a.col(index[k]).
Var GatherCols(const Var& a, std::vector<int> index);
// out.col(index[k]) += a.col(k) for an output with num_cols columns.
Var ScatterAddCols(const Var& a, std::vector<int> index, int num_cols);
// Each column repeated `times` times consecutively.
Var RepeatCols(const Var& a, int times);
// Column-wise L2 normalization.
Var NormalizeCols(const Var& a);
// Column-wise L2 norms as a 1 x n row. The gradient of a zero column is 0.
Var ColumnNorm(const Var& a);

// Column-wise Hamilton product of 4 x n quaternion blocks.
Var QuatMul(const Var& p, const Var& q);
Var QuatConj(const Var& q);
// 4x1 unit quaternion to its 3x3 rotation matrix.
Var QuatToRotation(const Var& q);
// Flips columns with w < 0; the flip is treated as a constant.
Var SignCanonical(const Var& q);

// Integrated positional encoding of conical-frustum samples.
//
// origins, directions: 3 x R. moments: 3 x (R * samples_per_ray) holding the
// along-ray mean distance, along-ray variance, and perpendicular variance of
// each sample's Gaussian. Output column r * samples_per_ray + s holds, for
// octave l and axis a, rows 6l + a and 6l + 3 + a:
//   w_l sin(2^l mu_a) exp(-4^l var_a / 2),  w_l cos(2^l mu_a) exp(-4^l var_a / 2)
// with mu = o + t_mean d and var_a = var_t d_a^2 + var_r (1 - d_a^2).
Var IntegratedEncoding(const Var& origins, const Var& directions,
                       const Matrix& moments, int samples_per_ray,
                       std::span<const double> octave_weights);
// Plain sinusoidal encoding of 3 x B inputs with the same row layout as
// IntegratedEncoding.
Var SinusoidalEncoding(const Var& x, std::span<const double> octave_weights);
// Volume compositing of samples_per_ray consecutive columns per ray:
// sigma 1 x (R N), rgb 3 x (R N), deltas 1 x (R N) -> 3 x R.
Var Composite(const Var& sigma, const Var& rgb, const Matrix& deltas,
              int samples_per_ray);

// Forward-only compositing shared with the non-differentiable renderers.
// Writes per-sample weights T_i alpha_i when `weights` is non-null.
Eigen::Vector3d CompositeRay(std::span<const double> sigma,
                             std::span<const Eigen::Vector3d> rgb,
                             std::span<const double> deltas,
                             std::vector<double>* weights = nullptr);

}  // namespace rmnerf::ad
