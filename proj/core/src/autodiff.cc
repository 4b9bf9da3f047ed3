#include "rmnerf/autodiff.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rmnerf::ad {
namespace {

using Array = Eigen::ArrayXXd;

Tape& TapeOf(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("autodiff: invalid variable");
  return *a.tape();
}

Tape& TapeOf(const Var& a, const Var& b) {
  Tape& t = TapeOf(a);
  if (&t != &TapeOf(b)) {
    throw std::invalid_argument("autodiff: variables from different tapes");
  }
  return t;
}

void RequireSameShape(const Var& a, const Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + what);
  }
}

Var Unary(Op op, const Var& a, Matrix value, double param = 0.0) {
  Tape::Node n;
  n.op = op;
  n.inputs = {a.id()};
  n.value = std::move(value);
  n.param = param;
  return TapeOf(a).Record(std::move(n));
}

Var Binary(Op op, const Var& a, const Var& b, Matrix value) {
  Tape& t = TapeOf(a, b);
  Tape::Node n;
  n.op = op;
  n.inputs = {a.id(), b.id()};
  n.value = std::move(value);
  return t.Record(std::move(n));
}

double StableSoftplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double StableSigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Left- and right-multiplication matrices: p * q = Left(p) q = Right(q) p.
Eigen::Matrix4d LeftMatrix(const Eigen::Vector4d& p) {
  Eigen::Matrix4d m;
  m << p[0], -p[1], -p[2], -p[3],
       p[1], p[0], -p[3], p[2],
       p[2], p[3], p[0], -p[1],
       p[3], -p[2], p[1], p[0];
  return m;
}

Eigen::Matrix4d RightMatrix(const Eigen::Vector4d& q) {
  Eigen::Matrix4d m;
  m << q[0], -q[1], -q[2], -q[3],
       q[1], q[0], q[3], -q[2],
       q[2], -q[3], q[0], q[1],
       q[3], q[2], -q[1], q[0];
  return m;
}

}  // namespace

const Matrix& Var::value() const { return tape_->Value(*this); }

double Var::scalar() const {
  if (rows() != 1 || cols() != 1) {
    throw std::invalid_argument("autodiff: scalar() on a non 1x1 variable");
  }
  return value()(0, 0);
}

const char* OpName(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kScale: return "scale";
    case Op::kAddConst: return "add_const";
    case Op::kScaleBy: return "scale_by";
    case Op::kSin: return "sin";
    case Op::kCos: return "cos";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSqrt: return "sqrt";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftplus: return "softplus";
    case Op::kMinConst: return "min_const";
    case Op::kMin: return "min";
    case Op::kSum: return "sum";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kAddColumn: return "add_column";
    case Op::kSliceRows: return "slice_rows";
    case Op::kConcatRows: return "concat_rows";
    case Op::kConcatCols: return "concat_cols";
    case Op::kGatherCols: return "gather_cols";
    case Op::kScatterAddCols: return "scatter_add_cols";
    case Op::kRepeatCols: return "repeat_cols";
    case Op::kNormalizeCols: return "normalize";
    case Op::kColumnNorm: return "column_norm";
    case Op::kQuatMul: return "quat_mul";
    case Op::kQuatConj: return "quat_conj";
    case Op::kQuatToRotation: return "quat_to_rotation";
    case Op::kSignCanonical: return "sign_canonical";
    case Op::kIntegratedEncoding: return "integrated_encoding";
    case Op::kSinusoidalEncoding: return "sinusoidal_encoding";
    case Op::kComposite: return "composite";
  }
  return "unknown";
}

Var Tape::Leaf(Matrix value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return Record(std::move(n));
}

Var Tape::Constant(Matrix value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return Record(std::move(n));
}

Var Tape::Record(Node node) {
  if (!node.value.allFinite()) {
    throw std::domain_error(std::string("autodiff: non-finite value recorded by ") +
                            OpName(node.op));
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix Gradients::Wrt(const Var& v) const {
  const auto& a = adjoints_[v.id()];
  if (a.size() == 0) {
    return Matrix::Zero(shapes_[v.id()].first, shapes_[v.id()].second);
  }
  return a;
}

bool Gradients::Touches(const Var& v) const {
  return adjoints_[v.id()].size() != 0;
}

Gradients Tape::Backward(const Var& output) const {
  if (output.tape() != this) {
    throw std::invalid_argument("Backward: output from a different tape");
  }
  if (output.rows() != 1 || output.cols() != 1) {
    throw std::invalid_argument("Backward: output must be 1x1");
  }
  Gradients grads;
  grads.adjoints_.resize(nodes_.size());
  grads.shapes_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads.shapes_.emplace_back(n.value.rows(), n.value.cols());
  auto& adj = grads.adjoints_;
  auto accumulate = [&](int id, const auto& contribution) {
    const Op op = nodes_[id].op;
    if (op == Op::kConstant) return;
    if (adj[id].size() == 0) {
      adj[id] = contribution;
    } else {
      adj[id] += contribution;
    }
  };

  adj[output.id()] = Matrix::Ones(1, 1);
  for (int id = output.id(); id >= 0; --id) {
    if (adj[id].size() == 0) continue;
    const Node& n = nodes_[id];
    const Matrix& g = adj[id];
    const Matrix& out = n.value;
    auto in = [&](int k) -> const Matrix& { return nodes_[n.inputs[k]].value; };
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kAdd:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g);
        break;
      case Op::kSub:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], -g);
        break;
      case Op::kMul:
        accumulate(n.inputs[0], g.cwiseProduct(in(1)));
        accumulate(n.inputs[1], g.cwiseProduct(in(0)));
        break;
      case Op::kDiv: {
        const Array b = in(1).array();
        accumulate(n.inputs[0], Matrix(g.array() / b));
        accumulate(n.inputs[1], Matrix(-g.array() * in(0).array() / (b * b)));
        break;
      }
      case Op::kScale:
        accumulate(n.inputs[0], Matrix(n.param * g));
        break;
      case Op::kAddConst:
        accumulate(n.inputs[0], g);
        break;
      case Op::kScaleBy: {
        const double s = in(1)(0, 0);
        accumulate(n.inputs[0], Matrix(s * g));
        accumulate(n.inputs[1], Matrix::Constant(1, 1, g.cwiseProduct(in(0)).sum()));
        break;
      }
      case Op::kSin:
        accumulate(n.inputs[0], Matrix(g.array() * in(0).array().cos()));
        break;
      case Op::kCos:
        accumulate(n.inputs[0], Matrix(-g.array() * in(0).array().sin()));
        break;
      case Op::kExp:
        accumulate(n.inputs[0], g.cwiseProduct(out));
        break;
      case Op::kLog:
        accumulate(n.inputs[0], Matrix(g.array() / in(0).array()));
        break;
      case Op::kSqrt:
        accumulate(n.inputs[0], Matrix(g.array() / (2.0 * out.array())));
        break;
      case Op::kTanh:
        accumulate(n.inputs[0], Matrix(g.array() * (1.0 - out.array().square())));
        break;
      case Op::kSigmoid:
        accumulate(n.inputs[0], Matrix(g.array() * out.array() * (1.0 - out.array())));
        break;
      case Op::kSoftplus:
        accumulate(n.inputs[0], Matrix(g.array() * in(0).unaryExpr(&StableSigmoid).array()));
        break;
      case Op::kMinConst:
        accumulate(n.inputs[0],
                   Matrix((in(0).array() < n.param).select(g.array(), 0.0)));
        break;
      case Op::kMin: {
        const auto take_a = in(0).array() <= in(1).array();
        accumulate(n.inputs[0], Matrix(take_a.select(g.array(), 0.0)));
        accumulate(n.inputs[1], Matrix(take_a.select(0.0, g.array())));
        break;
      }
      case Op::kSum:
        accumulate(n.inputs[0], Matrix::Constant(in(0).rows(), in(0).cols(), g(0, 0)));
        break;
      case Op::kMatMul:
        accumulate(n.inputs[0], Matrix(g * in(1).transpose()));
        accumulate(n.inputs[1], Matrix(in(0).transpose() * g));
        break;
      case Op::kTranspose:
        accumulate(n.inputs[0], Matrix(g.transpose()));
        break;
      case Op::kAddColumn:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], Matrix(g.rowwise().sum()));
        break;
      case Op::kSliceRows: {
        Matrix full = Matrix::Zero(in(0).rows(), in(0).cols());
        full.middleRows(n.count, g.rows()) = g;
        accumulate(n.inputs[0], full);
        break;
      }
      case Op::kConcatRows: {
        Eigen::Index offset = 0;
        for (int k : n.inputs) {
          const Eigen::Index r = nodes_[k].value.rows();
          accumulate(k, Matrix(g.middleRows(offset, r)));
          offset += r;
        }
        break;
      }
      case Op::kConcatCols: {
        Eigen::Index offset = 0;
        for (int k : n.inputs) {
          const Eigen::Index c = nodes_[k].value.cols();
          accumulate(k, Matrix(g.middleCols(offset, c)));
          offset += c;
        }
        break;
      }
      case Op::kGatherCols: {
        Matrix da = Matrix::Zero(in(0).rows(), in(0).cols());
        for (std::size_t k = 0; k < n.index.size(); ++k) da.col(n.index[k]) += g.col(k);
        accumulate(n.inputs[0], da);
        break;
      }
      case Op::kScatterAddCols: {
        Matrix da(in(0).rows(), in(0).cols());
        for (std::size_t k = 0; k < n.index.size(); ++k) da.col(k) = g.col(n.index[k]);
        accumulate(n.inputs[0], da);
        break;
      }
      case Op::kRepeatCols: {
        Matrix da = Matrix::Zero(in(0).rows(), in(0).cols());
        for (Eigen::Index c = 0; c < da.cols(); ++c) {
          da.col(c) = g.middleCols(c * n.count, n.count).rowwise().sum();
        }
        accumulate(n.inputs[0], da);
        break;
      }
      case Op::kNormalizeCols: {
        // d(x/|x|) = (I - u u^T) / |x|.
        const Matrix& norms = n.aux;
        Matrix da(out.rows(), out.cols());
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
          const double proj = out.col(c).dot(g.col(c));
          da.col(c) = (g.col(c) - out.col(c) * proj) / norms(0, c);
        }
        accumulate(n.inputs[0], da);
        break;
      }
      case Op::kColumnNorm: {
        Matrix da = Matrix::Zero(in(0).rows(), in(0).cols());
        for (Eigen::Index c = 0; c < da.cols(); ++c) {
          if (out(0, c) > 0.0) da.col(c) = in(0).col(c) * (g(0, c) / out(0, c));
        }
        accumulate(n.inputs[0], da);
        break;
      }
      case Op::kQuatMul: {
        Matrix dp(4, out.cols()), dq(4, out.cols());
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
          const Eigen::Vector4d p = in(0).col(c), q = in(1).col(c);
          const Eigen::Vector4d gc = g.col(c);
          dp.col(c) = RightMatrix(q).transpose() * gc;
          dq.col(c) = LeftMatrix(p).transpose() * gc;
        }
        accumulate(n.inputs[0], dp);
        accumulate(n.inputs[1], dq);
        break;
      }
      case Op::kQuatConj: {
        Matrix da = g;
        da.bottomRows(3) *= -1.0;
        accumulate(n.inputs[0], da);
        break;
      }
      case Op::kQuatToRotation: {
        const double w = in(0)(0, 0), x = in(0)(1, 0), y = in(0)(2, 0), z = in(0)(3, 0);
        // Rows: d/dw, d/dx, d/dy, d/dz of each entry R(r, c).
        Eigen::Matrix<double, 4, 9> jac;
        jac.col(0) << 0, 0, -4 * y, -4 * z;           // R00
        jac.col(1) << -2 * z, 2 * y, 2 * x, -2 * w;   // R01
        jac.col(2) << 2 * y, 2 * z, 2 * w, 2 * x;     // R02
        jac.col(3) << 2 * z, 2 * y, 2 * x, 2 * w;     // R10
        jac.col(4) << 0, -4 * x, 0, -4 * z;           // R11
        jac.col(5) << -2 * x, -2 * w, 2 * z, 2 * y;   // R12
        jac.col(6) << -2 * y, 2 * z, -2 * w, 2 * x;   // R20
        jac.col(7) << 2 * x, 2 * w, 2 * z, 2 * y;     // R21
        jac.col(8) << 0, -4 * x, -4 * y, 0;           // R22
        Eigen::Matrix<double, 9, 1> gv;
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) gv[3 * r + c] = g(r, c);
        }
        accumulate(n.inputs[0], Matrix(jac * gv));
        break;
      }
      case Op::kSignCanonical: {
        Matrix da = g;
        for (Eigen::Index c = 0; c < da.cols(); ++c) da.col(c) *= n.aux(0, c);
        accumulate(n.inputs[0], da);
        break;
      }
      case Op::kIntegratedEncoding: {
        const Matrix& origins = in(0);
        const Matrix& dirs = in(1);
        const Matrix& moments = n.aux;
        const int samples = n.count;
        const int octaves = n.octaves;
        const Eigen::Index rays = origins.cols();
        Matrix d_origins = Matrix::Zero(3, rays);
        Matrix d_dirs = Matrix::Zero(3, rays);
        for (Eigen::Index r = 0; r < rays; ++r) {
          for (int s = 0; s < samples; ++s) {
            const Eigen::Index col = r * samples + s;
            const double t_mean = moments(0, col);
            const double var_t = moments(1, col);
            const double var_r = moments(2, col);
            for (int a = 0; a < 3; ++a) {
              const double d = dirs(a, r);
              double g_mu = 0.0, g_var = 0.0;
              double freq = 1.0;
              for (int l = 0; l < octaves; ++l, freq *= 2.0) {
                const double fs = out(6 * l + a, col);
                const double fc = out(6 * l + 3 + a, col);
                const double gs = g(6 * l + a, col);
                const double gc = g(6 * l + 3 + a, col);
                // d/dmu of w sin(f mu) e = f * (w cos(f mu) e) = f * fc.
                g_mu += freq * (fc * gs - fs * gc);
                g_var += -0.5 * freq * freq * (fs * gs + fc * gc);
              }
              d_origins(a, r) += g_mu;
              d_dirs(a, r) += g_mu * t_mean + g_var * 2.0 * d * (var_t - var_r);
            }
          }
        }
        accumulate(n.inputs[0], d_origins);
        accumulate(n.inputs[1], d_dirs);
        break;
      }
      case Op::kSinusoidalEncoding: {
        const Matrix& x = in(0);
        const int octaves = n.octaves;
        Matrix dx = Matrix::Zero(x.rows(), x.cols());
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
          for (int a = 0; a < 3; ++a) {
            double freq = 1.0;
            for (int l = 0; l < octaves; ++l, freq *= 2.0) {
              dx(a, c) += freq * (out(6 * l + 3 + a, c) * g(6 * l + a, c) -
                                  out(6 * l + a, c) * g(6 * l + 3 + a, c));
            }
          }
        }
        accumulate(n.inputs[0], dx);
        break;
      }
      case Op::kComposite: {
        // aux rows: 0 delta, 1 transmittance T_i, 2 weight T_i alpha_i.
        const Matrix& sigma = in(0);
        const Matrix& rgb = in(1);
        const int samples = n.count;
        const Eigen::Index rays = out.cols();
        Matrix d_sigma(1, sigma.cols());
        Matrix d_rgb(3, rgb.cols());
        for (Eigen::Index r = 0; r < rays; ++r) {
          const Eigen::Vector3d gr = g.col(r);
          Eigen::Vector3d suffix = Eigen::Vector3d::Zero();
          for (int s = samples - 1; s >= 0; --s) {
            const Eigen::Index col = r * samples + s;
            const double delta = n.aux(0, col);
            const double trans = n.aux(1, col);
            const double weight = n.aux(2, col);
            const Eigen::Vector3d c = rgb.col(col);
            // dC/ds_k = T_{k+1} c_k - sum_{i>k} w_i c_i, with s_k = sigma_k delta_k.
            const double t_next = trans - weight;
            d_sigma(0, col) = delta * gr.dot(t_next * c - suffix);
            d_rgb.col(col) = weight * gr;
            suffix += weight * c;
          }
        }
        accumulate(n.inputs[0], d_sigma);
        accumulate(n.inputs[1], d_rgb);
        break;
      }
    }
  }
  return grads;
}

Var operator+(const Var& a, const Var& b) {
  RequireSameShape(a, b, "add");
  return Binary(Op::kAdd, a, b, a.value() + b.value());
}

Var operator-(const Var& a, const Var& b) {
  RequireSameShape(a, b, "sub");
  return Binary(Op::kSub, a, b, a.value() - b.value());
}

Var operator*(const Var& a, const Var& b) {
  RequireSameShape(a, b, "mul");
  return Binary(Op::kMul, a, b, a.value().cwiseProduct(b.value()));
}

Var operator/(const Var& a, const Var& b) {
  RequireSameShape(a, b, "div");
  return Binary(Op::kDiv, a, b, Matrix(a.value().array() / b.value().array()));
}

Var operator*(double c, const Var& a) { return Scale(a, c); }
Var operator-(const Var& a) { return Scale(a, -1.0); }

Var Scale(const Var& a, double c) {
  return Unary(Op::kScale, a, Matrix(c * a.value()), c);
}

Var AddConst(const Var& a, double c) {
  return Unary(Op::kAddConst, a, Matrix(a.value().array() + c), c);
}

Var ScaleBy(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw std::invalid_argument("autodiff: ScaleBy needs a 1x1 factor");
  }
  return Binary(Op::kScaleBy, a, s, Matrix(s.value()(0, 0) * a.value()));
}

Var Sin(const Var& a) { return Unary(Op::kSin, a, a.value().array().sin().matrix()); }
Var Cos(const Var& a) { return Unary(Op::kCos, a, a.value().array().cos().matrix()); }
Var Exp(const Var& a) { return Unary(Op::kExp, a, a.value().array().exp().matrix()); }
Var Log(const Var& a) { return Unary(Op::kLog, a, a.value().array().log().matrix()); }
Var Sqrt(const Var& a) { return Unary(Op::kSqrt, a, a.value().array().sqrt().matrix()); }
Var Tanh(const Var& a) { return Unary(Op::kTanh, a, a.value().array().tanh().matrix()); }

Var Sigmoid(const Var& a) {
  return Unary(Op::kSigmoid, a, a.value().unaryExpr(&StableSigmoid));
}

Var Softplus(const Var& a) {
  return Unary(Op::kSoftplus, a, a.value().unaryExpr(&StableSoftplus));
}

Var MinConst(const Var& a, double c) {
  return Unary(Op::kMinConst, a, Matrix(a.value().array().min(c)), c);
}

Var Min(const Var& a, const Var& b) {
  RequireSameShape(a, b, "min");
  return Binary(Op::kMin, a, b, Matrix(a.value().array().min(b.value().array())));
}

Var Sum(const Var& a) {
  return Unary(Op::kSum, a, Matrix::Constant(1, 1, a.value().sum()));
}

Var MatMul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("autodiff: matmul shapes");
  return Binary(Op::kMatMul, a, b, a.value() * b.value());
}

Var Transpose(const Var& a) {
  return Unary(Op::kTranspose, a, Matrix(a.value().transpose()));
}

Var AddColumn(const Var& x, const Var& b) {
  if (b.cols() != 1 || b.rows() != x.rows()) {
    throw std::invalid_argument("autodiff: AddColumn shapes");
  }
  return Binary(Op::kAddColumn, x, b, Matrix(x.value().colwise() + b.value().col(0)));
}

Var SliceRows(const Var& a, int first, int count) {
  if (first < 0 || count < 0 || first + count > a.rows()) {
    throw std::invalid_argument("autodiff: SliceRows out of range");
  }
  Tape::Node n;
  n.op = Op::kSliceRows;
  n.inputs = {a.id()};
  n.value = a.value().middleRows(first, count);
  n.count = first;
  return TapeOf(a).Record(std::move(n));
}

Var ConcatRows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: ConcatRows of nothing");
  Tape& t = TapeOf(parts[0]);
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    TapeOf(parts[0], p);
    if (p.cols() != parts[0].cols()) throw std::invalid_argument("autodiff: ConcatRows shapes");
    rows += p.rows();
  }
  Tape::Node n;
  n.op = Op::kConcatRows;
  n.value.resize(rows, parts[0].cols());
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    n.value.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
    n.inputs.push_back(p.id());
  }
  return t.Record(std::move(n));
}

Var ConcatCols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: ConcatCols of nothing");
  Tape& t = TapeOf(parts[0]);
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    TapeOf(parts[0], p);
    if (p.rows() != parts[0].rows()) throw std::invalid_argument("autodiff: ConcatCols shapes");
    cols += p.cols();
  }
  Tape::Node n;
  n.op = Op::kConcatCols;
  n.value.resize(parts[0].rows(), cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    n.value.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    n.inputs.push_back(p.id());
  }
  return t.Record(std::move(n));
}

Var GatherCols(const Var& a, std::vector<int> index) {
  Tape::Node n;
  n.op = Op::kGatherCols;
  n.inputs = {a.id()};
  n.value.resize(a.rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= a.cols()) {
      throw std::invalid_argument("autodiff: GatherCols index out of range");
    }
    n.value.col(k) = a.value().col(index[k]);
  }
  n.index = std::move(index);
  return TapeOf(a).Record(std::move(n));
}

Var ScatterAddCols(const Var& a, std::vector<int> index, int num_cols) {
  if (static_cast<Eigen::Index>(index.size()) != a.cols()) {
    throw std::invalid_argument("autodiff: ScatterAddCols index size");
  }
  Tape::Node n;
  n.op = Op::kScatterAddCols;
  n.inputs = {a.id()};
  n.value = Matrix::Zero(a.rows(), num_cols);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= num_cols) {
      throw std::invalid_argument("autodiff: ScatterAddCols index out of range");
    }
    n.value.col(index[k]) += a.value().col(k);
  }
  n.index = std::move(index);
  return TapeOf(a).Record(std::move(n));
}

Var RepeatCols(const Var& a, int times) {
  if (times < 1) throw std::invalid_argument("autodiff: RepeatCols times < 1");
  Tape::Node n;
  n.op = Op::kRepeatCols;
  n.inputs = {a.id()};
  n.value.resize(a.rows(), a.cols() * times);
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    n.value.middleCols(c * times, times) = a.value().col(c).replicate(1, times);
  }
  n.count = times;
  return TapeOf(a).Record(std::move(n));
}

Var NormalizeCols(const Var& a) {
  Tape::Node n;
  n.op = Op::kNormalizeCols;
  n.inputs = {a.id()};
  n.aux = a.value().colwise().norm();
  if ((n.aux.array() == 0.0).any()) {
    throw std::domain_error("autodiff: normalize of a zero column");
  }
  n.value = a.value().array().rowwise() / n.aux.row(0).array();
  return TapeOf(a).Record(std::move(n));
}

Var ColumnNorm(const Var& a) {
  return Unary(Op::kColumnNorm, a, Matrix(a.value().colwise().norm()));
}

Var QuatMul(const Var& p, const Var& q) {
  RequireSameShape(p, q, "quat_mul");
  if (p.rows() != 4) throw std::invalid_argument("autodiff: quaternions must be 4 x n");
  Matrix out(4, p.cols());
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    out.col(c) = LeftMatrix(p.value().col(c)) * q.value().col(c);
  }
  return Binary(Op::kQuatMul, p, q, std::move(out));
}

Var QuatConj(const Var& q) {
  if (q.rows() != 4) throw std::invalid_argument("autodiff: quaternions must be 4 x n");
  Matrix out = q.value();
  out.bottomRows(3) *= -1.0;
  return Unary(Op::kQuatConj, q, std::move(out));
}

Var QuatToRotation(const Var& q) {
  if (q.rows() != 4 || q.cols() != 1) {
    throw std::invalid_argument("autodiff: QuatToRotation needs a 4x1 input");
  }
  const double w = q.value()(0, 0), x = q.value()(1, 0), y = q.value()(2, 0),
               z = q.value()(3, 0);
  Matrix m(3, 3);
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return Unary(Op::kQuatToRotation, q, std::move(m));
}

Var SignCanonical(const Var& q) {
  if (q.rows() != 4) throw std::invalid_argument("autodiff: quaternions must be 4 x n");
  Tape::Node n;
  n.op = Op::kSignCanonical;
  n.inputs = {q.id()};
  n.aux.resize(1, q.cols());
  n.value = q.value();
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    n.aux(0, c) = q.value()(0, c) < 0.0 ? -1.0 : 1.0;
    n.value.col(c) *= n.aux(0, c);
  }
  return TapeOf(q).Record(std::move(n));
}

Var IntegratedEncoding(const Var& origins, const Var& directions,
                       const Matrix& moments, int samples_per_ray,
                       std::span<const double> octave_weights) {
  Tape& t = TapeOf(origins, directions);
  RequireSameShape(origins, directions, "integrated_encoding");
  const Eigen::Index rays = origins.cols();
  if (origins.rows() != 3 || moments.rows() != 3 ||
      moments.cols() != rays * samples_per_ray || octave_weights.empty()) {
    throw std::invalid_argument("autodiff: IntegratedEncoding shapes");
  }
  const int octaves = static_cast<int>(octave_weights.size());
  Tape::Node n;
  n.op = Op::kIntegratedEncoding;
  n.inputs = {origins.id(), directions.id()};
  n.aux = moments;
  n.count = samples_per_ray;
  n.octaves = octaves;
  n.value.resize(6 * octaves, moments.cols());
  const Matrix& o = origins.value();
  const Matrix& d = directions.value();
  for (Eigen::Index r = 0; r < rays; ++r) {
    for (int s = 0; s < samples_per_ray; ++s) {
      const Eigen::Index col = r * samples_per_ray + s;
      for (int a = 0; a < 3; ++a) {
        const double da = d(a, r);
        const double mu = o(a, r) + moments(0, col) * da;
        const double var = moments(1, col) * da * da + moments(2, col) * (1.0 - da * da);
        double freq = 1.0;
        for (int l = 0; l < octaves; ++l, freq *= 2.0) {
          const double env = octave_weights[l] * std::exp(-0.5 * freq * freq * var);
          n.value(6 * l + a, col) = std::sin(freq * mu) * env;
          n.value(6 * l + 3 + a, col) = std::cos(freq * mu) * env;
        }
      }
    }
  }
  return t.Record(std::move(n));
}

Var SinusoidalEncoding(const Var& x, std::span<const double> octave_weights) {
  if (x.rows() != 3 || octave_weights.empty()) {
    throw std::invalid_argument("autodiff: SinusoidalEncoding shapes");
  }
  const int octaves = static_cast<int>(octave_weights.size());
  Tape::Node n;
  n.op = Op::kSinusoidalEncoding;
  n.inputs = {x.id()};
  n.octaves = octaves;
  n.value.resize(6 * octaves, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (int a = 0; a < 3; ++a) {
      double freq = 1.0;
      for (int l = 0; l < octaves; ++l, freq *= 2.0) {
        n.value(6 * l + a, c) = octave_weights[l] * std::sin(freq * x.value()(a, c));
        n.value(6 * l + 3 + a, c) = octave_weights[l] * std::cos(freq * x.value()(a, c));
      }
    }
  }
  return TapeOf(x).Record(std::move(n));
}

Eigen::Vector3d CompositeRay(std::span<const double> sigma,
                             std::span<const Eigen::Vector3d> rgb,
                             std::span<const double> deltas,
                             std::vector<double>* weights) {
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double optical_depth = 0.0;
  if (weights) weights->assign(sigma.size(), 0.0);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double trans = std::exp(-optical_depth);
    const double step = sigma[i] * deltas[i];
    const double weight = trans * -std::expm1(-step);
    color += weight * rgb[i];
    if (weights) (*weights)[i] = weight;
    optical_depth += step;
  }
  return color;
}

Var Composite(const Var& sigma, const Var& rgb, const Matrix& deltas,
              int samples_per_ray) {
  Tape& t = TapeOf(sigma, rgb);
  if (sigma.rows() != 1 || rgb.rows() != 3 || rgb.cols() != sigma.cols() ||
      deltas.rows() != 1 || deltas.cols() != sigma.cols() || samples_per_ray < 1 ||
      sigma.cols() % samples_per_ray != 0) {
    throw std::invalid_argument("autodiff: Composite shapes");
  }
  if ((sigma.value().array() < 0.0).any()) {
    throw std::domain_error("autodiff: Composite with negative density");
  }
  const Eigen::Index rays = sigma.cols() / samples_per_ray;
  Tape::Node n;
  n.op = Op::kComposite;
  n.inputs = {sigma.id(), rgb.id()};
  n.count = samples_per_ray;
  n.aux.resize(3, sigma.cols());
  n.value.resize(3, rays);
  for (Eigen::Index r = 0; r < rays; ++r) {
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double optical_depth = 0.0;
    for (int s = 0; s < samples_per_ray; ++s) {
      const Eigen::Index col = r * samples_per_ray + s;
      const double trans = std::exp(-optical_depth);
      const double step = sigma.value()(0, col) * deltas(0, col);
      const double weight = trans * -std::expm1(-step);
      color += weight * rgb.value().col(col);
      n.aux(0, col) = deltas(0, col);
      n.aux(1, col) = trans;
      n.aux(2, col) = weight;
      optical_depth += step;
    }
    n.value.col(r) = color;
  }
  return t.Record(std::move(n));
}

}  // namespace rmnerf::ad
