#include "pacdiff/models.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace pacdiff {

namespace {

std::string pname(std::string_view prefix, const std::string& layer, const char* what) {
  return std::string(prefix) + layer + "." + what;
}

Var dense(Graph& g, std::string_view prefix, const std::string& layer, Var x) {
  return matmul(x, g.param(pname(prefix, layer, "W"))) + g.param(pname(prefix, layer, "b"));
}

std::string block_name(int b) { return "block" + std::to_string(b); }

}  // namespace

Tensor he_normal(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  return standard_normal(fan_in, fan_out, rng) * std::sqrt(2.0 / double(fan_in));
}

ParamStore init_weight_net(const WeightNetArch& arch, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore store;
  int in = 1;
  std::vector<int> widths = arch.hidden;
  widths.push_back(1);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::string layer = "l" + std::to_string(l);
    store.add(pname(kWeightPrefix, layer, "W"), he_normal(in, widths[l], rng));
    store.add(pname(kWeightPrefix, layer, "b"), Tensor::Zero(1, widths[l]));
    in = widths[l];
  }
  return store;
}

Var weight_net_logits(Graph& g, const WeightNetArch& arch, Var y) {
  Var h = y;
  const std::size_t layers = arch.hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    h = dense(g, kWeightPrefix, "l" + std::to_string(l), h);
    if (l + 1 < layers) h = relu(h);
  }
  return h;
}

Var weight_net(Graph& g, const WeightNetArch& arch, Var y) {
  return exp(weight_net_logits(g, arch, y));
}

Vector weight_eval(const ParamStore& phi, const WeightNetArch& arch, const Vector& y) {
  if (!y.allFinite()) throw DomainError("weight_eval: non-finite objective value");
  Graph g;
  g.set_output(weight_net(g, arch, g.constant(y)));
  return g.forward(phi.values()).col(0);
}

double weight_eval(const ParamStore& phi, const WeightNetArch& arch, double y) {
  return weight_eval(phi, arch, Vector::Constant(1, y))(0);
}

double predefined_weight_eval(double psi, double y) {
  if (!std::isfinite(y) || !std::isfinite(psi))
    throw DomainError("predefined weight: non-finite input");
  return std::exp(psi * y);
}

Var predefined_weight(Graph&, double psi, Var y) { return exp(y * psi); }

Var WeightModel::build(Graph& g, Var y) const {
  return is_trainable() ? weight_net(g, arch, y) : predefined_weight(g, psi, y);
}

Vector WeightModel::eval(const ParamStore& phi, const Vector& y) const {
  if (is_trainable()) return weight_eval(phi, arch, y);
  Vector w(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) w(i) = predefined_weight_eval(psi, y(i));
  return w;
}

std::string WeightModel::describe() const {
  if (is_trainable()) return "trainable";
  std::ostringstream os;
  os << "exponential(ψ=" << std::fixed << std::setprecision(1) << psi << ")";
  return os.str();
}

ScoreNet init_score_net(const ScoreNetArch& arch, const NoiseSchedule& schedule,
                        std::uint64_t seed) {
  schedule.validate();
  if (arch.dim < 1 || arch.hidden < 1 || arch.blocks < 1 || arch.embed_dim < 2 ||
      arch.embed_dim % 2 != 0)
    throw ContractError("invalid score network dimensions");
  Rng rng(seed);
  ScoreNet net{arch, schedule, {}, {}};
  auto& p = net.params;
  p.add(pname(kScorePrefix, "embed", "W"), he_normal(arch.embed_dim, arch.embed_dim, rng));
  p.add(pname(kScorePrefix, "embed", "b"), Tensor::Zero(1, arch.embed_dim));
  int in = arch.dim;
  for (int b = 0; b < arch.blocks; ++b) {
    const std::string layer = block_name(b);
    p.add(pname(kScorePrefix, layer, "W"), he_normal(in + arch.embed_dim, arch.hidden, rng));
    p.add(pname(kScorePrefix, layer, "b"), Tensor::Zero(1, arch.hidden));
    p.add(pname(kScorePrefix, layer, "gamma"), Tensor::Ones(1, arch.hidden));
    p.add(pname(kScorePrefix, layer, "beta"), Tensor::Zero(1, arch.hidden));
    if (arch.norm == NormKind::Batch) {
      net.running.emplace(layer + ".running_mean", Tensor::Zero(1, arch.hidden));
      net.running.emplace(layer + ".running_var", Tensor::Ones(1, arch.hidden));
    }
    in = arch.hidden;
  }
  p.add(pname(kScorePrefix, "out", "W"), he_normal(in, arch.dim, rng));
  p.add(pname(kScorePrefix, "out", "b"), Tensor::Zero(1, arch.dim));
  return net;
}

Tensor time_features(const Vector& t, int dim) {
  const int half = dim / 2;
  Tensor f(t.size(), dim);
  for (int k = 0; k < half; ++k) {
    const double freq =
        half > 1 ? std::exp(std::log(1000.0) * double(k) / double(half - 1)) : 1.0;
    for (Eigen::Index r = 0; r < t.size(); ++r) {
      f(r, k) = std::sin(freq * t(r));
      f(r, half + k) = std::cos(freq * t(r));
    }
  }
  return f;
}

ScoreGraph build_score_net(Graph& g, const ScoreNet& net, Var x, const Vector& t, NetMode mode) {
  const ScoreNetArch& a = net.arch;
  ScoreGraph out;
  Var emb = dense(g, kScorePrefix, "embed", g.constant(time_features(t, a.embed_dim)));
  Var h = x;
  for (int b = 0; b < a.blocks; ++b) {
    const std::string layer = block_name(b);
    Var pre = dense(g, kScorePrefix, layer, concat(h, emb));
    Var normed;
    if (a.norm == NormKind::Layer) {
      normed = normalize(pre, Axis::Cols, a.norm_eps);
    } else if (mode == NetMode::Train) {
      normed = normalize(pre, Axis::Rows, a.norm_eps);
      out.pre_norm.push_back(pre);
    } else {
      const Tensor& rm = net.running.at(layer + ".running_mean");
      const Tensor& rv = net.running.at(layer + ".running_var");
      Tensor inv = (rv.array() + a.norm_eps).rsqrt().matrix();
      normed = (pre - g.constant(rm)) * g.constant(std::move(inv));
    }
    h = elu(normed * g.param(pname(kScorePrefix, layer, "gamma")) +
            g.param(pname(kScorePrefix, layer, "beta")));
  }
  Var s = dense(g, kScorePrefix, "out", h);
  if (a.scale_by_sigma) {
    Vector inv_sigma(t.size());
    for (Eigen::Index r = 0; r < t.size(); ++r) inv_sigma(r) = 1.0 / sigma(net.schedule, t(r));
    s = s * g.constant(std::move(inv_sigma));
  }
  out.output = s;
  return out;
}

ScoreFn score_fn(const ScoreNet& net, NetMode mode, std::vector<Var>* pre_norm) {
  return [&net, mode, pre_norm](Graph& g, Var x, const Vector& t) {
    ScoreGraph sg = build_score_net(g, net, x, t, mode);
    if (pre_norm) *pre_norm = sg.pre_norm;
    return sg.output;
  };
}

void update_running_stats(ScoreNet& net, const std::vector<Var>& pre_norm) {
  if (net.arch.norm != NormKind::Batch) return;
  const double mom = net.arch.momentum;
  for (std::size_t b = 0; b < pre_norm.size(); ++b) {
    const Tensor& v = pre_norm[b].value();
    const std::string layer = block_name(int(b));
    Eigen::RowVectorXd mu = v.colwise().mean();
    Eigen::RowVectorXd var = (v.rowwise() - mu).array().square().colwise().sum();
    var /= double(std::max<Eigen::Index>(1, v.rows() - 1));
    Tensor& rm = net.running.at(layer + ".running_mean");
    Tensor& rv = net.running.at(layer + ".running_var");
    rm = (1.0 - mom) * rm + mom * Tensor(mu);
    rv = (1.0 - mom) * rv + mom * Tensor(var);
  }
}

Tensor score_eval(const ScoreNet& net, const Tensor& x, const Vector& t, NetMode mode) {
  if (x.cols() != net.arch.dim)
    throw ShapeError("score_eval: design dimension " + std::to_string(x.cols()) +
                     " does not match network dimension " + std::to_string(net.arch.dim));
  if (t.size() != x.rows()) throw ShapeError("score_eval: one time per row required");
  for (Eigen::Index r = 0; r < t.size(); ++r) detail::check_time(t(r));
  Graph g;
  g.set_output(build_score_net(g, net, g.constant(x), t, mode).output);
  return g.forward(net.params.values());
}

Tensor score_eval(const ScoreNet& net, const Tensor& x, double t) {
  return score_eval(net, x, Vector::Constant(x.rows(), t), NetMode::Inference);
}

}  // namespace pacdiff
