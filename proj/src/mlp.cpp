#include "dadnn/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dadnn/errors.hpp"

namespace dadnn {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kElu: return "elu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kIdentity: break;
  }
  return "identity";
}

Activation activation_from_string(std::string_view s) {
  if (s == "elu") return Activation::kElu;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "identity") return Activation::kIdentity;
  throw ParseError("unknown activation '" + std::string(s) + "'", 0);
}

double sigmoid(double x) {
  const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  // Keep the codomain open so relaxed switch values never hit 0 or 1 exactly.
  return std::clamp(s, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

namespace {

Vec apply(Activation a, const Vec& x) {
  switch (a) {
    case Activation::kElu: return x.unaryExpr([](double v) { return v > 0 ? v : std::expm1(v); });
    case Activation::kSigmoid: return x.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::kIdentity: break;
  }
  return x;
}

// Derivative with respect to the pre-activation, given pre and post values.
Vec derivative(Activation a, const Vec& pre, const Vec& out) {
  switch (a) {
    case Activation::kElu: return pre.unaryExpr([](double v) { return v > 0 ? 1.0 : std::exp(v); });
    case Activation::kSigmoid: return out.array() * (1.0 - out.array());
    case Activation::kIdentity: break;
  }
  return Vec::Ones(pre.size());
}

Mat kaiming_uniform(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / cols);
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat W(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) W(r, c) = u(rng);
  return W;
}

Vec standardize(const MlpParams& p, const Vec& pd) {
  if (pd.size() != p.input_dim()) throw ContractError("input length does not match the model");
  if (p.input_mean.size() != pd.size()) return pd;
  return (pd - p.input_mean).cwiseQuotient(p.input_std);
}

ForwardTrace run(const MlpParams& p, const Vec& pd, ForwardMode mode, Rng* rng, const std::vector<Vec>* masks) {
  ForwardTrace t;
  t.mode = mode;
  t.input = standardize(p, pd);
  const std::size_t L = p.layers.size();
  Vec a = t.input;
  std::bernoulli_distribution keep(1.0 - p.dropout);
  const double inv_keep = p.dropout < 1.0 ? 1.0 / (1.0 - p.dropout) : 0.0;
  for (std::size_t k = 0; k < L; ++k) {
    const auto& layer = p.layers[k];
    Vec pre = layer.W * a + layer.b;
    Vec out = apply(layer.act, pre);
    if (mode == ForwardMode::kTrain && k + 1 < L) {
      Vec m;
      if (masks) {
        m = (*masks)[k];
      } else {
        m.resize(out.size());
        for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = (p.dropout > 0 && !keep(*rng)) ? 0.0 : inv_keep;
        if (p.dropout == 0) m.setOnes();
      }
      out = out.cwiseProduct(m);
      t.masks.push_back(std::move(m));
    }
    t.pre.push_back(std::move(pre));
    t.post.push_back(out);
    a = std::move(out);
  }
  t.output = a;
  return t;
}

}  // namespace

MlpParams init_network(int n_bus, int hidden_dim, int n_line, std::uint64_t seed, InitMode mode,
                       int hidden_layers, double dropout) {
  if (n_bus <= 0 || hidden_dim <= 0 || n_line <= 0 || hidden_layers < 0)
    throw ContractError("network dimensions must be positive");
  if (!(dropout >= 0 && dropout < 1)) throw ContractError("dropout must lie in [0, 1)");
  Rng rng(seed);
  MlpParams p;
  p.dropout = dropout;
  int in = n_bus;
  for (int k = 0; k < hidden_layers; ++k) {
    p.layers.push_back({kaiming_uniform(hidden_dim, in, rng), Vec::Zero(hidden_dim), Activation::kElu});
    in = hidden_dim;
  }
  DenseLayer head;
  head.act = Activation::kSigmoid;
  if (mode == InitMode::kManual) {
    head.W = Mat::Zero(n_line, in);
    head.b = Vec::Constant(n_line, kManualHeadBias);
  } else {
    head.W = kaiming_uniform(n_line, in, rng);
    head.b = Vec::Zero(n_line);
  }
  p.layers.push_back(std::move(head));
  p.input_mean = Vec::Zero(n_bus);
  p.input_std = Vec::Ones(n_bus);
  return p;
}

void set_input_normalization(MlpParams& p, const Mat& samples) {
  if (samples.cols() != p.input_dim()) throw ContractError("sample width does not match the model");
  if (samples.rows() == 0) throw ContractError("no samples for normalization");
  p.input_mean = samples.colwise().mean().transpose();
  p.input_std.resize(samples.cols());
  for (Eigen::Index c = 0; c < samples.cols(); ++c) {
    const double var = (samples.col(c).array() - p.input_mean(c)).square().mean();
    const double sd = std::sqrt(var);
    p.input_std(c) = sd > 1e-12 ? sd : 1.0;
  }
}

ForwardTrace forward(const MlpParams& p, const Vec& pd, ForwardMode mode, Rng* rng) {
  if (mode == ForwardMode::kTrain && p.dropout > 0 && rng == nullptr)
    throw ContractError("train-mode forward with dropout needs an rng");
  return run(p, pd, mode, rng, nullptr);
}

ForwardTrace forward_with_masks(const MlpParams& p, const Vec& pd, const std::vector<Vec>& masks) {
  if (masks.size() + 1 != p.layers.size()) throw ContractError("one mask per hidden layer is required");
  return run(p, pd, ForwardMode::kTrain, nullptr, &masks);
}

MlpGrads MlpGrads::zeros_like(const MlpParams& p) {
  MlpGrads g;
  for (const auto& l : p.layers) {
    g.dW.push_back(Mat::Zero(l.W.rows(), l.W.cols()));
    g.db.push_back(Vec::Zero(l.b.size()));
  }
  return g;
}

MlpGrads& MlpGrads::operator+=(const MlpGrads& o) {
  for (std::size_t k = 0; k < dW.size(); ++k) {
    dW[k] += o.dW[k];
    db[k] += o.db[k];
  }
  return *this;
}

MlpGrads& MlpGrads::operator*=(double s) {
  for (std::size_t k = 0; k < dW.size(); ++k) {
    dW[k] *= s;
    db[k] *= s;
  }
  return *this;
}

MlpGrads backward(const MlpParams& p, const ForwardTrace& t, const Vec& upstream) {
  const std::size_t L = p.layers.size();
  if (t.pre.size() != L || t.post.size() != L) throw ContractError("trace does not match the network");
  if (upstream.size() != p.output_dim()) throw ContractError("upstream gradient length");
  const bool train = t.mode == ForwardMode::kTrain;
  if (train && t.masks.size() + 1 != L) throw ContractError("trace is missing dropout masks");

  MlpGrads g = MlpGrads::zeros_like(p);
  Vec da = upstream;  // dL/d(post of layer k)
  for (std::size_t k = L; k-- > 0;) {
    const auto& layer = p.layers[k];
    Vec d_act = da;
    if (train && k + 1 < L) d_act = d_act.cwiseProduct(t.masks[k]);
    // post = act(pre) * mask, so act(pre) = post / mask where mask != 0; the
    // derivative only needs pre for ELU and the unmasked output for sigmoid.
    const Vec act_out = apply(layer.act, t.pre[k]);
    const Vec delta = d_act.cwiseProduct(derivative(layer.act, t.pre[k], act_out));
    const Vec& in = k == 0 ? t.input : t.post[k - 1];
    if (layer.W.cols() != in.size() || layer.W.rows() != delta.size())
      throw ContractError("trace does not match the network");
    g.dW[k] = delta * in.transpose();
    g.db[k] = delta;
    da = layer.W.transpose() * delta;
  }
  return g;
}

AdamWState AdamWState::for_params(const MlpParams& p, double lr, double weight_decay) {
  AdamWState s;
  s.lr = lr;
  s.weight_decay = weight_decay;
  for (const auto& l : p.layers) {
    s.mW.push_back(Mat::Zero(l.W.rows(), l.W.cols()));
    s.vW.push_back(Mat::Zero(l.W.rows(), l.W.cols()));
    s.mb.push_back(Vec::Zero(l.b.size()));
    s.vb.push_back(Vec::Zero(l.b.size()));
  }
  return s;
}

void adamw_step(MlpParams& p, const MlpGrads& g, AdamWState& s) {
  if (g.dW.size() != p.layers.size() || s.mW.size() != p.layers.size())
    throw ContractError("optimizer state does not match the network");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols())
      throw ContractError("gradient shape does not match the parameter");
    param *= 1.0 - s.lr * s.weight_decay;
    m = s.beta1 * m + (1.0 - s.beta1) * grad;
    v = s.beta2 * v + (1.0 - s.beta2) * grad.cwiseAbs2();
    param.array() -= s.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + s.eps);
  };
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    update(p.layers[k].W, g.dW[k], s.mW[k], s.vW[k]);
    update(p.layers[k].b, g.db[k], s.mb[k], s.vb[k]);
  }
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::vector<double> flat(const Mat& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

std::vector<double> flat(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec vec_from(const nlohmann::json& j, Eigen::Index n, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != n) throw ShapeError(std::string(what) + " has the wrong length");
  return Eigen::Map<const Vec>(v.data(), n);
}

}  // namespace

nlohmann::json model_to_json(const MlpParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : p.layers) {
    layers.push_back({{"activation", std::string(to_string(l.act))},
                      {"rows", l.W.rows()},
                      {"cols", l.W.cols()},
                      {"W", flat(l.W)},
                      {"b", flat(l.b)}});
  }
  return {{"format", "dadnn-mlp"},
          {"version", kModelFormatVersion},
          {"input_dim", p.input_dim()},
          {"output_dim", p.output_dim()},
          {"hidden_dim", p.hidden_dim()},
          {"dropout", p.dropout},
          {"input_mean", flat(p.input_mean)},
          {"input_std", flat(p.input_std)},
          {"layers", layers}};
}

MlpParams model_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", std::string()) != "dadnn-mlp") throw ParseError("not a dadnn model file", 0);
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion)
      throw VersionError("model format version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kModelFormatVersion) + ")");
    MlpParams p;
    p.dropout = j.at("dropout").get<double>();
    for (const auto& lj : j.at("layers")) {
      DenseLayer l;
      l.act = activation_from_string(lj.at("activation").get<std::string>());
      const auto rows = lj.at("rows").get<Eigen::Index>();
      const auto cols = lj.at("cols").get<Eigen::Index>();
      const auto w = lj.at("W").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols) throw ShapeError("weight array size mismatch");
      l.W.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) l.W(r, c) = w[static_cast<std::size_t>(r * cols + c)];
      l.b = vec_from(lj.at("b"), rows, "bias");
      if (!p.layers.empty() && p.layers.back().W.rows() != cols) throw ShapeError("layer dimensions do not chain");
      p.layers.push_back(std::move(l));
    }
    if (p.layers.empty()) throw ShapeError("model has no layers");
    if (j.at("input_dim").get<int>() != p.input_dim() || j.at("output_dim").get<int>() != p.output_dim())
      throw ShapeError("declared dimensions do not match the layers");
    p.input_mean = vec_from(j.at("input_mean"), p.input_dim(), "input_mean");
    p.input_std = vec_from(j.at("input_std"), p.input_dim(), "input_std");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what(), 0);
  }
}

void save_model(const MlpParams& p, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write model file " + path.string());
  os << model_to_json(p).dump(1) << '\n';
}

MlpParams load_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open model file " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model file: ") + e.what(), 0);
  }
  return model_from_json(j);
}

void check_model_shape(const MlpParams& p, int n_bus, int n_line) {
  if (p.input_dim() != n_bus)
    throw ShapeError("model expects " + std::to_string(p.input_dim()) + " buses, case has " + std::to_string(n_bus));
  if (p.output_dim() != n_line)
    throw ShapeError("model predicts " + std::to_string(p.output_dim()) + " lines, case has " +
                     std::to_string(n_line));
}

}  // namespace dadnn
