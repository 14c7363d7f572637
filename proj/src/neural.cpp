#include "cruise/neural.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "cruise/error.hpp"

namespace cruise {

namespace {

constexpr const char* kCheckpointMagic = "cruise-qnet";
constexpr int kCheckpointVersion = 1;

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

}  // namespace

void MlpTopology::validate() const {
  auto positive = [](const std::vector<int>& v) {
    for (int n : v) {
      if (n < 1) return false;
    }
    return true;
  };
  if (input < 1 || heads < 1 || outputs < 1 || shared.empty() || !positive(shared) ||
      !positive(head)) {
    throw Error(ErrorCode::kConfig, "network needs a shared layer and positive sizes");
  }
}

QNetwork::QNetwork(MlpTopology topology) : topology_(std::move(topology)) {
  topology_.validate();
  Eigen::Index offset = 0;
  auto add_layer = [&](int in, int out) {
    Layer l{in, out, offset, offset + static_cast<Eigen::Index>(in) * out};
    offset = l.b + out;
    return l;
  };
  int width = topology_.input;
  for (int n : topology_.shared) {
    shared_layers_.push_back(add_layer(width, n));
    width = n;
  }
  blocks_.push_back({0, offset});
  const int trunk = width;
  for (int k = 0; k < topology_.heads; ++k) {
    const Eigen::Index start = offset;
    std::vector<Layer> layers;
    int w = trunk;
    for (int n : topology_.head) {
      layers.push_back(add_layer(w, n));
      w = n;
    }
    layers.push_back(add_layer(w, topology_.outputs));
    head_layers_.push_back(std::move(layers));
    blocks_.push_back({start, offset - start});
  }
  params_ = Eigen::VectorXd::Zero(offset);
}

void QNetwork::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  params_.setZero();
  auto fill = [&](const Layer& l) {
    const double limit = std::sqrt(6.0 / l.in);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(l.in) * l.out; ++i) {
      params_(l.w + i) = dist(rng);
    }
  };
  for (const auto& l : shared_layers_) fill(l);
  for (const auto& head : head_layers_) {
    for (const auto& l : head) fill(l);
  }
}

Eigen::Map<const Eigen::MatrixXd> QNetwork::weight(const Layer& l) const {
  return {params_.data() + l.w, l.out, l.in};
}

Eigen::Map<const Eigen::VectorXd> QNetwork::bias(const Layer& l) const {
  return {params_.data() + l.b, l.out};
}

std::vector<Eigen::MatrixXd> QNetwork::forward(const Eigen::MatrixXd& input, Cache* cache) const {
  if (input.rows() != topology_.input) {
    throw Error(ErrorCode::kShapeMismatch, "network input has " + std::to_string(input.rows()) +
                                               " rows, expected " +
                                               std::to_string(topology_.input));
  }
  Cache local;
  Cache& c = cache ? *cache : local;
  c.shared.clear();
  c.heads.assign(topology_.heads, {});

  c.shared.push_back(input);
  for (const auto& l : shared_layers_) {
    Eigen::MatrixXd z = weight(l) * c.shared.back();
    z.colwise() += bias(l);
    c.shared.push_back(z.cwiseMax(0.0));
  }
  std::vector<Eigen::MatrixXd> out(topology_.heads);
  for (int k = 0; k < topology_.heads; ++k) {
    const auto& layers = head_layers_[k];
    const Eigen::MatrixXd* a = &c.shared.back();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      Eigen::MatrixXd z = weight(layers[i]) * *a;
      z.colwise() += bias(layers[i]);
      if (i + 1 < layers.size()) {
        c.heads[k].push_back(z.cwiseMax(0.0));
        a = &c.heads[k].back();
      } else {
        out[k] = std::move(z);
      }
    }
  }
  return out;
}

std::vector<Eigen::VectorXd> QNetwork::forward(const Eigen::VectorXd& input) const {
  const auto out = forward(Eigen::MatrixXd(input), nullptr);
  std::vector<Eigen::VectorXd> q;
  q.reserve(out.size());
  for (const auto& m : out) q.emplace_back(m.col(0));
  return q;
}

Eigen::VectorXd QNetwork::backward(const Cache& cache,
                                   const std::vector<Eigen::MatrixXd>& output_grads,
                                   const std::vector<char>& head_mask) const {
  const int heads = topology_.heads;
  if (static_cast<int>(output_grads.size()) != heads ||
      static_cast<int>(head_mask.size()) != heads || cache.heads.size() != output_grads.size()) {
    throw Error(ErrorCode::kShapeMismatch, "backward needs one gradient and mask per head");
  }
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  const Eigen::MatrixXd& trunk = cache.shared.back();
  Eigen::MatrixXd trunk_grad = Eigen::MatrixXd::Zero(trunk.rows(), trunk.cols());
  bool any = false;

  auto accumulate = [&](const Layer& l, const Eigen::MatrixXd& delta, const Eigen::MatrixXd& in) {
    Eigen::Map<Eigen::MatrixXd>(grad.data() + l.w, l.out, l.in) += delta * in.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + l.b, l.out) += delta.rowwise().sum();
  };

  for (int k = 0; k < heads; ++k) {
    if (!head_mask[k]) continue;
    any = true;
    const auto& layers = head_layers_[k];
    Eigen::MatrixXd delta = output_grads[k];
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
      const Eigen::MatrixXd& in = i == 0 ? trunk : cache.heads[k][i - 1];
      accumulate(layers[i], delta, in);
      Eigen::MatrixXd back = weight(layers[i]).transpose() * delta;
      back = back.cwiseProduct((in.array() > 0.0).cast<double>().matrix());
      if (i == 0) {
        trunk_grad += back;
      } else {
        delta = std::move(back);
      }
    }
  }
  if (!any) return grad;

  Eigen::MatrixXd delta = trunk_grad / static_cast<double>(heads);
  for (int i = static_cast<int>(shared_layers_.size()) - 1; i >= 0; --i) {
    const Eigen::MatrixXd& in = cache.shared[i];
    accumulate(shared_layers_[i], delta, in);
    if (i > 0) {
      Eigen::MatrixXd back = weight(shared_layers_[i]).transpose() * delta;
      delta = back.cwiseProduct((in.array() > 0.0).cast<double>().matrix());
    }
  }
  return grad;
}

void QNetwork::save(std::ostream& out) const {
  const auto& t = topology_;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "input " << t.input << '\n';
  out << "shared " << t.shared.size();
  for (int n : t.shared) out << ' ' << n;
  out << "\nhead " << t.head.size();
  for (int n : t.head) out << ' ' << n;
  out << "\nheads " << t.heads << "\noutputs " << t.outputs << '\n';
  out << "params " << params_.size() << '\n';
  for (Eigen::Index i = 0; i < params_.size(); ++i) out << hexfloat(params_(i)) << '\n';
}

QNetwork QNetwork::load(std::istream& in) {
  auto fail = [](const std::string& what) -> void {
    throw Error(ErrorCode::kIo, "bad checkpoint: " + what);
  };
  std::string word;
  int version = 0;
  in >> word >> version;
  if (word != kCheckpointMagic || version != kCheckpointVersion) fail("header");
  MlpTopology t;
  std::size_t count = 0;
  in >> word >> t.input;
  if (word != "input") fail("input");
  in >> word >> count;
  if (word != "shared") fail("shared");
  t.shared.resize(count);
  for (auto& n : t.shared) in >> n;
  in >> word >> count;
  if (word != "head") fail("head");
  t.head.resize(count);
  for (auto& n : t.head) in >> n;
  in >> word >> t.heads;
  if (word != "heads") fail("heads");
  in >> word >> t.outputs;
  if (word != "outputs") fail("outputs");
  Eigen::Index size = 0;
  in >> word >> size;
  if (word != "params" || !in) fail("params");
  QNetwork net(t);
  if (size != net.param_count()) fail("parameter count does not match topology");
  for (Eigen::Index i = 0; i < size; ++i) {
    if (!(in >> word)) fail("truncated parameters");
    net.params_(i) = std::strtod(word.c_str(), nullptr);
  }
  return net;
}

void QNetwork::save_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  save(out);
}

QNetwork QNetwork::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot open checkpoint " + path);
  return load(in);
}

Adam::Adam(AdamConfig config, std::vector<ParamBlock> blocks, Eigen::Index size)
    : config_(config),
      blocks_(std::move(blocks)),
      m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)),
      steps_(blocks_.size(), 0) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (grad.size() != params.size() || params.size() != m_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "Adam gradient size mismatch");
  }
  const auto& c = config_;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto [offset, size] = blocks_[b];
    const auto g = grad.segment(offset, size);
    if (!(g.array() != 0.0).any()) continue;
    const long t = ++steps_[b];
    auto m = m_.segment(offset, size);
    auto v = v_.segment(offset, size);
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    params.segment(offset, size).array() -=
        c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
}

}  // namespace cruise
