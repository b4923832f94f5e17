#include "meedr/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "meedr/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace meedr {

std::int64_t Architecture::parameter_count() const {
  std::int64_t total = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    total += static_cast<std::int64_t>(widths[l + 1]) * (widths[l] + 1);
  }
  return total;
}

void Architecture::validate() const {
  if (widths.size() < 2) throw ConfigError("architecture needs input and output widths");
  if (widths.back() != 1) throw ConfigError("output width must be 1");
  for (int w : widths) {
    if (w < 1) throw ConfigError("layer widths must be >= 1");
  }
  if (std::isnan(weight_bound) || !(weight_bound > 0.0)) {
    throw ConfigError("weight bound must be positive");
  }
  if (!std::isfinite(output_bound) || !(output_bound > 0.0)) {
    throw ConfigError("output bound must be positive and finite");
  }
  if (sparsity_budget && *sparsity_budget < 0) {
    throw ConfigError("sparsity budget must be >= 0");
  }
}

nlohmann::json Architecture::to_json() const {
  nlohmann::json j{{"widths", widths},
                   {"weight_bound", weight_bound},
                   {"output_bound", output_bound}};
  if (sparsity_budget) {
    j["sparsity"] = *sparsity_budget;
  } else {
    j["sparsity"] = nullptr;
  }
  return j;
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture arch;
  try {
    if (j.contains("widths")) {
      arch.widths = j.at("widths").get<std::vector<int>>();
    } else {
      int input_dim = j.at("input_dim").get<int>();
      int depth = j.at("depth").get<int>();
      int width = j.at("width").get<int>();
      if (depth < 0) throw ConfigError("depth must be >= 0");
      arch.widths.push_back(input_dim);
      arch.widths.insert(arch.widths.end(), static_cast<std::size_t>(depth), width);
      arch.widths.push_back(1);
    }
    if (j.contains("weight_bound")) arch.weight_bound = j.at("weight_bound").get<double>();
    if (j.contains("output_bound")) arch.output_bound = j.at("output_bound").get<double>();
    if (j.contains("sparsity") && !j.at("sparsity").is_null()) {
      arch.sparsity_budget = j.at("sparsity").get<std::int64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad architecture spec: ") + e.what());
  }
  arch.validate();
  return arch;
}

Architecture Architecture::uniform(int input_dim, int hidden_layers, int width,
                                   double weight_bound, double output_bound,
                                   std::optional<std::int64_t> sparsity_budget) {
  Architecture arch;
  arch.widths.push_back(input_dim);
  arch.widths.insert(arch.widths.end(), static_cast<std::size_t>(std::max(hidden_layers, 0)),
                     width);
  arch.widths.push_back(1);
  arch.weight_bound = weight_bound;
  arch.output_bound = output_bound;
  arch.sparsity_budget = sparsity_budget;
  arch.validate();
  return arch;
}

Network::Network(Architecture arch) : arch_(std::move(arch)) {
  arch_.validate();
  for (std::size_t l = 0; l + 1 < arch_.widths.size(); ++l) {
    weights_.emplace_back(Eigen::MatrixXd::Zero(arch_.widths[l + 1], arch_.widths[l]));
    biases_.emplace_back(Eigen::VectorXd::Zero(arch_.widths[l + 1]));
  }
}

Network Network::initialized(const Architecture& arch, Rng& rng) {
  Network net(arch);
  const double bound = arch.weight_bound;
  for (std::size_t l = 0; l < net.weights_.size(); ++l) {
    Eigen::MatrixXd& W = net.weights_[l];
    const double a = std::sqrt(6.0 / static_cast<double>(W.rows() + W.cols()));
    for (Eigen::Index c = 0; c < W.cols(); ++c) {
      for (Eigen::Index r = 0; r < W.rows(); ++r) {
        W(r, c) = std::clamp(rng.uniform_range(-a, a), -bound, bound);
      }
    }
  }
  return net;
}

double Network::forward(const Eigen::VectorXd& x) const {
  if (x.size() != arch_.input_dim()) throw ConfigError("forward: input dimension mismatch");
  Eigen::VectorXd a = x;
  const std::size_t layers = weights_.size();
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    a = ((weights_[l] * a + biases_[l]).array().max(0.0)).matrix();
  }
  double raw = (weights_[layers - 1] * a + biases_[layers - 1])(0);
  return std::clamp(raw, -arch_.output_bound, arch_.output_bound);
}

Eigen::VectorXd Network::forward_batch(const Eigen::MatrixXd& x) const {
  if (x.rows() != arch_.input_dim()) throw ConfigError("forward_batch: input dimension mismatch");
  Eigen::MatrixXd a = x;
  const std::size_t layers = weights_.size();
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    a = ((weights_[l] * a).colwise() + biases_[l]).array().max(0.0).matrix();
  }
  Eigen::RowVectorXd raw =
      (weights_[layers - 1] * a).row(0).array() + biases_[layers - 1](0);
  const double f = arch_.output_bound;
  return raw.transpose().array().min(f).max(-f).matrix();
}

Eigen::VectorXd Network::theta() const {
  Eigen::VectorXd out(parameter_count());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const Eigen::MatrixXd& W = weights_[l];
    std::copy(W.data(), W.data() + W.size(), out.data() + off);
    off += W.size();
    const Eigen::VectorXd& b = biases_[l];
    std::copy(b.data(), b.data() + b.size(), out.data() + off);
    off += b.size();
  }
  return out;
}

void Network::set_theta(const Eigen::VectorXd& theta) {
  if (theta.size() != parameter_count()) {
    std::ostringstream msg;
    msg << "set_theta: expected " << parameter_count() << " parameters, got " << theta.size();
    throw ConfigError(msg.str());
  }
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd& W = weights_[l];
    std::copy(theta.data() + off, theta.data() + off + W.size(), W.data());
    off += W.size();
    Eigen::VectorXd& b = biases_[l];
    std::copy(theta.data() + off, theta.data() + off + b.size(), b.data());
    off += b.size();
  }
}

void Network::clamp_weights() {
  const double bound = arch_.weight_bound;
  if (!std::isfinite(bound)) return;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    weights_[l] = weights_[l].cwiseMax(-bound).cwiseMin(bound);
    biases_[l] = biases_[l].cwiseMax(-bound).cwiseMin(bound);
  }
}

std::int64_t Network::nonzero_count() const {
  std::int64_t count = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    count += (weights_[l].array() != 0.0).count();
    count += (biases_[l].array() != 0.0).count();
  }
  return count;
}

ForwardTrace forward_trace(const Network& net, const Eigen::MatrixXd& x) {
  if (x.rows() != net.architecture().input_dim()) {
    throw ConfigError("forward_trace: input dimension mismatch");
  }
  ForwardTrace tr;
  const auto& weights = net.weights();
  const auto& biases = net.biases();
  tr.activations.reserve(weights.size());
  tr.activations.push_back(x);
  for (std::size_t l = 0; l + 1 < weights.size(); ++l) {
    tr.activations.push_back(
        ((weights[l] * tr.activations.back()).colwise() + biases[l]).array().max(0.0).matrix());
  }
  tr.raw = (weights.back() * tr.activations.back()).row(0).array() + biases.back()(0);
  return tr;
}

Eigen::VectorXd backpropagate(const Network& net, const ForwardTrace& trace,
                              const Eigen::RowVectorXd& output_grad) {
  const auto& weights = net.weights();
  const std::size_t layers = weights.size();
  std::vector<Eigen::MatrixXd> grad_w(layers);
  std::vector<Eigen::VectorXd> grad_b(layers);

  Eigen::MatrixXd delta = output_grad;  // 1 x m
  for (std::size_t l = layers; l-- > 0;) {
    grad_w[l] = delta * trace.activations[l].transpose();
    grad_b[l] = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd mask = (trace.activations[l].array() > 0.0).cast<double>();
      delta = (weights[l].transpose() * delta).cwiseProduct(mask);
    }
  }

  Eigen::VectorXd out(net.parameter_count());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    std::copy(grad_w[l].data(), grad_w[l].data() + grad_w[l].size(), out.data() + off);
    off += grad_w[l].size();
    std::copy(grad_b[l].data(), grad_b[l].data() + grad_b[l].size(), out.data() + off);
    off += grad_b[l].size();
  }
  return out;
}

namespace {

template <typename LossFn>
LossEval pointwise_loss(const Network& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        LossFn&& fn) {
  if (x.cols() != y.size()) throw ConfigError("loss: batch size mismatch");
  if (x.cols() == 0) throw ConfigError("loss: empty batch");
  ForwardTrace tr = forward_trace(net, x);
  const double bound = net.architecture().output_bound;
  const double m = static_cast<double>(x.cols());
  Eigen::RowVectorXd grad_out(x.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const double raw = tr.raw(i);
    const double h = std::clamp(raw, -bound, bound);
    const double u = y(i) - h;
    auto [value, dpred] = fn(u);
    total += value;
    grad_out(i) = (std::abs(raw) <= bound ? dpred : 0.0) / m;
  }
  return {total / m, backpropagate(net, tr, grad_out)};
}

}  // namespace

LossEval entropy_loss(const Network& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                      const ErrorDensity& f) {
  return pointwise_loss(net, x, y, [&f](double u) {
    return std::pair<double, double>(-f.log_density(u), f.log_density_derivative(u));
  });
}

LossEval squared_loss(const Network& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  return pointwise_loss(net, x, y,
                        [](double u) { return std::pair<double, double>(0.5 * u * u, -u); });
}

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'E', 'E', 'D', 'R', 'N', 'E', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ConfigError("checkpoint truncated");
  return value;
}

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open checkpoint for writing: " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_raw(out, kCheckpointVersion);
  const Architecture& arch = net.architecture();
  write_raw(out, static_cast<std::uint32_t>(arch.widths.size()));
  for (int w : arch.widths) write_raw(out, static_cast<std::int32_t>(w));
  write_raw(out, arch.weight_bound);
  write_raw(out, arch.output_bound);
  write_raw(out, static_cast<std::int64_t>(arch.sparsity_budget ? *arch.sparsity_budget : -1));
  Eigen::VectorXd theta = net.theta();
  write_raw(out, static_cast<std::int64_t>(theta.size()));
  out.write(reinterpret_cast<const char*>(theta.data()),
            static_cast<std::streamsize>(sizeof(double) * theta.size()));
  if (!out) throw NumericError("checkpoint write failed: " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ConfigError("not a network checkpoint: " + path.string());
  }
  const auto version = read_raw<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    std::ostringstream msg;
    msg << "unsupported checkpoint version " << version;
    throw ConfigError(msg.str());
  }
  Architecture arch;
  const auto width_count = read_raw<std::uint32_t>(in);
  if (width_count < 2 || width_count > 1u << 20) throw ConfigError("corrupt checkpoint widths");
  arch.widths.resize(width_count);
  for (auto& w : arch.widths) w = read_raw<std::int32_t>(in);
  arch.weight_bound = read_raw<double>(in);
  arch.output_bound = read_raw<double>(in);
  const auto sparsity = read_raw<std::int64_t>(in);
  if (sparsity >= 0) arch.sparsity_budget = sparsity;
  Network net(arch);
  const auto count = read_raw<std::int64_t>(in);
  if (count != net.parameter_count()) throw ConfigError("checkpoint parameter count mismatch");
  Eigen::VectorXd theta(count);
  in.read(reinterpret_cast<char*>(theta.data()),
          static_cast<std::streamsize>(sizeof(double) * count));
  if (!in) throw ConfigError("checkpoint truncated");
  net.set_theta(theta);
  return net;
}

void RateSpec::validate() const {
  if (!(smoothness > 0.0)) throw ConfigError("smoothness must be positive");
  if (!(kappa >= 1.0)) throw ConfigError("kappa must be >= 1");
  if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
  if (!(depth_const > 0.0) || !(width_const > 0.0) || !(sparsity_const > 0.0) ||
      !(bound_const > 0.0)) {
    throw ConfigError("architecture rule constants must be positive");
  }
}

double RateSpec::theory_exponent() const {
  const double e = kappa * smoothness + input_dim;
  return kappa * smoothness / e;
}

nlohmann::json RateSpec::to_json() const {
  return {{"smoothness", smoothness}, {"kappa", kappa},
          {"input_dim", input_dim},   {"depth_const", depth_const},
          {"width_const", width_const}, {"sparsity_const", sparsity_const},
          {"bound_const", bound_const}};
}

RateSpec RateSpec::from_json(const nlohmann::json& j) {
  RateSpec spec;
  try {
    if (j.contains("smoothness")) spec.smoothness = j.at("smoothness").get<double>();
    if (j.contains("kappa")) spec.kappa = j.at("kappa").get<double>();
    if (j.contains("input_dim")) spec.input_dim = j.at("input_dim").get<int>();
    if (j.contains("depth_const")) spec.depth_const = j.at("depth_const").get<double>();
    if (j.contains("width_const")) spec.width_const = j.at("width_const").get<double>();
    if (j.contains("sparsity_const")) spec.sparsity_const = j.at("sparsity_const").get<double>();
    if (j.contains("bound_const")) spec.bound_const = j.at("bound_const").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad rate spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

Architecture holder_architecture(const RateSpec& spec, std::int64_t n, double output_bound) {
  spec.validate();
  if (n < 2) throw ConfigError("architecture rule needs n >= 2");
  const double e = spec.kappa * spec.smoothness + spec.input_dim;
  const double logn = std::log(static_cast<double>(n));
  const double growth = std::pow(static_cast<double>(n), spec.input_dim / e);
  const int layers =
      std::max<int>(1, static_cast<int>(std::ceil(spec.smoothness * spec.depth_const / e * logn)));
  const int width = std::max<int>(1, static_cast<int>(std::ceil(spec.width_const * growth)));
  const auto sparsity = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(
             std::ceil(spec.smoothness * spec.sparsity_const / e * growth * logn)));
  const double bound =
      spec.bound_const *
      std::pow(static_cast<double>(n), 4.0 * (spec.input_dim + spec.smoothness) / e);
  return Architecture::uniform(spec.input_dim, layers, width, bound, output_bound, sparsity);
}

void CompositionSpec::validate() const {
  const std::size_t q1 = actives.size();
  if (q1 == 0) throw ConfigError("composition needs at least one stage");
  if (smoothness.size() != q1 || dims.size() != q1 + 1) {
    throw ConfigError("composition stage counts are inconsistent");
  }
  for (std::size_t i = 0; i < q1; ++i) {
    if (dims[i] < 1) throw ConfigError("composition dims must be >= 1");
    if (actives[i] < 1 || actives[i] > dims[i]) {
      throw ConfigError("active coordinate counts must lie in [1, dims[i]]");
    }
    if (!(smoothness[i] > 0.0)) throw ConfigError("composition smoothness must be positive");
  }
  if (dims.back() < 1) throw ConfigError("composition dims must be >= 1");
}

std::vector<double> CompositionSpec::effective_smoothness() const {
  validate();
  std::vector<double> eff(smoothness.size());
  double tail = 1.0;
  for (std::size_t i = smoothness.size(); i-- > 0;) {
    eff[i] = smoothness[i] * tail;
    tail *= std::min(smoothness[i], 1.0);
  }
  return eff;
}

double composition_rate(const CompositionSpec& spec, std::int64_t n) {
  if (n < 2) throw ConfigError("composition rate needs n >= 2");
  const std::vector<double> eff = spec.effective_smoothness();
  double rate = 0.0;
  for (std::size_t i = 0; i < eff.size(); ++i) {
    const double expo = -2.0 * eff[i] / (2.0 * eff[i] + spec.actives[i]);
    rate = std::max(rate, std::pow(static_cast<double>(n), expo));
  }
  return rate;
}

double covering_log_bound(double hidden_layers, double width, double weight_bound,
                          double sparsity, double delta) {
  if (!(delta > 0.0)) throw ConfigError("covering radius must be positive");
  if (!(hidden_layers >= 1.0) || !(width >= 1.0) || !(sparsity >= 0.0)) {
    throw ConfigError("covering bound needs hidden_layers, width >= 1 and sparsity >= 0");
  }
  const double b = std::max(weight_bound, 1.0);
  const double value =
      2.0 * hidden_layers * (sparsity + 1.0) * std::log(hidden_layers * (width + 1.0) * b / delta);
  return std::max(value, 0.0);
}

}  // namespace meedr
