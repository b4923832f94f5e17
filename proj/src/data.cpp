#include "meedr/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "meedr/errors.hpp"
#include "meedr/rng.hpp"

namespace meedr {

namespace {

constexpr double kDivergenceGuard = 1e6;

double param_or(const nlohmann::json& params, const char* key, double fallback) {
  if (!params.is_object() || !params.contains(key)) return fallback;
  if (!params.at(key).is_number()) {
    throw ConfigError(std::string("truth parameter '") + key + "' must be a number");
  }
  return params.at(key).get<double>();
}

}  // namespace

TruthFunction::TruthFunction(const std::string& id, const nlohmann::json& params, int input_dim)
    : id_(id), params_(params.is_null() ? nlohmann::json::object() : params),
      input_dim_(input_dim) {
  if (input_dim < 1) throw ConfigError("truth function needs input_dim >= 1");
  if (id_ == "linear") {
    slope_ = param_or(params_, "slope", 0.5);
  } else if (id_ == "tanh") {
    scale_ = param_or(params_, "scale", 1.0);
    slope_ = param_or(params_, "slope", 1.0);
  } else if (id_ == "sinmix") {
    scale_ = param_or(params_, "scale", 0.4);
    frequency_ = param_or(params_, "frequency", 2.0);
  } else if (id_ == "composition") {
    scale_ = param_or(params_, "scale", 0.5);
    if (input_dim < 2) throw ConfigError("composition truth needs input_dim >= 2");
  } else {
    throw ConfigError("unknown truth function: " + id_);
  }
}

double TruthFunction::operator()(const Eigen::VectorXd& x) const {
  if (x.size() != input_dim_) throw ConfigError("truth function: input dimension mismatch");
  if (id_ == "linear") return slope_ * x.mean();
  if (id_ == "tanh") return scale_ * std::tanh(slope_ * x.mean());
  if (id_ == "sinmix") {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) acc += std::sin(frequency_ * x(i));
    return scale_ * acc / static_cast<double>(x.size());
  }
  return scale_ * std::tanh(x(0)) * std::cos(x(x.size() - 1));
}

Eigen::VectorXd TruthFunction::evaluate_rows(const Eigen::MatrixXd& inputs) const {
  Eigen::VectorXd out(inputs.rows());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    out(i) = (*this)(inputs.row(i).transpose());
  }
  return out;
}

double TruthFunction::lipschitz_bound() const {
  if (id_ == "linear") return std::abs(slope_);
  if (id_ == "tanh") return std::abs(scale_ * slope_);
  if (id_ == "sinmix") return std::abs(scale_ * frequency_);
  return 2.0 * std::abs(scale_);
}

void GeneratorSpec::validate() const {
  if (input_dim < 1) throw ConfigError("generator input_dim must be >= 1");
  if (burn_in >= 0 && burn_in < 100 * input_dim) {
    std::ostringstream msg;
    msg << "burn_in must be at least 100 * input_dim = " << 100 * input_dim;
    throw ConfigError(msg.str());
  }
  TruthFunction truth = make_truth();
  make_noise();
  if (mode == GeneratorMode::autoregressive && !(truth.lipschitz_bound() < 1.0)) {
    std::ostringstream msg;
    msg << "autoregressive mode needs a contracting truth (lipschitz bound "
        << truth.lipschitz_bound() << " >= 1)";
    throw ConfigError(msg.str());
  }
}

TruthFunction GeneratorSpec::make_truth() const {
  return TruthFunction(truth_id, truth_params, input_dim);
}

std::unique_ptr<ErrorDensity> GeneratorSpec::make_noise() const {
  return density_from_json(noise);
}

nlohmann::json GeneratorSpec::to_json() const {
  return {{"truth", {{"id", truth_id}, {"params", truth_params}}},
          {"input_dim", input_dim},
          {"mode", mode == GeneratorMode::autoregressive ? "autoregressive" : "exogenous"},
          {"noise", noise},
          {"burn_in", resolved_burn_in()},
          {"seed", seed}};
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec spec;
  try {
    if (j.contains("truth")) {
      const auto& t = j.at("truth");
      spec.truth_id = t.at("id").get<std::string>();
      if (t.contains("params")) spec.truth_params = t.at("params");
    }
    if (j.contains("input_dim")) spec.input_dim = j.at("input_dim").get<int>();
    if (j.contains("mode")) {
      const std::string mode = j.at("mode").get<std::string>();
      if (mode == "autoregressive") {
        spec.mode = GeneratorMode::autoregressive;
      } else if (mode == "exogenous") {
        spec.mode = GeneratorMode::exogenous;
      } else {
        throw ConfigError("unknown generator mode: " + mode);
      }
    }
    if (j.contains("noise")) spec.noise = j.at("noise");
    if (j.contains("burn_in")) spec.burn_in = j.at("burn_in").get<int>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad generator spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

namespace {

SeriesDataset run_chain(const GeneratorSpec& spec, std::int64_t n, std::int64_t burn,
                        Eigen::VectorXd state) {
  const TruthFunction truth = spec.make_truth();
  const std::unique_ptr<ErrorDensity> noise = spec.make_noise();
  Rng rng(spec.seed);
  const int d = spec.input_dim;

  SeriesDataset out;
  out.inputs.resize(n, d);
  out.outputs.resize(n);

  for (std::int64_t t = 0; t < burn + n; ++t) {
    if (spec.mode == GeneratorMode::exogenous) {
      for (int i = 0; i < d; ++i) state(i) = 0.5 * state(i) + rng.normal();
    }
    const double y = truth(state) + noise->sample_one(rng);
    if (!std::isfinite(y) || std::abs(y) > kDivergenceGuard) {
      std::ostringstream msg;
      msg << "generator diverged at step " << t << " (|y| = " << std::abs(y) << ")";
      throw NumericError(msg.str());
    }
    if (t >= burn) {
      out.inputs.row(t - burn) = state.transpose();
      out.outputs(t - burn) = y;
    }
    if (spec.mode == GeneratorMode::autoregressive) {
      for (int i = d - 1; i > 0; --i) state(i) = state(i - 1);
      state(0) = y;
    }
  }
  out.provenance = {{"generator", spec.to_json()}, {"n", n}};
  return out;
}

}  // namespace

SeriesDataset generate(const GeneratorSpec& spec, std::int64_t n) {
  spec.validate();
  if (n < 1) throw ConfigError("sample size must be >= 1");
  return run_chain(spec, n, spec.resolved_burn_in(), Eigen::VectorXd::Zero(spec.input_dim));
}

SeriesDataset generate_from_state(const GeneratorSpec& spec, std::int64_t n,
                                  const Eigen::VectorXd& initial_state) {
  spec.validate();
  if (n < 1) throw ConfigError("sample size must be >= 1");
  if (initial_state.size() != spec.input_dim) {
    throw ConfigError("initial state must have input_dim entries");
  }
  return run_chain(spec, n, 0, initial_state);
}

Eigen::MatrixXd stationary_inputs(const GeneratorSpec& spec, std::int64_t count,
                                  std::uint64_t seed) {
  GeneratorSpec fresh = spec;
  fresh.seed = seed;
  return generate(fresh, count).inputs;
}

std::pair<SeriesDataset, SeriesDataset> split(const SeriesDataset& data, double train_fraction) {
  if (data.size() < 2) throw ConfigError("split needs at least two observations");
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  const std::int64_t n = data.size();
  std::int64_t head = static_cast<std::int64_t>(std::floor(train_fraction * static_cast<double>(n)));
  head = std::max<std::int64_t>(1, std::min(head, n - 1));

  SeriesDataset train;
  train.inputs = data.inputs.topRows(head);
  train.outputs = data.outputs.head(head);
  train.provenance = data.provenance;
  if (train.provenance.is_object()) train.provenance["n"] = head;

  SeriesDataset test;
  test.inputs = data.inputs.bottomRows(n - head);
  test.outputs = data.outputs.tail(n - head);
  test.provenance = data.provenance;
  if (test.provenance.is_object()) test.provenance["n"] = n - head;

  return {std::move(train), std::move(test)};
}

Eigen::VectorXd truth_values(const TruthFunction& truth, const SeriesDataset& data) {
  return truth.evaluate_rows(data.inputs);
}

Eigen::VectorXd truth_values(const SeriesDataset& data) {
  if (!data.provenance.is_object() || !data.provenance.contains("generator")) {
    throw ConfigError("dataset has no generator provenance; cannot resolve the truth");
  }
  GeneratorSpec spec = GeneratorSpec::from_json(data.provenance.at("generator"));
  return truth_values(spec.make_truth(), data);
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

void format_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace

void save_dataset(const SeriesDataset& data, const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw ConfigError("cannot open dataset for writing: " + csv_path.string());
  const int d = data.input_dim();
  std::string line;
  for (int i = 0; i < d; ++i) {
    line += "x" + std::to_string(i) + ",";
  }
  line += "y\n";
  out << line;
  for (Eigen::Index t = 0; t < data.size(); ++t) {
    line.clear();
    for (int i = 0; i < d; ++i) {
      format_double(line, data.inputs(t, i));
      line += ',';
    }
    format_double(line, data.outputs(t));
    line += '\n';
    out << line;
  }
  if (!out) throw NumericError("dataset write failed: " + csv_path.string());

  if (data.provenance.is_object() && !data.provenance.empty()) {
    std::ofstream side(sidecar_path(csv_path));
    if (!side) throw ConfigError("cannot open sidecar for writing: " + sidecar_path(csv_path).string());
    side << data.provenance.dump(2) << '\n';
  }
}

SeriesDataset load_dataset(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw ConfigError("cannot open dataset: " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty dataset file: " + csv_path.string());

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) header.push_back(tok);
  }
  if (header.size() < 2 || header.back() != "y") {
    throw ConfigError("dataset header must be x0,...,y: " + csv_path.string());
  }
  const int d = static_cast<int>(header.size()) - 1;

  std::vector<double> values;
  std::int64_t rows = 0;
  std::int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.c_str();
    for (int i = 0; i <= d; ++i) {
      char* end = nullptr;
      double v = std::strtod(p, &end);
      if (end == p) {
        std::ostringstream msg;
        msg << "bad number at " << csv_path.string() << ":" << line_no;
        throw ConfigError(msg.str());
      }
      values.push_back(v);
      p = end;
      if (i < d) {
        if (*p != ',') {
          std::ostringstream msg;
          msg << "expected " << d + 1 << " columns at " << csv_path.string() << ":" << line_no;
          throw ConfigError(msg.str());
        }
        ++p;
      }
    }
    ++rows;
  }
  if (rows == 0) throw ConfigError("dataset has no rows: " + csv_path.string());

  SeriesDataset data;
  data.inputs.resize(rows, d);
  data.outputs.resize(rows);
  for (std::int64_t t = 0; t < rows; ++t) {
    for (int i = 0; i < d; ++i) data.inputs(t, i) = values[static_cast<std::size_t>(t * (d + 1) + i)];
    data.outputs(t) = values[static_cast<std::size_t>(t * (d + 1) + d)];
  }

  std::ifstream side(sidecar_path(csv_path));
  if (side) {
    try {
      side >> data.provenance;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad sidecar JSON: ") + e.what());
    }
  }
  return data;
}

}  // namespace meedr
