// SPDX-License-Identifier: Apache-2.0
#include "sbd/approximator.hpp"

#include <cmath>
#include <sstream>

#include "sbd/io.hpp"
#include "sbd/rng.hpp"

namespace sbd {

namespace {

constexpr std::string_view kMagic = "sbd-dense-net";
constexpr int kNetFormatVersion = 1;

const char* head_name(HeadKind h) { return h == HeadKind::Policy ? "policy" : "meta-weight"; }

Matrix<double> column(std::span<const double> input) {
  Matrix<double> x(static_cast<Eigen::Index>(input.size()), 1);
  for (std::size_t i = 0; i < input.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = input[i];
  return x;
}

}  // namespace

std::size_t NetShape::layer_offset(std::size_t l) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < l; ++i) off += layer_size(i);
  return off;
}

std::size_t NetShape::parameter_count() const { return layer_offset(depth); }

void NetShape::validate() const {
  if (input_dim == 0) throw ShapeError("network input dimension must be positive");
  if (depth == 0) throw ShapeError("network depth must be at least 1");
  if (depth > 1 && width == 0) throw ShapeError("hidden width must be positive");
  if (head == HeadKind::Policy && num_agents < 1) throw ShapeError("policy head needs agents");
}

void DenseNetParams::validate() const {
  shape.validate();
  if (values.size() != shape.parameter_count())
    throw ShapeError("parameter vector has " + std::to_string(values.size()) + " entries, shape needs " +
                     std::to_string(shape.parameter_count()));
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("non-finite network parameter");
}

DenseNetParams init_deterministic(const NetShape& shape, std::uint64_t seed) {
  shape.validate();
  DenseNetParams p{shape, std::vector<double>(shape.parameter_count())};
  Rng rng(seed, "net-init");
  for (std::size_t l = 0; l < shape.depth; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape.layer_in(l)));
    double* w = p.values.data() + shape.layer_offset(l);
    for (std::size_t i = 0; i < shape.layer_size(l); ++i) w[i] = rng.uniform(-bound, bound);
  }
  return p;
}

DenseNetParams zero_params(const NetShape& shape) {
  shape.validate();
  return {shape, std::vector<double>(shape.parameter_count(), 0.0)};
}

NetOutput forward(const DenseNetParams& params, std::span<const double> input) {
  const NetShape& s = params.shape;
  if (input.size() != s.input_dim)
    throw ShapeError("input dimension " + std::to_string(input.size()) + " does not match network input " +
                     std::to_string(s.input_dim));
  const Matrix<double> raw = forward_raw<double>(s, params.values.data(), column(input), nullptr);
  NetOutput out;
  if (s.head == HeadKind::Policy) {
    const auto head = policy_head<double>(raw, s.num_agents);
    out.agent_probs.assign(head.probs.data(), head.probs.data() + head.probs.size());
    out.alpha = head.alpha(0);
  } else {
    out.lambda = meta_head<double>(raw)(0);
  }
  return out;
}

BackwardResult backward(const DenseNetParams& params, std::span<const double> input,
                        const HeadCotangent& upstream) {
  const NetShape& s = params.shape;
  ForwardCache<double> cache;
  const Matrix<double> raw = forward_raw<double>(s, params.values.data(), column(input), &cache);
  Matrix<double> d_raw;
  if (s.head == HeadKind::Policy) {
    if (upstream.d_agent_probs.size() != s.num_agents)
      throw ShapeError("agent cotangent has the wrong length");
    const auto head = policy_head<double>(raw, s.num_agents);
    Matrix<double> d_probs(static_cast<Eigen::Index>(s.num_agents), 1);
    for (std::size_t a = 0; a < s.num_agents; ++a)
      d_probs(static_cast<Eigen::Index>(a), 0) = upstream.d_agent_probs[a];
    Eigen::Matrix<double, 1, Eigen::Dynamic> d_alpha(1);
    d_alpha(0) = upstream.d_alpha;
    d_raw = policy_head_backward<double>(head, d_probs, d_alpha);
  } else {
    const auto lambda = meta_head<double>(raw);
    Eigen::Matrix<double, 1, Eigen::Dynamic> d_lambda(1);
    d_lambda(0) = upstream.d_lambda;
    d_raw = meta_head_backward<double>(lambda, d_lambda);
  }
  BackwardResult result{{s, std::vector<double>(s.parameter_count(), 0.0)}, {}};
  Matrix<double> d_input;
  backward_raw<double>(s, params.values.data(), cache, std::move(d_raw), result.gradient.values.data(),
                       &d_input);
  result.input_cotangent.assign(d_input.data(), d_input.data() + d_input.size());
  return result;
}

std::string serialize(const DenseNetParams& params) {
  params.validate();
  const NetShape& s = params.shape;
  std::ostringstream out;
  out << kMagic << ' ' << kNetFormatVersion << '\n'
      << "head " << head_name(s.head) << '\n'
      << "input_dim " << s.input_dim << '\n'
      << "width " << s.width << '\n'
      << "depth " << s.depth << '\n'
      << "num_agents " << s.num_agents << '\n'
      << "parameters " << params.values.size() << '\n';
  for (double v : params.values) out << format_double(v) << '\n';
  return out.str();
}

DenseNetParams deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMagic) throw ParseError("not a serialized network");
  if (version != kNetFormatVersion)
    throw UnsupportedVersion("unsupported network format version " + std::to_string(version));

  auto field = [&](const char* name) {
    std::string key;
    if (!(in >> key) || key != name) throw ParseError(std::string("expected field '") + name + "'");
  };
  NetShape s;
  std::string head;
  field("head");
  in >> head;
  if (head == "policy") s.head = HeadKind::Policy;
  else if (head == "meta-weight") s.head = HeadKind::MetaWeight;
  else throw ParseError("unknown head '" + head + "'");
  field("input_dim");
  in >> s.input_dim;
  field("width");
  in >> s.width;
  field("depth");
  in >> s.depth;
  field("num_agents");
  in >> s.num_agents;
  std::size_t count = 0;
  field("parameters");
  if (!(in >> count)) throw ParseError("missing parameter count");
  s.validate();
  if (count != s.parameter_count()) throw ShapeError("parameter count does not match the shape");

  DenseNetParams p{s, std::vector<double>(count)};
  std::string token;
  for (std::size_t i = 0; i < count; ++i) {
    if (!(in >> token)) throw ParseError("truncated parameter list");
    p.values[i] = parse_double(token);
  }
  p.validate();
  return p;
}

void save_params(const DenseNetParams& params, const std::string& path) {
  write_text_file(path, serialize(params));
}

DenseNetParams load_params(const std::string& path) { return deserialize(read_text_file(path)); }

}  // namespace sbd
