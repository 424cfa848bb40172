#include "relgraph/nn.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace relgraph::nn {

// ---- ParamStore ---------------------------------------------------------

Tensor ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols, std::vector<double> init) {
  if (params_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  Tensor t = Tensor::param(rows, cols, std::move(init));
  params_.emplace(name, t);
  order_.push_back(name);
  return t;
}

std::vector<double>& ParamStore::add_buffer(const std::string& name, std::vector<double> init) {
  auto [it, inserted] = buffers_.emplace(name, std::move(init));
  if (!inserted) throw std::invalid_argument("ParamStore: duplicate buffer '" + name + "'");
  return it->second;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  return it->second;
}

std::vector<double>& ParamStore::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw std::out_of_range("ParamStore: no buffer '" + name + "'");
  return it->second;
}

const std::vector<double>& ParamStore::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw std::out_of_range("ParamStore: no buffer '" + name + "'");
  return it->second;
}

std::size_t ParamStore::count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) n += t.size();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor copy = t;
    copy.zero_grad();
  }
}

std::vector<double> he_uniform(std::size_t fan_in, std::size_t count, Rng& rng, double gain) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::vector<double> v(count);
  for (double& x : v) x = uniform(rng, -bound, bound);
  return v;
}

// ---- layers ---------------------------------------------------------------

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool bias, double gain)
    : in_(in), out_(out) {
  weight_ = store.add(name + ".weight", in, out, he_uniform(in, in * out, rng, gain));
  if (bias) bias_ = store.add(name + ".bias", 1, out, std::vector<double>(out, 0.0));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = ad::matmul(x, weight_);
  return bias_.defined() ? ad::add_row(y, bias_) : y;
}

SceneNorm::SceneNorm(ParamStore& store, const std::string& name, std::size_t width) : name_(name), width_(width) {
  gamma_ = store.add(name + ".gamma", 1, width, std::vector<double>(width, 1.0));
  beta_ = store.add(name + ".beta", 1, width, std::vector<double>(width, 0.0));
}

Tensor SceneNorm::operator()(const Tensor& x, bool relu) const {
  if (x.cols() != width_) {
    throw ad::ShapeError(name_ + ": expected width " + std::to_string(width_) + ", got " + x.shape_str());
  }
  return ad::batch_norm(x, gamma_, beta_, kEps, relu);
}

Mlp::Mlp(ParamStore& store, const std::string& name, std::size_t in, const std::vector<std::size_t>& widths,
         Rng& rng, bool plain_last)
    : plain_last_(plain_last) {
  if (widths.empty()) throw std::invalid_argument("Mlp '" + name + "': no layers");
  std::size_t prev = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool last_plain = plain_last && i + 1 == widths.size();
    const std::string lname = name + "." + std::to_string(i);
    linears_.emplace_back(store, lname, prev, widths[i], rng, /*bias=*/last_plain, last_plain ? 0.5 : 1.0);
    if (!last_plain) norms_.emplace_back(store, lname + ".norm", widths[i]);
    prev = widths[i];
  }
  out_ = prev;
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < linears_.size(); ++i) {
    if (i < norms_.size()) {
      h = norms_[i](linears_[i](h), /*relu=*/true);
    } else {
      h = linears_[i](h);
    }
  }
  return h;
}

Tensor sinusoidal_embedding(const Tensor& descriptor, std::size_t width) {
  if (width == 0 || width % 2 != 0) {
    throw std::invalid_argument("sinusoidal_embedding: width must be positive and even, got " + std::to_string(width));
  }
  const std::size_t k = descriptor.cols();
  const std::size_t half = width / 2;
  const std::size_t levels = (half + k - 1) / k;
  std::vector<double> freq(k * half, 0.0);
  for (std::size_t c = 0; c < half; ++c) {
    const std::size_t dim = c % k;
    const std::size_t level = c / k;
    const double t = levels > 1 ? static_cast<double>(level) / static_cast<double>(levels - 1) : 0.0;
    freq[dim * half + c] = std::pow(10.0, 1.0 - 3.0 * t);
  }
  Tensor phase = ad::matmul(descriptor, Tensor::from(k, half, std::move(freq)));
  return ad::concat_cols({ad::sin(phase), ad::cos(phase)});
}

// ---- Adam -------------------------------------------------------------------

double scheduled_learning_rate(const AdamConfig& cfg, int epoch) {
  double lr = cfg.learning_rate;
  for (const auto& [at, factor] : cfg.schedule) {
    if (epoch >= at) lr *= factor;
  }
  return lr;
}

void adam_step(ParamStore& store, OptimState& state, const AdamConfig& cfg, int epoch) {
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (ad::checked()) {
    for (const auto& name : store.names()) {
      for (double g : store.get(name).grad()) {
        if (!std::isfinite(g)) throw ad::NonFiniteError("adam_step: non-finite gradient for '" + name + "'");
      }
    }
  }
  state.step += 1;
  const double lr = scheduled_learning_rate(cfg, epoch);
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& name : store.names()) {
    Tensor p = store.get(name);
    auto grad = p.grad();
    auto values = p.mutable_values();
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.size() != values.size()) m.assign(values.size(), 0.0);
    if (v.size() != values.size()) v.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

// ---- checkpoint ---------------------------------------------------------

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

nlohmann::json tensor_entry(std::size_t rows, std::size_t cols, const std::vector<double>& values) {
  return {{"shape", {rows, cols}}, {"data", base64_encode_doubles(values)}};
}

std::vector<double> read_entry(const nlohmann::json& entry, std::size_t expected, const std::string& name) {
  auto values = base64_decode_doubles(entry.at("data").get<std::string>());
  if (values.size() != expected) {
    throw std::runtime_error("checkpoint: '" + name + "' has " + std::to_string(values.size()) +
                             " values, expected " + std::to_string(expected));
  }
  return values;
}

}  // namespace

std::string base64_encode_doubles(const std::vector<double>& values) {
  std::string bytes;
  bytes.reserve(values.size() * 8);
  for (double d : values) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
  }
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    std::uint32_t chunk = static_cast<std::uint8_t>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) chunk |= static_cast<std::uint8_t>(bytes[i + 1]) << 8;
    if (i + 2 < bytes.size()) chunk |= static_cast<std::uint8_t>(bytes[i + 2]);
    out.push_back(kB64[(chunk >> 18) & 63]);
    out.push_back(kB64[(chunk >> 12) & 63]);
    out.push_back(i + 1 < bytes.size() ? kB64[(chunk >> 6) & 63] : '=');
    out.push_back(i + 2 < bytes.size() ? kB64[chunk & 63] : '=');
  }
  return out;
}

std::vector<double> base64_decode_doubles(const std::string& text) {
  std::string bytes;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const int v = b64_value(c);
    if (v < 0) throw std::runtime_error("checkpoint: invalid base64 payload");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      bytes.push_back(static_cast<char>((acc >> bits) & 0xff));
    }
  }
  if (bytes.size() % 8 != 0) throw std::runtime_error("checkpoint: payload is not a float64 array");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t b = 0;
    for (int k = 0; k < 8; ++k) b |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[i * 8 + k])) << (8 * k);
    out[i] = std::bit_cast<double>(b);
  }
  return out;
}

nlohmann::json checkpoint_to_json(const ParamStore& store, const OptimState& state, const nlohmann::json& metadata) {
  nlohmann::json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  doc["byte_order"] = "little";
  doc["metadata"] = metadata;
  nlohmann::json params = nlohmann::json::object();
  nlohmann::json m1 = nlohmann::json::object();
  nlohmann::json m2 = nlohmann::json::object();
  for (const auto& name : store.names()) {
    Tensor t = store.get(name);
    params[name] = tensor_entry(t.rows(), t.cols(), {t.values().begin(), t.values().end()});
    if (auto it = state.first_moment.find(name); it != state.first_moment.end()) {
      m1[name] = tensor_entry(t.rows(), t.cols(), it->second);
    }
    if (auto it = state.second_moment.find(name); it != state.second_moment.end()) {
      m2[name] = tensor_entry(t.rows(), t.cols(), it->second);
    }
  }
  nlohmann::json buffers = nlohmann::json::object();
  for (const auto& [name, values] : store.buffers()) buffers[name] = tensor_entry(1, values.size(), values);
  doc["parameters"] = std::move(params);
  doc["buffers"] = std::move(buffers);
  doc["optimizer"] = {{"step", state.step}, {"first_moment", std::move(m1)}, {"second_moment", std::move(m2)}};
  return doc;
}

nlohmann::json checkpoint_from_json(const nlohmann::json& doc, ParamStore& store, OptimState& state) {
  if (!doc.contains("format_version")) throw std::runtime_error("checkpoint: missing format_version");
  const int version = doc.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format_version " + std::to_string(version));
  }
  const auto& params = doc.at("parameters");
  for (const auto& name : store.names()) {
    if (!params.contains(name)) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    Tensor t = store.get(name);
    auto values = read_entry(params.at(name), t.size(), name);
    std::copy(values.begin(), values.end(), t.mutable_values().begin());
  }
  for (auto& [name, values] : store.buffers()) {
    if (!doc.at("buffers").contains(name)) throw std::runtime_error("checkpoint: missing buffer '" + name + "'");
    values = read_entry(doc.at("buffers").at(name), values.size(), name);
  }
  const auto& opt = doc.at("optimizer");
  state = OptimState{};
  state.step = opt.at("step").get<std::uint64_t>();
  for (const auto& [name, entry] : opt.at("first_moment").items()) {
    state.first_moment[name] = read_entry(entry, store.get(name).size(), name);
  }
  for (const auto& [name, entry] : opt.at("second_moment").items()) {
    state.second_moment[name] = read_entry(entry, store.get(name).size(), name);
  }
  return doc.value("metadata", nlohmann::json::object());
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const OptimState& state,
                     const nlohmann::json& metadata) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out << checkpoint_to_json(store, state, metadata).dump();
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamStore& store, OptimState& state) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path.string());
  return checkpoint_from_json(nlohmann::json::parse(in), store, state);
}

}  // namespace relgraph::nn
