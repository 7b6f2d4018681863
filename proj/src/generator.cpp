#include "chaoslab/generator.hpp"

#include <cmath>

#include "chaoslab/errors.hpp"

namespace chaoslab {

double path_tau(std::span<const double> path, int d_dim) {
  double sup = 0.0;
  for (std::size_t i = 0; i < path.size(); i += d_dim) {
    double s = 0.0;
    for (int r = 0; r < d_dim; ++r) s += path[i + r] * path[i + r];
    sup = std::max(sup, s);
  }
  return std::min(std::sqrt(sup), 1.0);
}

LipschitzCoeffs GeneratorSpec::lipschitz(std::size_t K, int d_dim) const {
  const double dd = static_cast<double>(d_dim);
  double r = lin_y * lin_y;
  double th_star = meas * meas;
  if (mode == GenMode::path) r *= dd;  // tau broadcast to every coordinate
  if (measure_mode == MeasureMode::w2ref || mode == GenMode::path) th_star *= dd;
  return LipschitzCoeffs::constant(K, r, lin_z * lin_z, lin_u * lin_u, th_star);
}

namespace {

inline double sat(double x, bool on) { return on ? std::tanh(x) : x; }

inline double measure_term(const GeneratorSpec& g, int r, const MeasureArg& mu) {
  switch (g.measure_mode) {
    case MeasureMode::none: return 0.0;
    case MeasureMode::mean: {
      const double m = mu.mean.size() == 1 ? mu.mean[0]
                                           : mu.mean[static_cast<std::size_t>(r)];
      return sat(m, g.saturating);
    }
    case MeasureMode::w2ref: return mu.w2;
  }
  return 0.0;
}

}  // namespace

void GeneratorSpec::eval_instant(int d_dim, std::span<const double> y,
                                 std::span<const double> zc_rowavg,
                                 std::span<const double> gamma, const MeasureArg& mu,
                                 std::span<double> out) const {
  for (int r = 0; r < d_dim; ++r) {
    double f = level;
    f += lin_y * sat(y[r], saturating);
    if (lin_z != 0.0) f += lin_z * zc_rowavg[r];
    if (lin_u != 0.0) f += lin_u * gamma[r];
    if (meas != 0.0) f += meas * measure_term(*this, r, mu);
    out[r] = f;
  }
}

void GeneratorSpec::eval_path(int d_dim, double tau_y, std::span<const double> zc_rowavg,
                              std::span<const double> gamma, const MeasureArg& mu,
                              std::span<double> out) const {
  for (int r = 0; r < d_dim; ++r) {
    double f = level;
    f += lin_y * tau_y;
    if (lin_z != 0.0) f += lin_z * zc_rowavg[r];
    if (lin_u != 0.0) f += lin_u * gamma[r];
    if (meas != 0.0) f += meas * measure_term(*this, r, mu);
    out[r] = f;
  }
}

namespace {

std::vector<double> parse_args(const std::string& preset, std::size_t open) {
  std::vector<double> args;
  std::string body = preset.substr(open + 1, preset.size() - open - 2);
  std::size_t pos = 0;
  while (pos < body.size()) {
    std::size_t next = body.find(',', pos);
    if (next == std::string::npos) next = body.size();
    args.push_back(std::stod(body.substr(pos, next - pos)));
    pos = next + 1;
  }
  return args;
}

}  // namespace

GeneratorSpec make_generator(const std::string& preset) {
  GeneratorSpec g;
  g.name = preset;
  g.reference = DiscreteLaw::dirac({0.0});
  const std::size_t open = preset.find('(');
  const std::string head = open == std::string::npos ? preset : preset.substr(0, open);
  std::vector<double> args;
  if (open != std::string::npos) {
    if (preset.back() != ')') throw ConfigError("generator preset: missing ')'");
    args = parse_args(preset, open);
  }
  auto arg = [&](std::size_t i, double fallback) {
    return i < args.size() ? args[i] : fallback;
  };
  if (head == "zero") return g;
  if (head == "constant") {
    g.level = arg(0, 1.0);
    return g;
  }
  if (head == "linear") {
    g.lin_y = arg(0, 1.0);
    return g;
  }
  if (head == "mean") {
    g.measure_mode = MeasureMode::mean;
    g.meas = arg(0, 1.0);
    return g;
  }
  if (head == "saturating-mean") {
    g.measure_mode = MeasureMode::mean;
    g.meas = arg(0, 1.0);
    g.saturating = true;
    return g;
  }
  if (head == "w2ref") {
    g.measure_mode = MeasureMode::w2ref;
    g.meas = arg(0, 1.0);
    return g;
  }
  if (head == "path-supmean") {
    g.mode = GenMode::path;
    g.measure_mode = MeasureMode::mean;
    g.lin_y = arg(0, 0.5);
    g.meas = arg(1, 0.5);
    return g;
  }
  throw ConfigError("unknown generator preset: " + preset);
}

}  // namespace chaoslab
