#include "orthoconv/blocks/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "orthoconv/core/errors.hpp"

namespace orthoconv::blocks {

namespace {

std::array<double, 2> unit(std::array<double, 2> v) {
  const double n = std::hypot(v[0], v[1]);
  if (!(n > 0.0) || !std::isfinite(n)) throw ConfigError("householder direction must be non-zero and finite");
  return {v[0] / n, v[1] / n};
}

int pair_count(const FeatureMap& x) {
  if (x.channels() % 2 != 0) throw ShapeError("pairwise activation needs an even channel count");
  return x.channels() / 2;
}

// z if v.z >= 0, else (I - 2 v v^T) z, optionally scaled by `reflect_gain` on the reflected side.
void reflect(double& a, double& b, const std::array<double, 2>& v, double reflect_gain) {
  const double p = v[0] * a + v[1] * b;
  if (p >= 0.0) return;
  a = reflect_gain * (a - 2.0 * p * v[0]);
  b = reflect_gain * (b - 2.0 * p * v[1]);
}

const std::array<double, 2>& direction_for(const std::vector<std::array<double, 2>>& dirs, int pair) {
  if (dirs.empty()) throw ConfigError("householder activation has no directions");
  return dirs[static_cast<std::size_t>(pair) % dirs.size()];
}

}  // namespace

const char* to_string(ActivationType t) {
  switch (t) {
    case ActivationType::abs: return "abs";
    case ActivationType::soft_huber: return "soft_huber";
    case ActivationType::maxmin: return "maxmin";
    case ActivationType::householder: return "householder";
    case ActivationType::householder2: return "householder2";
  }
  return "?";
}

ActivationType activation_from_string(const std::string& name) {
  for (auto t : {ActivationType::abs, ActivationType::soft_huber, ActivationType::maxmin, ActivationType::householder,
                 ActivationType::householder2})
    if (name == to_string(t)) return t;
  throw ConfigError("unknown activation '" + name + "'");
}

ActivationKind ActivationKind::abs() { return {ActivationType::abs, 0.1, {}, {}, false}; }

ActivationKind ActivationKind::soft_huber(double delta) {
  if (!(delta > 0.0)) throw ConfigError("soft_huber needs delta > 0");
  return {ActivationType::soft_huber, delta, {}, {}, false};
}

ActivationKind ActivationKind::maxmin() { return {ActivationType::maxmin, 0.1, {}, {}, false}; }

ActivationKind ActivationKind::householder(std::vector<std::array<double, 2>> v) {
  for (auto& d : v) d = unit(d);
  return {ActivationType::householder, 0.1, std::move(v), {}, false};
}

ActivationKind ActivationKind::householder2(std::vector<std::array<double, 2>> v1,
                                            std::vector<std::array<double, 2>> v2) {
  for (auto& d : v1) d = unit(d);
  for (auto& d : v2) d = unit(d);
  return {ActivationType::householder2, 0.1, std::move(v1), std::move(v2), false};
}

FeatureMap apply_activation(const ActivationKind& kind, const FeatureMap& x) {
  FeatureMap y = x;
  switch (kind.type) {
    case ActivationType::abs:
      for (double& v : y.values()) v = std::abs(v);
      return y;
    case ActivationType::soft_huber:
      if (!(kind.delta > 0.0)) throw ConfigError("soft_huber needs delta > 0");
      for (double& v : y.values()) v = std::sqrt(v * v + kind.delta * kind.delta) - kind.delta;
      return y;
    default:
      break;
  }
  const int half = pair_count(x);
  const double gain = kind.legacy_unnormalized ? std::sqrt(2.0) : 1.0;
  for (int p = 0; p < half; ++p) {
    for (int r = 0; r < x.height(); ++r) {
      for (int c = 0; c < x.width(); ++c) {
        double& a = y(p, r, c);
        double& b = y(p + half, r, c);
        switch (kind.type) {
          case ActivationType::maxmin:
            if (a < b) std::swap(a, b);
            break;
          case ActivationType::householder:
            reflect(a, b, direction_for(kind.directions, p), gain);
            break;
          case ActivationType::householder2:
            reflect(a, b, direction_for(kind.directions, p), gain);
            reflect(a, b, direction_for(kind.directions2, p), gain);
            break;
          default:
            break;
        }
      }
    }
  }
  return y;
}

double distance_to_kinks(const ActivationKind& kind, const FeatureMap& x) {
  double best = std::numeric_limits<double>::infinity();
  switch (kind.type) {
    case ActivationType::soft_huber:
      return best;
    case ActivationType::abs:
      for (double v : x.values()) best = std::min(best, std::abs(v));
      return best;
    default:
      break;
  }
  const int half = pair_count(x);
  for (int p = 0; p < half; ++p) {
    for (int r = 0; r < x.height(); ++r) {
      for (int c = 0; c < x.width(); ++c) {
        double a = x(p, r, c);
        double b = x(p + half, r, c);
        if (kind.type == ActivationType::maxmin) {
          best = std::min(best, std::abs(a - b) / std::sqrt(2.0));
          continue;
        }
        const auto& v1 = direction_for(kind.directions, p);
        best = std::min(best, std::abs(v1[0] * a + v1[1] * b));
        if (kind.type == ActivationType::householder2) {
          reflect(a, b, v1, 1.0);
          const auto& v2 = direction_for(kind.directions2, p);
          best = std::min(best, std::abs(v2[0] * a + v2[1] * b));
        }
      }
    }
  }
  return best;
}

std::vector<FeatureMap> apply_centering(CenteringMode mode, const std::vector<FeatureMap>& batch,
                                        const CenteringState& state_in, CenteringState* state_out) {
  if (batch.empty()) throw ShapeError("centering needs a non-empty batch");
  const auto dims = batch.front().dims();
  for (const auto& x : batch)
    if (x.dims() != dims) throw ShapeError("centering: batch entries differ in shape");
  const int channels = dims[0];
  const std::size_t plane = static_cast<std::size_t>(dims[1]) * dims[2];
  std::vector<FeatureMap> out = batch;

  if (mode == CenteringMode::layer) {
    for (auto& x : out) {
      double mean = 0.0;
      for (double v : x.values()) mean += v;
      mean /= static_cast<double>(x.size());
      for (double& v : x.values()) v -= mean;
    }
    if (state_out) *state_out = state_in;
    return out;
  }

  std::vector<double> running = state_in.running_mean;
  if (running.empty()) running.assign(static_cast<std::size_t>(channels), 0.0);
  if (static_cast<int>(running.size()) != channels) throw ShapeError("centering: running mean has wrong length");

  std::vector<double> mean = running;
  if (state_in.training) {
    for (int c = 0; c < channels; ++c) {
      double s = 0.0;
      for (const auto& x : batch)
        for (std::size_t i = 0; i < plane; ++i) s += x.values()[c * plane + i];
      mean[static_cast<std::size_t>(c)] = s / static_cast<double>(plane * batch.size());
    }
  }
  for (auto& x : out)
    for (int c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) x.values()[c * plane + i] -= mean[static_cast<std::size_t>(c)];

  if (state_out) {
    *state_out = state_in;
    if (state_in.training) {
      state_out->running_mean.resize(static_cast<std::size_t>(channels));
      for (int c = 0; c < channels; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        state_out->running_mean[ci] = (1.0 - state_in.momentum) * running[ci] + state_in.momentum * mean[ci];
      }
    } else {
      state_out->running_mean = running;
    }
  }
  return out;
}

const char* to_string(ResidualType t) {
  switch (t) {
    case ResidualType::concat: return "concat";
    case ResidualType::l2norm: return "l2norm";
    case ResidualType::additive: return "additive";
    case ResidualType::prescaled_additive: return "prescaled_additive";
  }
  return "?";
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

FeatureMap apply_residual(const ResidualKind& kind, const FeatureMap& x, const MapFn& fn) {
  if (!std::isfinite(kind.alpha)) throw ConfigError("residual gate alpha must be finite");
  switch (kind.type) {
    case ResidualType::concat: {
      if (x.channels() % 2 != 0) throw ShapeError("concat residual needs an even channel count");
      const int half = x.channels() / 2;
      const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
      FeatureMap first(half, x.height(), x.width());
      std::copy_n(x.values().begin(), half * plane, first.values().begin());
      const FeatureMap mapped = fn(first);
      if (mapped.dims() != first.dims()) throw ShapeError("concat residual: fn must preserve shape");
      FeatureMap out = x;
      std::copy(mapped.values().begin(), mapped.values().end(), out.values().begin());
      return out;
    }
    case ResidualType::l2norm: {
      if (!(kind.epsilon > 0.0)) throw ConfigError("l2norm residual needs epsilon > 0");
      const FeatureMap f = fn(x);
      if (f.dims() != x.dims()) throw ShapeError("residual: fn must preserve shape");
      FeatureMap out = x;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double a = x.values()[i];
        const double b = f.values()[i];
        out.values()[i] = std::sqrt(0.5 * a * a + 0.5 * b * b + kind.epsilon);
      }
      return out;
    }
    case ResidualType::additive: {
      const double g = sigmoid(kind.alpha);
      FeatureMap f = fn(x);
      if (f.dims() != x.dims()) throw ShapeError("residual: fn must preserve shape");
      f *= 1.0 - g;
      FeatureMap out = x;
      out *= g;
      out += f;
      return out;
    }
    case ResidualType::prescaled_additive: {
      FeatureMap scaled = x;
      scaled *= kind.alpha;
      FeatureMap out = fn(scaled);
      if (out.dims() != x.dims()) throw ShapeError("residual: fn must preserve shape");
      out += x;
      out *= 1.0 / (1.0 + std::abs(kind.alpha));
      return out;
    }
  }
  throw ConfigError("unhandled residual kind");
}

}  // namespace orthoconv::blocks
