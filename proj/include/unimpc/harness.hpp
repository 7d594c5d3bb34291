#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "unimpc/cart_pendulum_ocp.hpp"
#include "unimpc/engine.hpp"
#include "unimpc/models/single_track.hpp"
#include "unimpc/mpcc.hpp"

namespace unimpc {

/// Invalid or unreadable run configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Benchmark { CartPendulum, Mpcc };

/// Anchor choice as configured; `Optimal` uses a per-sample converged SQP reference.
enum class AnchorChoice { Zero, ConstantPoint, MeasuredStateLastInput, PreviousIterate, Optimal };

struct PolicyConfig {
  SensitivityPolicy::Kind sensitivity = SensitivityPolicy::Kind::Linearize;
  QuadratureRule::Kind quadrature = QuadratureRule::Kind::Rectangular;
  int n_int = 20;
  AnchorChoice anchors = AnchorChoice::PreviousIterate;
  std::vector<double> anchor_x;  // ConstantPoint; empty means drawn from the box with the seed
  std::vector<double> anchor_u;
  HessianPolicy::Kind hessian = HessianPolicy::Kind::GaussNewton;
  Termination::Kind termination = Termination::Kind::SchedulingDelta;
  double eps = 1e-6;
  int iterations = 10;  // FixedIterations
  int max_outer = 100;
  IterationMode mode = IterationMode::FullConvergence;
  bool shift = true;
  std::vector<int> zero_order;  // z indices; empty disables the zero-order scheme
  ZeroOrderPartition::Propagation propagation = ZeroOrderPartition::Propagation::LinearRollout;
  double reference_eps = 1e-10;  // KKT tolerance of the optimal-anchor reference solve
};

struct MpccConfig {
  std::string track = "data/oval_track.csv";  // relative to the config file
  bool closed = true;
  Track::Interpolation interpolation = Track::Interpolation::PiecewiseLinear;
  double start_progress = 0.0;
  double start_speed = 1.0;
  int laps = 1;
  SingleTrackParams car;
  MpccWeights weights;
  MpccLimits limits;
};

struct RunConfig {
  std::string name = "run";
  Benchmark benchmark = Benchmark::CartPendulum;
  int steps = 80;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  double Ts = 0.01;
  int N = 20;
  int substeps = 1;
  PolicyConfig policy;
  CartPendulumSetup cart;
  MpccConfig mpcc;
  std::filesystem::path base_dir = ".";  // not serialized

  int nx() const { return benchmark == Benchmark::CartPendulum ? 4 : SingleTrackModel::kNx; }
  int nu() const { return benchmark == Benchmark::CartPendulum ? 1 : kMpccNu; }

  std::filesystem::path track_path() const {
    const std::filesystem::path p(mpcc.track);
    return p.is_absolute() ? p : base_dir / p;
  }

  void validate() const;
};

namespace detail {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

inline constexpr EnumName<Benchmark> kBenchmarks[] = {{Benchmark::CartPendulum, "cart_pendulum"},
                                                      {Benchmark::Mpcc, "mpcc"}};
inline constexpr EnumName<SensitivityPolicy::Kind> kSensitivities[] = {
    {SensitivityPolicy::Kind::Linearize, "linearize"}, {SensitivityPolicy::Kind::FtcQuadrature, "ftc"}};
inline constexpr EnumName<QuadratureRule::Kind> kQuadratures[] = {
    {QuadratureRule::Kind::Rectangular, "rectangular"}, {QuadratureRule::Kind::GaussLegendre, "gauss_legendre"}};
inline constexpr EnumName<AnchorChoice> kAnchors[] = {
    {AnchorChoice::Zero, "zero"},
    {AnchorChoice::ConstantPoint, "constant_point"},
    {AnchorChoice::MeasuredStateLastInput, "measured_state_last_input"},
    {AnchorChoice::PreviousIterate, "previous_iterate"},
    {AnchorChoice::Optimal, "optimal"}};
inline constexpr EnumName<HessianPolicy::Kind> kHessians[] = {{HessianPolicy::Kind::GaussNewton, "gauss_newton"},
                                                              {HessianPolicy::Kind::ExactLagrangian, "exact"}};
inline constexpr EnumName<Termination::Kind> kTerminations[] = {{Termination::Kind::KktResidual, "kkt"},
                                                                {Termination::Kind::SchedulingDelta, "scheduling"},
                                                                {Termination::Kind::FixedIterations, "fixed"}};
inline constexpr EnumName<IterationMode> kModes[] = {{IterationMode::FullConvergence, "full"},
                                                     {IterationMode::RTI, "rti"}};
inline constexpr EnumName<ZeroOrderPartition::Propagation> kPropagations[] = {
    {ZeroOrderPartition::Propagation::LinearRollout, "linear"},
    {ZeroOrderPartition::Propagation::NonlinearRollout, "nonlinear"}};
inline constexpr EnumName<Track::Interpolation> kInterpolations[] = {
    {Track::Interpolation::PiecewiseLinear, "linear"}, {Track::Interpolation::CubicSpline, "spline"}};

template <typename E, std::size_t K>
const char* enum_name(const EnumName<E> (&table)[K], E v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  return "?";
}

template <typename E, std::size_t K>
E parse_enum(const EnumName<E> (&table)[K], const std::string& key, const std::string& v) {
  for (const auto& e : table)
    if (v == e.name) return e.value;
  std::string allowed;
  for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
  throw ConfigError(fmt::format("{}: unknown value '{}' (expected one of: {})", key, v, allowed));
}

inline std::string trim(std::string v) {
  v.erase(0, v.find_first_not_of(" \t\r\n"));
  v.erase(v.find_last_not_of(" \t\r\n") + 1);
  return v;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || trim(v.substr(pos)).size() > 0) throw ConfigError(fmt::format("{}: '{}' is not a number", key, v));
  return d;
}

inline long long parse_integer(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long n = 0;
  try {
    n = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || trim(v.substr(pos)).size() > 0) throw ConfigError(fmt::format("{}: '{}' is not an integer", key, v));
  return n;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, v));
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  return out;
}

inline std::string format_double(double v) { return fmt::format("{}", v); }

template <typename Range>
std::string format_list(const Range& r) {
  std::string s;
  for (const auto& v : r) s += (s.empty() ? "" : ",") + fmt::format("{}", v);
  return s;
}

inline std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

inline Vec to_vec(const std::vector<double>& v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

/// Typed access to an INI tree that remembers which keys were read.
class IniReader {
 public:
  explicit IniReader(const boost::property_tree::ptree& pt) : pt_(pt) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    used_.push_back(section + "." + key);
    const auto sec = pt_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return trim(*v);
  }

  void get(const std::string& sec, const std::string& key, double& out) {
    if (auto v = raw(sec, key)) out = parse_double(sec + "." + key, *v);
  }
  void get(const std::string& sec, const std::string& key, int& out) {
    if (auto v = raw(sec, key)) out = static_cast<int>(parse_integer(sec + "." + key, *v));
  }
  void get(const std::string& sec, const std::string& key, std::uint64_t& out) {
    if (auto v = raw(sec, key)) {
      const long long n = parse_integer(sec + "." + key, *v);
      if (n < 0) throw ConfigError(sec + "." + key + ": must be nonnegative");
      out = static_cast<std::uint64_t>(n);
    }
  }
  void get(const std::string& sec, const std::string& key, bool& out) {
    if (auto v = raw(sec, key)) out = parse_bool(sec + "." + key, *v);
  }
  void get(const std::string& sec, const std::string& key, std::string& out) {
    if (auto v = raw(sec, key)) out = *v;
  }
  void get(const std::string& sec, const std::string& key, std::vector<double>& out) {
    if (auto v = raw(sec, key)) {
      out.clear();
      for (const auto& c : split_list(*v)) out.push_back(parse_double(sec + "." + key, c));
    }
  }
  void get(const std::string& sec, const std::string& key, std::vector<int>& out) {
    if (auto v = raw(sec, key)) {
      out.clear();
      for (const auto& c : split_list(*v)) out.push_back(static_cast<int>(parse_integer(sec + "." + key, c)));
    }
  }
  void get(const std::string& sec, const std::string& key, Vec& out) {
    if (raw(sec, key)) {
      std::vector<double> v;
      get(sec, key, v);
      out = to_vec(v);
    }
  }
  template <typename E, std::size_t K>
  void get(const std::string& sec, const std::string& key, E& out, const EnumName<E> (&table)[K]) {
    if (auto v = raw(sec, key)) out = parse_enum(table, sec + "." + key, *v);
  }

  void reject_unknown() const {
    for (const auto& [sec, child] : pt_) {
      if (child.empty() && !child.data().empty())
        throw ConfigError(fmt::format("key '{}' outside of any section", sec));
      for (const auto& [key, value] : child) {
        (void)value;
        const std::string full = sec + "." + key;
        if (std::find(used_.begin(), used_.end(), full) == used_.end())
          throw ConfigError(fmt::format("unknown config key '{}'", full));
      }
    }
  }

 private:
  const boost::property_tree::ptree& pt_;
  std::vector<std::string> used_;
};

/// Visits every serialized field. `io` is either a reader or a writer.
template <typename IO>
void visit_config(IO& io, RunConfig& c) {
  io.get("run", "name", c.name);
  io.get("run", "benchmark", c.benchmark, kBenchmarks);
  io.get("run", "steps", c.steps);
  io.get("run", "seed", c.seed);
  io.get("run", "output_dir", c.output_dir);

  io.get("model", "Ts", c.Ts);
  io.get("model", "N", c.N);
  io.get("model", "substeps", c.substeps);

  PolicyConfig& p = c.policy;
  io.get("policy", "sensitivity", p.sensitivity, kSensitivities);
  io.get("policy", "quadrature", p.quadrature, kQuadratures);
  io.get("policy", "n_int", p.n_int);
  io.get("policy", "anchors", p.anchors, kAnchors);
  io.get("policy", "anchor_x", p.anchor_x);
  io.get("policy", "anchor_u", p.anchor_u);
  io.get("policy", "hessian", p.hessian, kHessians);
  io.get("policy", "termination", p.termination, kTerminations);
  io.get("policy", "eps", p.eps);
  io.get("policy", "iterations", p.iterations);
  io.get("policy", "max_outer", p.max_outer);
  io.get("policy", "mode", p.mode, kModes);
  io.get("policy", "shift", p.shift);
  io.get("policy", "zero_order", p.zero_order);
  io.get("policy", "propagation", p.propagation, kPropagations);
  io.get("policy", "reference_eps", p.reference_eps);

  CartPendulumSetup& cp = c.cart;
  io.get("cart_pendulum", "cart_mass", cp.params.cart_mass);
  io.get("cart_pendulum", "pole_mass", cp.params.pole_mass);
  io.get("cart_pendulum", "length", cp.params.length);
  io.get("cart_pendulum", "gravity", cp.params.gravity);
  io.get("cart_pendulum", "q", cp.Q_diag);
  io.get("cart_pendulum", "r", cp.R);
  io.get("cart_pendulum", "w", cp.W_diag);
  io.get("cart_pendulum", "x_lb", cp.x_lb);
  io.get("cart_pendulum", "x_ub", cp.x_ub);
  io.get("cart_pendulum", "u_max", cp.u_max);
  io.get("cart_pendulum", "x0", cp.x0);

  MpccConfig& m = c.mpcc;
  io.get("mpcc", "track", m.track);
  io.get("mpcc", "closed", m.closed);
  io.get("mpcc", "interpolation", m.interpolation, kInterpolations);
  io.get("mpcc", "start_progress", m.start_progress);
  io.get("mpcc", "start_speed", m.start_speed);
  io.get("mpcc", "laps", m.laps);
  io.get("mpcc", "q_lag", m.weights.q_lag);
  io.get("mpcc", "q_contour", m.weights.q_contour);
  io.get("mpcc", "r_motor_rate", m.weights.r_motor_rate);
  io.get("mpcc", "r_steer_rate", m.weights.r_steer_rate);
  io.get("mpcc", "r_progress_rate", m.weights.r_progress_rate);
  io.get("mpcc", "progress_reward", m.weights.progress_reward);
  io.get("mpcc", "slack_linear", m.weights.slack_linear);
  io.get("mpcc", "slack_quadratic", m.weights.slack_quadratic);
  io.get("mpcc", "motor_min", m.limits.motor_min);
  io.get("mpcc", "motor_max", m.limits.motor_max);
  io.get("mpcc", "steer_max", m.limits.steer_max);
  io.get("mpcc", "motor_rate_max", m.limits.motor_rate_max);
  io.get("mpcc", "steer_rate_max", m.limits.steer_rate_max);
  io.get("mpcc", "progress_rate_max", m.limits.progress_rate_max);
  io.get("mpcc", "tightening", m.limits.tightening);

  SingleTrackParams& car = m.car;
  io.get("single_track", "mass", car.mass);
  io.get("single_track", "inertia_z", car.inertia_z);
  io.get("single_track", "l_front", car.l_front);
  io.get("single_track", "l_rear", car.l_rear);
  io.get("single_track", "B_front", car.B_front);
  io.get("single_track", "C_front", car.C_front);
  io.get("single_track", "D_front", car.D_front);
  io.get("single_track", "B_rear", car.B_rear);
  io.get("single_track", "C_rear", car.C_rear);
  io.get("single_track", "D_rear", car.D_rear);
  io.get("single_track", "c1", car.c1);
  io.get("single_track", "c2", car.c2);
  io.get("single_track", "c3", car.c3);
  io.get("single_track", "c4", car.c4);
  io.get("single_track", "v_reg", car.v_reg);
}

/// Writes fields into an INI tree; only the active benchmark's sections are emitted.
class IniWriter {
 public:
  explicit IniWriter(Benchmark b) : benchmark_(b) {}

  boost::property_tree::ptree pt;

  void get(const std::string& sec, const std::string& key, double v) { put(sec, key, format_double(v)); }
  void get(const std::string& sec, const std::string& key, int v) { put(sec, key, std::to_string(v)); }
  void get(const std::string& sec, const std::string& key, std::uint64_t v) { put(sec, key, std::to_string(v)); }
  void get(const std::string& sec, const std::string& key, bool v) { put(sec, key, v ? "true" : "false"); }
  void get(const std::string& sec, const std::string& key, const std::string& v) { put(sec, key, v); }
  void get(const std::string& sec, const std::string& key, const std::vector<double>& v) {
    put(sec, key, format_list(v));
  }
  void get(const std::string& sec, const std::string& key, const std::vector<int>& v) { put(sec, key, format_list(v)); }
  void get(const std::string& sec, const std::string& key, const Vec& v) { put(sec, key, format_list(to_std(v))); }
  template <typename E, std::size_t K>
  void get(const std::string& sec, const std::string& key, E v, const EnumName<E> (&table)[K]) {
    put(sec, key, enum_name(table, v));
  }

 private:
  void put(const std::string& sec, const std::string& key, const std::string& v) {
    const bool cart = sec == "cart_pendulum";
    const bool car = sec == "mpcc" || sec == "single_track";
    if ((cart && benchmark_ != Benchmark::CartPendulum) || (car && benchmark_ != Benchmark::Mpcc)) return;
    pt.put(boost::property_tree::ptree::path_type(sec + "." + key, '.'), v);
  }

  Benchmark benchmark_;
};

}  // namespace detail

inline const char* to_string(Benchmark b) { return detail::enum_name(detail::kBenchmarks, b); }
inline const char* to_string(AnchorChoice a) { return detail::enum_name(detail::kAnchors, a); }

inline void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  check(!name.empty() && name.find_first_of("/\\,\"") == std::string::npos,
        "run.name must be non-empty and free of '/', '\\', ',' and '\"'");
  check(steps >= 1, "run.steps must be >= 1");
  check(Ts > 0.0 && std::isfinite(Ts), "model.Ts must be positive");
  check(N >= 1, "model.N must be >= 1");
  check(substeps >= 1, "model.substeps must be >= 1");
  const PolicyConfig& p = policy;
  check(p.n_int >= 1, "policy.n_int must be >= 1");
  check(p.eps > 0.0, "policy.eps must be positive");
  check(p.iterations >= 1, "policy.iterations must be >= 1");
  check(p.max_outer >= 1, "policy.max_outer must be >= 1");
  check(p.reference_eps > 0.0, "policy.reference_eps must be positive");
  const bool fixed_anchor = p.anchors != AnchorChoice::PreviousIterate;
  check(!fixed_anchor || p.sensitivity == SensitivityPolicy::Kind::FtcQuadrature,
        "policy.anchors other than previous_iterate require sensitivity = ftc");
  if (!p.anchor_x.empty() || !p.anchor_u.empty())
    check(static_cast<int>(p.anchor_x.size()) == nx() && static_cast<int>(p.anchor_u.size()) == nu(),
          fmt::format("policy.anchor_x / anchor_u must have {} and {} entries", nx(), nu()));
  if (p.anchors == AnchorChoice::ConstantPoint && benchmark == Benchmark::Mpcc)
    check(!p.anchor_x.empty(), "policy.anchors = constant_point on mpcc needs anchor_x and anchor_u");
  check(p.mode != IterationMode::RTI || p.anchors != AnchorChoice::Optimal,
        "policy.anchors = optimal is not available in rti mode");
  std::vector<int> seen(nx(), 0);
  for (int z : p.zero_order) {
    check(z >= 0 && z < nx(), fmt::format("policy.zero_order: index {} out of range [0, {})", z, nx()));
    check(++seen[z] == 1, "policy.zero_order: duplicate index");
  }
  check(static_cast<int>(p.zero_order.size()) < nx(), "policy.zero_order must leave at least one QP state");

  if (benchmark == Benchmark::CartPendulum) {
    const CartPendulumSetup& c = cart;
    check(c.params.cart_mass > 0 && c.params.pole_mass > 0 && c.params.length > 0 && c.params.gravity > 0,
          "cart_pendulum: physical parameters must be positive");
    check(c.Q_diag.size() == 4 && c.W_diag.size() == 4 && c.x_lb.size() == 4 && c.x_ub.size() == 4 &&
              c.x0.size() == 4,
          "cart_pendulum: q, w, x_lb, x_ub and x0 need 4 entries");
    check(c.Q_diag.minCoeff() >= 0 && c.W_diag.minCoeff() >= 0 && c.R > 0, "cart_pendulum: weights out of range");
    check((c.x_lb.array() < c.x_ub.array()).all(), "cart_pendulum: x_lb must be below x_ub");
    check(c.u_max > 0, "cart_pendulum: u_max must be positive");
  } else {
    const MpccConfig& m = mpcc;
    check(std::filesystem::exists(track_path()), "mpcc.track: file '" + track_path().string() + "' does not exist");
    check(m.laps >= 1, "mpcc.laps must be >= 1");
    check(m.start_speed >= 0.0, "mpcc.start_speed must be nonnegative");
    try {
      m.weights.validate();
    } catch (const ContractError& e) {
      throw ConfigError(std::string("mpcc: ") + e.what());
    }
    const MpccLimits& l = m.limits;
    check(l.motor_min < l.motor_max && l.steer_max > 0 && l.motor_rate_max > 0 && l.steer_rate_max > 0 &&
              l.progress_rate_max > 0 && l.tightening >= 0,
          "mpcc: limits out of range");
    check(m.car.mass > 0 && m.car.inertia_z > 0 && m.car.l_front > 0 && m.car.l_rear > 0,
          "single_track: physical parameters must be positive");
  }
}

/// Parses INI text; `base_dir` anchors relative file paths.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".") {
  boost::property_tree::ptree pt;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("malformed config (line {}): {}", e.line(), e.message()));
  }
  RunConfig c;
  c.base_dir = base_dir;
  detail::IniReader reader(pt);
  detail::visit_config(reader, c);
  reader.reject_unknown();
  const std::vector<std::string> inactive = c.benchmark == Benchmark::CartPendulum
                                                ? std::vector<std::string>{"mpcc", "single_track"}
                                                : std::vector<std::string>{"cart_pendulum"};
  for (const auto& sec : inactive)
    if (pt.get_child_optional(sec))
      throw ConfigError(fmt::format("section [{}] does not apply to benchmark '{}'", sec,
                                    detail::enum_name(detail::kBenchmarks, c.benchmark)));
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

inline std::string config_to_string(const RunConfig& cfg) {
  detail::IniWriter w(cfg.benchmark);
  RunConfig copy = cfg;
  detail::visit_config(w, copy);
  std::ostringstream out;
  boost::property_tree::ini_parser::write_ini(out, w.pt);
  return out.str();
}

inline void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file '" + path.string() + "'");
  out << config_to_string(cfg);
}

/// Builds the engine policy. ConstantPoint anchors without explicit values are drawn from the box.
inline IterationPolicy make_policy(const RunConfig& cfg) {
  const PolicyConfig& p = cfg.policy;
  IterationPolicy pol;
  if (p.sensitivity == SensitivityPolicy::Kind::FtcQuadrature)
    pol.sensitivity = SensitivityPolicy::ftc(p.quadrature == QuadratureRule::Kind::Rectangular
                                                 ? QuadratureRule::rectangular(p.n_int)
                                                 : QuadratureRule::gauss_legendre(p.n_int));
  switch (p.anchors) {
    case AnchorChoice::Zero: pol.anchors = AnchorPolicy::zero(); break;
    case AnchorChoice::MeasuredStateLastInput: pol.anchors = AnchorPolicy::measured_state_last_input(); break;
    case AnchorChoice::PreviousIterate: pol.anchors = AnchorPolicy::previous_iterate(); break;
    case AnchorChoice::Optimal: pol.anchors = AnchorPolicy::external({}, {}); break;
    case AnchorChoice::ConstantPoint: {
      if (!p.anchor_x.empty()) {
        pol.anchors = AnchorPolicy::constant_point(detail::to_vec(p.anchor_x), detail::to_vec(p.anchor_u));
      } else {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const CartPendulumSetup& c = cfg.cart;
        Vec x(4);
        for (int i = 0; i < 4; ++i) x(i) = c.x_lb(i) + unit(rng) * (c.x_ub(i) - c.x_lb(i));
        const Vec u = Vec::Constant(1, -c.u_max + 2.0 * c.u_max * unit(rng));
        pol.anchors = AnchorPolicy::constant_point(x, u);
      }
      break;
    }
  }
  pol.hessian.kind = p.hessian;
  switch (p.termination) {
    case Termination::Kind::KktResidual: pol.termination = Termination::kkt(p.eps); break;
    case Termination::Kind::SchedulingDelta: pol.termination = Termination::scheduling(p.eps); break;
    case Termination::Kind::FixedIterations: pol.termination = Termination::fixed(p.iterations); break;
  }
  pol.max_outer = p.max_outer;
  pol.mode = p.mode;
  pol.shift = p.shift;
  if (!p.zero_order.empty()) {
    ZeroOrderPartition part;
    part.propagation = p.propagation;
    for (int i = 0; i < cfg.nx(); ++i) {
      if (std::find(p.zero_order.begin(), p.zero_order.end(), i) != p.zero_order.end())
        part.z_idx.push_back(i);
      else
        part.y_idx.push_back(i);
    }
    pol.zero_order = part;
  }
  return pol;
}

/// The optimal control problem of the configured benchmark at its initial state.
struct BenchmarkProblem {
  OcpProblem ocp;
  Trajectory init;
  std::shared_ptr<const Track> track;  // Mpcc only
};

inline BenchmarkProblem make_benchmark(const RunConfig& cfg) {
  BenchmarkProblem b;
  if (cfg.benchmark == Benchmark::CartPendulum) {
    CartPendulumSetup s = cfg.cart;
    s.Ts = cfg.Ts;
    s.N = cfg.N;
    s.substeps = cfg.substeps;
    b.ocp = make_cart_pendulum_ocp(s);
    b.init = b.ocp.cold_start();
    return b;
  }
  const MpccConfig& m = cfg.mpcc;
  b.track = std::make_shared<const Track>(Track::load_csv(cfg.track_path().string(), m.closed, m.interpolation));
  const ProjectedPoint p = project_progress(*b.track, m.start_progress);
  Vec x = Vec::Zero(SingleTrackModel::kNx);
  x(SingleTrackModel::kPx) = p.point.x();
  x(SingleTrackModel::kPy) = p.point.y();
  x(SingleTrackModel::kPsi) = std::atan2(p.tangent.y(), p.tangent.x());
  x(SingleTrackModel::kVx) = m.start_speed;
  x(SingleTrackModel::kProgress) = m.start_progress;
  b.ocp = build_mpcc_ocp(SingleTrackModel{m.car}, b.track, m.weights, m.limits, cfg.N, cfg.Ts, x, cfg.substeps);
  b.init = mpcc_initial_guess(b.ocp);
  return b;
}

struct SampleRecord {
  int k = 0;
  Vec x;  // state at time k
  Vec u;  // applied input
  double cost = 0.0;       // NLP cost of the returned trajectory
  double violation = 0.0;  // max(0, h(x_k, u_k))
  int n_it = 0;
  SolveStatus status = SolveStatus::Converged;
  double r_before = 0.0;  // combined KKT residual of the initial iterate
  double r_after = 0.0;   // combined KKT residual of the returned iterate
  IterationTrace trace;
};

struct Aggregates {
  int samples = 0;
  double n_it_mean = 0.0;
  double delta_r_avg = 0.0;  // mean of r_after / r_before
  double r_avg = 0.0;        // mean of r_after
  double max_violation = 0.0;
};

/// Aggregates as pure functions of the per-sample rows.
inline Aggregates aggregate(const std::vector<SampleRecord>& samples) {
  Aggregates a;
  a.samples = static_cast<int>(samples.size());
  if (samples.empty()) return a;
  int n_ratio = 0;
  for (const auto& s : samples) {
    a.n_it_mean += s.n_it;
    a.r_avg += s.r_after;
    if (s.r_before > 0.0) {
      a.delta_r_avg += s.r_after / s.r_before;
      ++n_ratio;
    }
    a.max_violation = std::max(a.max_violation, s.violation);
  }
  a.n_it_mean /= a.samples;
  a.r_avg /= a.samples;
  a.delta_r_avg = n_ratio > 0 ? a.delta_r_avg / n_ratio : 0.0;
  return a;
}

struct RunReport {
  RunConfig config;
  std::vector<SampleRecord> samples;
  Aggregates agg;
  bool failed = false;
  int fail_step = -1;
  std::string diagnostic;
  bool lap_completed = false;
  Vec final_state;
};

/**
 * Closed-loop simulation with the prediction model as plant. Each sample
 * solves the OCP (or performs one RTI step), applies the first input, and
 * warm-starts the next sample from the shifted solution.
 */
inline RunReport run_closed_loop(const RunConfig& cfg) {
  cfg.validate();
  RunReport rep;
  rep.config = cfg;
  BenchmarkProblem bp = make_benchmark(cfg);
  OcpProblem& ocp = bp.ocp;
  const IterationPolicy policy = make_policy(cfg);
  const IterationPolicy reference_policy = [&] {
    IterationPolicy p = IterationPolicy::sqp(Termination::kkt(cfg.policy.reference_eps));
    p.hessian = policy.hessian;
    p.max_outer = std::max(policy.max_outer, 100);
    return p;
  }();
  const bool optimal = cfg.policy.anchors == AnchorChoice::Optimal;
  const bool mpcc = cfg.benchmark == Benchmark::Mpcc;
  const double theta_goal =
      mpcc ? cfg.mpcc.start_progress + cfg.mpcc.laps * bp.track->length() : std::numeric_limits<double>::infinity();

  Vec x = ocp.x0;
  Vec u_prev = Vec::Zero(ocp.nu());
  Trajectory warm = bp.init;
  Trajectory ref_warm = bp.init;
  auto fail = [&](int k, const std::string& why) {
    rep.failed = true;
    rep.fail_step = k;
    rep.diagnostic = why;
  };

  for (int k = 0; k < cfg.steps; ++k) {
    ocp.x0 = x;
    AnchorContext ctx{k, u_prev, nullptr};
    SampleRecord rec;
    rec.k = k;
    rec.x = x;
    Trajectory sol;
    try {
      std::optional<SolveResult> ref;
      if (optimal) {
        ref = solve_ocp(ocp, ref_warm, reference_policy);
        if (ref->status != SolveStatus::Converged) {
          fail(k, "optimal-anchor reference solve did not converge: " + std::string(to_string(ref->status)) + " " +
                      ref->diagnostic);
          break;
        }
        ctx.reference = &ref->traj;
        warm = ref->traj;
        ref_warm = shift_trajectory(ref->traj);
      }
      if (policy.mode == IterationMode::RTI) {
        RtiResult r = rti_step(ocp, warm, policy, ctx);
        if (!r.ok) {
          fail(k, r.diagnostic);
          break;
        }
        rec.trace = {r.row};
        rec.n_it = 1;
        rec.status = SolveStatus::Converged;
        rec.r_before = r.r_before;
        rec.r_after = r.r_after;
        sol = std::move(r.solution);
        warm = std::move(r.next);
      } else {
        const Trajectory start = pin_initial_state(ocp, warm);
        rec.r_before = nlp_kkt_residual(ocp, start).combined;
        SolveResult r = solve_ocp(ocp, start, policy, ctx);
        if (r.status == SolveStatus::Aborted) {
          fail(k, r.diagnostic);
          break;
        }
        rec.trace = std::move(r.trace);
        rec.n_it = static_cast<int>(rec.trace.size());
        rec.status = r.status;
        rec.r_after = rec.trace.empty() ? rec.r_before : rec.trace.back().kkt.combined;
        sol = std::move(r.traj);
        warm = policy.shift ? shift_trajectory(sol) : sol;
      }
    } catch (const NumericError& e) {
      fail(k, e.what());
      break;
    }
    rec.u = sol.U[0];
    rec.cost = eval_nlp_cost(ocp, sol.X, sol.U);
    if (ocp.nh() > 0) rec.violation = std::max(0.0, ocp.constraints(x, rec.u, 0).maxCoeff());
    rep.samples.push_back(std::move(rec));
    x = ocp.model.f(x, sol.U[0], 0);
    u_prev = sol.U[0];
    if (!x.allFinite()) {
      fail(k, "plant state became non-finite");
      break;
    }
    if (mpcc && x(SingleTrackModel::kProgress) >= theta_goal) {
      rep.lap_completed = true;
      break;
    }
  }
  rep.final_state = x;
  rep.agg = aggregate(rep.samples);
  return rep;
}

struct Comparison {
  std::vector<RunReport> reports;
};

/// Runs the configurations in order; they must share benchmark and horizon.
inline Comparison compare_policies(const std::vector<RunConfig>& cfgs) {
  if (cfgs.empty()) throw ConfigError("compare: no configurations given");
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const RunConfig& c = cfgs[i];
    if (c.benchmark != cfgs[0].benchmark || c.N != cfgs[0].N)
      throw ConfigError(fmt::format("compare: '{}' does not share benchmark and horizon with '{}'", c.name,
                                    cfgs[0].name));
    for (std::size_t j = 0; j < i; ++j)
      if (cfgs[j].name == c.name) throw ConfigError("compare: duplicate run name '" + c.name + "'");
  }
  Comparison cmp;
  for (const auto& c : cfgs) cmp.reports.push_back(run_closed_loop(c));
  return cmp;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

inline void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw std::runtime_error("error while writing '" + path.string() + "'");
}

inline std::string g17(double v) { return fmt::format("{:.17g}", v); }

inline void write_fig1_rows(std::ostream& out, const RunReport& r) {
  if (r.samples.empty()) return;
  for (const auto& t : r.samples.front().trace)
    out << r.config.name << ',' << t.iter << ',' << g17(t.kkt.stationarity) << ',' << g17(t.kkt.feasibility) << ','
        << g17(t.kkt.complementarity) << ',' << g17(t.kkt.combined) << ',' << g17(t.sched_delta) << '\n';
}

inline const char* kFig1Header = "policy,iter,kkt_stat,kkt_feas,kkt_comp,kkt_max,sched_delta\n";

inline void write_fig2(const std::filesystem::path& path, const std::vector<const RunReport*>& reports) {
  std::ofstream out = open_out(path);
  out << 'k';
  std::size_t steps = 0;
  for (const auto* r : reports) {
    out << ',' << r->config.name;
    steps = std::max(steps, r->samples.size());
  }
  out << '\n';
  for (std::size_t k = 0; k < steps; ++k) {
    out << k;
    for (const auto* r : reports) {
      out << ',';
      if (k < r->samples.size()) out << r->samples[k].n_it;
    }
    out << '\n';
  }
  close_out(out, path);
}

inline nlohmann::ordered_json summary_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.config.name;
  j["benchmark"] = to_string(r.config.benchmark);
  j["anchors"] = to_string(r.config.policy.anchors);
  j["steps_run"] = r.samples.size();
  j["failed"] = r.failed;
  j["fail_step"] = r.fail_step;
  j["diagnostic"] = r.diagnostic;
  j["lap_completed"] = r.lap_completed;
  j["n_it_mean"] = r.agg.n_it_mean;
  j["delta_r_avg"] = r.agg.delta_r_avg;
  j["r_avg"] = r.agg.r_avg;
  j["max_violation"] = r.agg.max_violation;
  j["final_state"] = to_std(r.final_state);
  return j;
}

}  // namespace detail

/// Writes trace.csv, rollout.csv, summary.json, fig1_data.csv and fig2_data.csv into `dir`.
inline void write_report(const RunReport& r, const std::filesystem::path& dir) {
  using detail::g17;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory '" + dir.string() + "': " + ec.message());

  {
    const auto path = dir / "trace.csv";
    std::ofstream out = detail::open_out(path);
    out << "k,iter,kkt_stat,kkt_feas,kkt_comp,kkt_max,sched_delta,step_norm,qp_iters,t_prep_us,t_fb_us\n";
    for (const auto& s : r.samples)
      for (const auto& t : s.trace)
        out << s.k << ',' << t.iter << ',' << g17(t.kkt.stationarity) << ',' << g17(t.kkt.feasibility) << ','
            << g17(t.kkt.complementarity) << ',' << g17(t.kkt.combined) << ',' << g17(t.sched_delta) << ','
            << g17(t.step_norm) << ',' << t.qp_iters << ',' << g17(t.t_prep_us) << ',' << g17(t.t_fb_us) << '\n';
    detail::close_out(out, path);
  }
  {
    const auto path = dir / "rollout.csv";
    std::ofstream out = detail::open_out(path);
    out << 'k';
    for (int i = 0; i < r.config.nx(); ++i) out << ",x" << i;
    for (int i = 0; i < r.config.nu(); ++i) out << ",u" << i;
    out << ",cost,violation,n_it\n";
    for (const auto& s : r.samples) {
      out << s.k;
      for (int i = 0; i < s.x.size(); ++i) out << ',' << g17(s.x(i));
      for (int i = 0; i < s.u.size(); ++i) out << ',' << g17(s.u(i));
      out << ',' << g17(s.cost) << ',' << g17(s.violation) << ',' << s.n_it << '\n';
    }
    detail::close_out(out, path);
  }
  {
    const auto path = dir / "summary.json";
    std::ofstream out = detail::open_out(path);
    out << detail::summary_json(r).dump(2) << '\n';
    detail::close_out(out, path);
  }
  {
    const auto path = dir / "fig1_data.csv";
    std::ofstream out = detail::open_out(path);
    out << detail::kFig1Header;
    detail::write_fig1_rows(out, r);
    detail::close_out(out, path);
  }
  detail::write_fig2(dir / "fig2_data.csv", {&r});
}

/// Per-run reports in subdirectories plus combined fig1/fig2 data and a table2.csv of aggregates.
inline void write_comparison(const Comparison& cmp, const std::filesystem::path& dir) {
  using detail::g17;
  std::vector<const RunReport*> all;
  for (const auto& r : cmp.reports) {
    write_report(r, dir / r.config.name);
    all.push_back(&r);
  }
  {
    const auto path = dir / "fig1_data.csv";
    std::ofstream out = detail::open_out(path);
    out << detail::kFig1Header;
    for (const auto& r : cmp.reports) detail::write_fig1_rows(out, r);
    detail::close_out(out, path);
  }
  detail::write_fig2(dir / "fig2_data.csv", all);
  {
    const auto path = dir / "table2.csv";
    std::ofstream out = detail::open_out(path);
    out << "policy,n_it,r_avg,delta_r_avg,max_violation,steps,failed\n";
    for (const auto& r : cmp.reports)
      out << r.config.name << ',' << g17(r.agg.n_it_mean) << ',' << g17(r.agg.r_avg) << ','
          << g17(r.agg.delta_r_avg) << ',' << g17(r.agg.max_violation) << ',' << r.samples.size() << ','
          << (r.failed ? "true" : "false") << '\n';
    detail::close_out(out, path);
  }
}

/// Reads rollout.csv back into sample rows (k, x, u, cost, violation, n_it).
inline std::vector<SampleRecord> read_rollout_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  const auto header = detail::split_list(line);
  int nx = 0, nu = 0;
  for (const auto& h : header) {
    if (h.size() > 1 && h[0] == 'x') ++nx;
    if (h.size() > 1 && h[0] == 'u') ++nu;
  }
  if (header.size() != static_cast<std::size_t>(nx + nu + 4) || header.front() != "k" || header.back() != "n_it")
    throw std::runtime_error("'" + path.string() + "': unexpected rollout header");
  std::vector<SampleRecord> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_list(line);
    if (cells.size() != header.size()) throw std::runtime_error("'" + path.string() + "': ragged row");
    SampleRecord s;
    s.k = std::stoi(cells[0]);
    s.x.resize(nx);
    s.u.resize(nu);
    for (int i = 0; i < nx; ++i) s.x(i) = std::stod(cells[1 + i]);
    for (int i = 0; i < nu; ++i) s.u(i) = std::stod(cells[1 + nx + i]);
    s.cost = std::stod(cells[1 + nx + nu]);
    s.violation = std::stod(cells[2 + nx + nu]);
    s.n_it = std::stoi(cells[3 + nx + nu]);
    rows.push_back(std::move(s));
  }
  return rows;
}

namespace presets {

inline RunConfig cart_pendulum(const std::string& name, AnchorChoice anchors, bool ftc) {
  RunConfig c;
  c.name = name;
  c.benchmark = Benchmark::CartPendulum;
  c.policy.anchors = anchors;
  if (ftc) c.policy.sensitivity = SensitivityPolicy::Kind::FtcQuadrature;
  return c;
}

/// Closed-loop iteration-count study: SQP and LPV variants, 80 steps, scheduling tolerance 1e-6.
inline std::vector<RunConfig> table2() {
  return {cart_pendulum("sqp", AnchorChoice::PreviousIterate, false),
          cart_pendulum("lpv_previous", AnchorChoice::PreviousIterate, true),
          cart_pendulum("lpv_measured", AnchorChoice::MeasuredStateLastInput, true),
          cart_pendulum("lpv_optimal", AnchorChoice::Optimal, true)};
}

/// Ten fixed iterations on the first cart-pendulum OCP for each policy.
inline std::vector<RunConfig> fig1() {
  std::vector<RunConfig> cfgs = {cart_pendulum("sqp", AnchorChoice::PreviousIterate, false),
                                 cart_pendulum("lpv_previous", AnchorChoice::PreviousIterate, true),
                                 cart_pendulum("lpv_zero", AnchorChoice::Zero, true),
                                 cart_pendulum("lpv_constant", AnchorChoice::ConstantPoint, true),
                                 cart_pendulum("lpv_measured", AnchorChoice::MeasuredStateLastInput, true)};
  for (auto& c : cfgs) {
    c.steps = 1;
    c.policy.termination = Termination::Kind::FixedIterations;
    c.policy.iterations = 10;
  }
  return cfgs;
}

inline std::vector<RunConfig> fig2() { return table2(); }

}  // namespace presets

}  // namespace unimpc
