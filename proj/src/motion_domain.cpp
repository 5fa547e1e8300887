#include "mdpo/motion_domain.hpp"

#include "mdpo/error.hpp"
#include "mdpo/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace mdpo {

namespace {

using std::numbers::pi;

// Body-frame skeleton: arm_l, arm_r, leg_l, leg_r hang from the root.
constexpr std::array<double, 4> kLimbLength = {0.6, 0.6, 0.9, 0.9};
constexpr std::array<double, 4> kRestAngle = {-pi / 2 + 0.5, -pi / 2 - 0.5, -pi / 2 + 0.2, -pi / 2 - 0.2};
constexpr std::array<double, 4> kGaitCoef = {0.5, -0.5, -0.35, 0.35};
constexpr double kJumpDrift = 0.3;
constexpr double kJumpArmRaise = 0.8;
constexpr double kSpinArmSpread = 0.6;

const std::array<const char*, kVocabSize> kVocab = {
    "<pad>",  "a",     "person",  "walks",   "jumps", "circles", "spins",  "stands",
    "slowly", "steadily", "quickly", "gently", "moderately", "widely", "forward", "around",
    "in",     "place", "with",    "arms",    "legs",  "and",     "the",    "high",
    "low",    "turns", "moves",   "left",    "right", "body",    "fast",   "slow"};

constexpr int kTokA = 1, kTokPerson = 2, kTokActionBase = 3, kTokSpeedBase = 8, kTokAmpBase = 11;

double wrap_angle(double a) { return std::remainder(a, 2.0 * pi); }

struct Line {
  double slope = 0.0, intercept = 0.0;
};

Line fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  Line l;
  l.slope = sxx > 0 ? sxy / sxx : 0.0;
  l.intercept = my - l.slope * mx;
  return l;
}

std::vector<double> unwrap(std::vector<double> a) {
  for (std::size_t i = 1; i < a.size(); ++i) a[i] = a[i - 1] + wrap_angle(a[i] - a[i - 1]);
  return a;
}

struct Circle {
  double cx = 0, cy = 0, radius = 1e3;
};

constexpr double kMaxRadius = 1e3;

// Algebraic (Kasa) least-squares circle through the root path.
Circle fit_circle(const MotionSequence& m) {
  const int n = m.frames();
  Circle line{0, 0, kMaxRadius};
  // Centered and scaled so the rank test is independent of path size and offset.
  double mx = 0, my = 0;
  for (int k = 0; k < n; ++k) {
    mx += m.data(k, 0);
    my += m.data(k, 1);
  }
  mx /= n;
  my /= n;
  double scale = 0;
  for (int k = 0; k < n; ++k) scale = std::max(scale, std::hypot(m.data(k, 0) - mx, m.data(k, 1) - my));
  if (!(scale > 1e-9)) return line;
  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd b(n);
  for (int k = 0; k < n; ++k) {
    const double x = (m.data(k, 0) - mx) / scale, y = (m.data(k, 1) - my) / scale;
    a(k, 0) = x;
    a(k, 1) = y;
    a(k, 2) = 1.0;
    b(k) = -(x * x + y * y);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-9);
  if (qr.rank() < 3) return line;  // collinear path
  const Eigen::Vector3d sol = qr.solve(b);
  const double cx = -sol(0) / 2, cy = -sol(1) / 2;
  const double r2 = cx * cx + cy * cy - sol(2);
  if (!std::isfinite(r2) || r2 <= 0 || scale * std::sqrt(r2) > kMaxRadius) return line;
  return {mx + scale * cx, my + scale * cy, scale * std::sqrt(r2)};
}

double limb_angle(const MotionSequence& m, int k, int limb) {
  const int j = limb + 1;
  return std::atan2(m.data(k, 2 * j + 1) - m.data(k, 1), m.data(k, 2 * j) - m.data(k, 0));
}

void check_frames(int frames) {
  if (frames < 2) throw ContractError("motions need at least 2 frames");
}

}  // namespace

const char* to_string(Action a) {
  switch (a) {
    case Action::walk: return "walk";
    case Action::jump: return "jump";
    case Action::circle: return "circle";
    case Action::spin: return "spin";
    case Action::stand: return "stand";
  }
  return "?";
}

Action action_from_string(std::string_view s) {
  for (int i = 0; i < kActionCount; ++i)
    if (s == to_string(static_cast<Action>(i))) return static_cast<Action>(i);
  throw DomainError("unknown action: " + std::string(s));
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

void validate(const PromptSpec& p) {
  const int a = static_cast<int>(p.action);
  if (a < 0 || a >= kActionCount) throw DomainError("invalid action");
  if (!(p.speed >= kSpeedMin && p.speed <= kSpeedMax))
    throw DomainError("speed " + std::to_string(p.speed) + " outside [0.5, 2.0]");
  if (!(p.amplitude >= kAmplitudeMin && p.amplitude <= kAmplitudeMax))
    throw DomainError("amplitude " + std::to_string(p.amplitude) + " outside [0.2, 1.5]");
  if (!std::isfinite(p.direction)) throw DomainError("direction must be finite");
}

int speed_bucket(double speed) {
  const double f = (speed - kSpeedMin) / (kSpeedMax - kSpeedMin);
  return std::clamp(static_cast<int>(std::floor(f * 3.0)), 0, 2);
}

int amplitude_bucket(double amplitude) {
  const double f = (amplitude - kAmplitudeMin) / (kAmplitudeMax - kAmplitudeMin);
  return std::clamp(static_cast<int>(std::floor(f * 3.0)), 0, 2);
}

TokenSeq render_tokens(const PromptSpec& p) {
  return TokenSeq{{kTokA, kTokPerson, kTokActionBase + static_cast<int>(p.action),
                   kTokSpeedBase + speed_bucket(p.speed), kTokAmpBase + amplitude_bucket(p.amplitude)}};
}

std::string token_text(const TokenSeq& t) {
  std::string s;
  for (int id : t.tokens) {
    if (id < 0 || id >= kVocabSize) throw ContractError("token id out of vocabulary");
    if (!s.empty()) s += ' ';
    s += kVocab[id];
  }
  return s;
}

MotionSequence family_motion(Action a, double speed, double amplitude, double direction, int frames,
                             int fps) {
  check_frames(frames);
  MotionSequence m;
  m.fps = fps;
  m.data.resize(frames, kFeatures);
  const double duration = static_cast<double>(frames - 1) / fps;
  const double drift_sign = std::cos(direction) >= 0 ? 1.0 : -1.0;
  for (int k = 0; k < frames; ++k) {
    const double t = static_cast<double>(k) / fps;
    const double tau = static_cast<double>(k) / (frames - 1);
    double rx = 0, ry = 0, vx = 0, vy = 0, heading = 0;
    std::array<double, 4> offset{};
    switch (a) {
      case Action::walk: {
        rx = speed * t * std::cos(direction);
        ry = speed * t * std::sin(direction);
        vx = speed * std::cos(direction);
        vy = speed * std::sin(direction);
        const double g = std::sin(2 * pi * speed * t);
        for (int j = 0; j < 4; ++j) offset[j] = kGaitCoef[j] * amplitude * g;
        break;
      }
      case Action::circle: {
        const double theta = direction + speed / amplitude * t;
        rx = amplitude * (std::cos(theta) - std::cos(direction));
        ry = amplitude * (std::sin(theta) - std::sin(direction));
        vx = -speed * std::sin(theta);
        vy = speed * std::cos(theta);
        const double g = std::sin(2 * pi * speed * t);
        for (int j = 0; j < 4; ++j) offset[j] = kGaitCoef[j] * amplitude * g;
        break;
      }
      case Action::jump: {
        const double arc = 4.0 * tau * (1.0 - tau);
        rx = kJumpDrift * speed * drift_sign * t;
        ry = amplitude * arc;
        vx = kJumpDrift * speed * drift_sign;
        vy = amplitude * 4.0 * (1.0 - 2.0 * tau) / duration;
        offset[0] = kJumpArmRaise * amplitude * arc;
        offset[1] = -kJumpArmRaise * amplitude * arc;
        break;
      }
      case Action::spin: {
        heading = direction + pi * speed * t;
        offset[0] = kSpinArmSpread * amplitude;
        offset[1] = -kSpinArmSpread * amplitude;
        break;
      }
      case Action::stand: break;
    }
    m.data(k, 0) = rx;
    m.data(k, 1) = ry;
    for (int j = 0; j < 4; ++j) {
      const double ang = heading + kRestAngle[j] + offset[j];
      m.data(k, 2 * (j + 1)) = rx + kLimbLength[j] * std::cos(ang);
      m.data(k, 2 * (j + 1) + 1) = ry + kLimbLength[j] * std::sin(ang);
    }
    m.data(k, 2 * kJoints) = vx;
    m.data(k, 2 * kJoints + 1) = vy;
  }
  return m;
}

MotionSequence generate_ground_truth(const PromptSpec& p, int frames, std::uint64_t seed,
                                     const DomainConfig& cfg) {
  validate(p);
  if (frames < cfg.min_frames || frames > cfg.max_frames)
    throw ContractError("frames " + std::to_string(frames) + " outside configured range");
  MotionSequence m = family_motion(p.action, p.speed, p.amplitude, p.direction, frames, cfg.fps);
  if (cfg.noise > 0) {
    Rng rng(seed);
    for (int k = 0; k < frames; ++k)
      for (int f = 0; f < 2 * kJoints; ++f) m.data(k, f) += cfg.noise * rng.normal();
  }
  return m;
}

FamilyFit fit_family(Action a, const MotionSequence& m) {
  check_frames(m.frames());
  const int n = m.frames();
  std::vector<double> t(n);
  for (int k = 0; k < n; ++k) t[k] = static_cast<double>(k) / m.fps;

  FamilyFit fit;
  const Circle circle = fit_circle(m);
  fit.path_curvature = circle.radius >= kMaxRadius ? 0.0 : 1.0 / circle.radius;

  auto gait_amplitude = [&](double speed, double heading0, double heading_rate) {
    double num = 0, den = 0;
    for (int k = 0; k < n; ++k) {
      const double g = std::sin(2 * pi * speed * t[k]);
      const double h = heading0 + heading_rate * t[k];
      for (int j = 0; j < 4; ++j) {
        const double d = wrap_angle(limb_angle(m, k, j) - h - kRestAngle[j]);
        num += kGaitCoef[j] * d * g;
        den += kGaitCoef[j] * kGaitCoef[j] * g * g;
      }
    }
    return den > 1e-12 ? num / den : 0.0;
  };

  switch (a) {
    case Action::walk: {
      std::vector<double> x(n), y(n);
      for (int k = 0; k < n; ++k) {
        x[k] = m.data(k, 0);
        y[k] = m.data(k, 1);
      }
      const double vx = fit_line(t, x).slope, vy = fit_line(t, y).slope;
      fit.speed = std::hypot(vx, vy);
      fit.direction = std::atan2(vy, vx);
      fit.amplitude = gait_amplitude(fit.speed, 0.0, 0.0);
      break;
    }
    case Action::circle: {
      std::vector<double> theta(n);
      for (int k = 0; k < n; ++k) theta[k] = std::atan2(m.data(k, 1) - circle.cy, m.data(k, 0) - circle.cx);
      const Line l = fit_line(t, unwrap(theta));
      fit.amplitude = circle.radius;
      fit.speed = l.slope * circle.radius;
      fit.direction = wrap_angle(l.intercept);
      break;
    }
    case Action::jump: {
      double num = 0, den = 0, xt = 0, tt = 0;
      for (int k = 0; k < n; ++k) {
        const double tau = static_cast<double>(k) / (n - 1);
        const double b = 4.0 * tau * (1.0 - tau);
        num += m.data(k, 1) * b;
        den += b * b;
        xt += m.data(k, 0) * t[k];
        tt += t[k] * t[k];
      }
      fit.amplitude = den > 0 ? num / den : 0.0;
      const double slope = tt > 0 ? xt / tt : 0.0;
      fit.speed = std::abs(slope) / kJumpDrift;
      fit.direction = slope >= 0 ? 0.0 : pi;
      break;
    }
    case Action::spin: {
      std::vector<double> h(n);
      for (int k = 0; k < n; ++k) {
        const double a2 = limb_angle(m, k, 2) - kRestAngle[2];
        const double a3 = limb_angle(m, k, 3) - kRestAngle[3];
        h[k] = std::atan2(std::sin(a2) + std::sin(a3), std::cos(a2) + std::cos(a3));
      }
      const Line l = fit_line(t, unwrap(h));
      fit.speed = l.slope / pi;
      fit.direction = wrap_angle(l.intercept);
      double spread = 0;
      for (int k = 0; k < n; ++k) {
        const double hk = l.intercept + l.slope * t[k];
        spread += wrap_angle(limb_angle(m, k, 0) - hk - kRestAngle[0]) -
                  wrap_angle(limb_angle(m, k, 1) - hk - kRestAngle[1]);
      }
      fit.amplitude = spread / (2.0 * kSpinArmSpread * n);
      break;
    }
    case Action::stand: break;
  }

  // The circle family is undefined at zero radius.
  const double amp = (a == Action::circle) ? std::max(fit.amplitude, 1e-3) : fit.amplitude;
  const MotionSequence ref = family_motion(a, fit.speed, amp, fit.direction, n, m.fps);
  fit.residual = std::sqrt((m.data - ref.data).squaredNorm() / static_cast<double>(m.data.size()));
  return fit;
}

MotionSequence resample(const MotionSequence& m, int frames) {
  check_frames(frames);
  if (frames == m.frames()) return m;
  MotionSequence out;
  out.fps = m.fps;
  out.data.resize(frames, m.data.cols());
  const int n = m.frames();
  for (int k = 0; k < frames; ++k) {
    const double pos = static_cast<double>(k) * (n - 1) / (frames - 1);
    const int i0 = std::min(static_cast<int>(std::floor(pos)), n - 2);
    const double w = pos - i0;
    out.data.row(k) = (1 - w) * m.data.row(i0) + w * m.data.row(i0 + 1);
  }
  return out;
}

MotionMat NormStats::normalize(const MotionSequence& m) const {
  MotionMat z = m.data;
  for (Eigen::Index f = 0; f < z.cols(); ++f) z.col(f) = (z.col(f).array() - mean(f)) / std(f);
  return z;
}

MotionSequence NormStats::denormalize(const MotionMat& z, int fps) const {
  MotionSequence m;
  m.fps = fps;
  m.data = z;
  for (Eigen::Index f = 0; f < z.cols(); ++f) m.data.col(f) = z.col(f).array() * std(f) + mean(f);
  return m;
}

NormStats compute_norm_stats(const std::vector<MotionRecord>& records) {
  if (records.empty()) throw ContractError("cannot compute stats of an empty split");
  NormStats s;
  s.mean = Eigen::VectorXd::Zero(kFeatures);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(kFeatures);
  double count = 0;
  for (const auto& r : records) {
    s.mean += r.motion.data.colwise().sum().transpose();
    count += r.motion.frames();
  }
  s.mean /= count;
  for (const auto& r : records)
    for (int k = 0; k < r.motion.frames(); ++k)
      sq += (r.motion.data.row(k).transpose() - s.mean).array().square().matrix();
  s.std = (sq / count).cwiseSqrt();
  for (int f = 0; f < kFeatures; ++f)
    if (!(s.std(f) > 0)) throw DomainError("feature " + std::to_string(f) + " has zero variance");
  return s;
}

DatasetSplits build_dataset(int n_prompts, std::uint64_t seed, const DomainConfig& cfg) {
  if (n_prompts < 30) throw ConfigError("n_prompts must be >= 30 to stratify over 5 actions and 3 splits");
  Rng rng(derive_seed(seed, {0x5052}));
  std::array<std::vector<PromptSpec>, kActionCount> by_action;
  for (int i = 0; i < n_prompts; ++i) {
    PromptSpec p;
    p.prompt_id = i;
    p.action = static_cast<Action>(i % kActionCount);
    p.speed = rng.uniform(kSpeedMin, kSpeedMax);
    p.amplitude = rng.uniform(kAmplitudeMin, kAmplitudeMax);
    p.direction = rng.uniform(0.0, 2 * pi);
    by_action[i % kActionCount].push_back(p);
  }

  DatasetSplits d;
  d.train.split = Split::train;
  d.val.split = Split::val;
  d.test.split = Split::test;
  auto make_record = [&](const PromptSpec& p) {
    return MotionRecord{p, generate_ground_truth(p, cfg.frames, derive_seed(seed, {0x4754, static_cast<std::uint64_t>(p.prompt_id)}), cfg)};
  };
  for (auto& group : by_action) {
    std::shuffle(group.begin(), group.end(), rng.engine());
    const int m = static_cast<int>(group.size());
    const int n_held = std::max(1, static_cast<int>(std::lround(0.1 * m)));
    for (int q = 0; q < m; ++q) {
      auto& dst = q < n_held ? d.val : (q < 2 * n_held ? d.test : d.train);
      dst.records.push_back(make_record(group[q]));
    }
  }
  auto by_id = [](const MotionRecord& a, const MotionRecord& b) { return a.prompt.prompt_id < b.prompt.prompt_id; };
  for (auto* s : {&d.train, &d.val, &d.test}) std::sort(s->records.begin(), s->records.end(), by_id);

  d.train.norm = compute_norm_stats(d.train.records);
  d.val.norm = d.train.norm;
  d.test.norm = d.train.norm;
  return d;
}

namespace {

nlohmann::json record_json(const MotionRecord& r, Split split) {
  nlohmann::json j;
  j["schema_version"] = kDatasetSchemaVersion;
  j["prompt_id"] = r.prompt.prompt_id;
  j["split"] = to_string(split);
  j["action"] = to_string(r.prompt.action);
  j["speed"] = r.prompt.speed;
  j["amplitude"] = r.prompt.amplitude;
  j["direction"] = r.prompt.direction;
  j["frames"] = r.motion.frames();
  j["features"] = kFeatures;
  j["fps"] = r.motion.fps;
  j["data"] = std::vector<double>(r.motion.data.data(), r.motion.data.data() + r.motion.data.size());
  return j;
}

MotionRecord record_from_json(const nlohmann::json& j) {
  if (j.at("schema_version").get<int>() != kDatasetSchemaVersion)
    throw IntegrityError("unknown dataset schema version");
  MotionRecord r;
  r.prompt.prompt_id = j.at("prompt_id").get<std::int64_t>();
  r.prompt.action = action_from_string(j.at("action").get<std::string>());
  r.prompt.speed = j.at("speed").get<double>();
  r.prompt.amplitude = j.at("amplitude").get<double>();
  r.prompt.direction = j.at("direction").get<double>();
  const int frames = j.at("frames").get<int>();
  const int features = j.at("features").get<int>();
  if (features != kFeatures) throw IntegrityError("dataset feature count mismatch");
  r.motion.fps = j.at("fps").get<int>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<int>(data.size()) != frames * features) throw IntegrityError("dataset record size mismatch");
  r.motion.data = Eigen::Map<const MotionMat>(data.data(), frames, features);
  return r;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const DatasetSplits& d) {
  for (const auto* s : {&d.train, &d.val, &d.test}) {
    std::string out;
    for (const auto& r : s->records) out += record_json(r, s->split).dump() + "\n";
    write_file_atomic(dir / (std::string(to_string(s->split)) + ".jsonl"), out);
  }
  nlohmann::json ns;
  ns["schema_version"] = kDatasetSchemaVersion;
  ns["mean"] = std::vector<double>(d.train.norm.mean.data(), d.train.norm.mean.data() + kFeatures);
  ns["std"] = std::vector<double>(d.train.norm.std.data(), d.train.norm.std.data() + kFeatures);
  write_file_atomic(dir / "norm_stats.json", ns.dump(2) + "\n");
}

DatasetSplits load_dataset(const std::filesystem::path& dir) {
  DatasetSplits d;
  NormStats norm;
  try {
    const auto ns = nlohmann::json::parse(read_file(dir / "norm_stats.json"));
    if (ns.at("schema_version").get<int>() != kDatasetSchemaVersion)
      throw IntegrityError("unknown norm_stats schema version");
    const auto mean = ns.at("mean").get<std::vector<double>>();
    const auto std = ns.at("std").get<std::vector<double>>();
    if (mean.size() != kFeatures || std.size() != kFeatures) throw IntegrityError("norm_stats size mismatch");
    norm.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), kFeatures);
    norm.std = Eigen::Map<const Eigen::VectorXd>(std.data(), kFeatures);
    for (auto [split, dst] : {std::pair{Split::train, &d.train}, {Split::val, &d.val}, {Split::test, &d.test}}) {
      dst->split = split;
      dst->norm = norm;
      std::istringstream in(read_file(dir / (std::string(to_string(split)) + ".jsonl")));
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) dst->records.push_back(record_from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed dataset: ") + e.what());
  }
  return d;
}

}  // namespace mdpo
