#pragma once

#include "mdpo/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

// Synthetic planar-skeleton motion world. A motion is F frames of V features:
// five joints (root first) as xy pairs followed by the root velocity.
namespace mdpo {

inline constexpr int kJoints = 5;
inline constexpr int kFeatures = 2 * kJoints + 2;

enum class Action { walk, jump, circle, spin, stand };
inline constexpr int kActionCount = 5;

const char* to_string(Action a);
Action action_from_string(std::string_view s);

inline constexpr double kSpeedMin = 0.5, kSpeedMax = 2.0;
inline constexpr double kAmplitudeMin = 0.2, kAmplitudeMax = 1.5;

struct PromptSpec {
  Action action = Action::stand;
  double speed = 1.0;
  double amplitude = 0.5;
  double direction = 0.0;  // radians
  std::int64_t prompt_id = 0;
};

// Throws DomainError when an attribute is out of range or non-finite.
void validate(const PromptSpec& p);

inline constexpr int kVocabSize = 32;
inline constexpr int kMaxTokens = 8;

struct TokenSeq {
  std::vector<int> tokens;
  bool operator==(const TokenSeq&) const = default;
};

int speed_bucket(double speed);          // 0 slow, 1 moderate, 2 fast
int amplitude_bucket(double amplitude);  // 0 small, 1 medium, 2 large
// "a person <action> <speed-bucket> <amplitude-bucket>"
TokenSeq render_tokens(const PromptSpec& p);
std::string token_text(const TokenSeq& t);

using MotionMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MotionSequence {
  MotionMat data;  // frames x kFeatures
  int fps = 20;

  int frames() const { return static_cast<int>(data.rows()); }
  bool operator==(const MotionSequence& o) const { return fps == o.fps && data == o.data; }
};

struct DomainConfig {
  int frames = 60;
  int fps = 20;
  int min_frames = 16;
  int max_frames = 240;
  double noise = 0.02;  // per-joint jitter std
  int n_prompts = 2000;
};

// Noiseless member of an action family. No attribute range checks: fitted
// parameters outside the prompt ranges are legitimate inputs.
MotionSequence family_motion(Action a, double speed, double amplitude, double direction, int frames,
                             int fps);

MotionSequence generate_ground_truth(const PromptSpec& p, int frames, std::uint64_t seed,
                                     const DomainConfig& cfg = {});

// Parameters recovered from a motion under an assumed action family.
struct FamilyFit {
  double speed = 0.0;
  double amplitude = 0.0;
  double direction = 0.0;
  double path_curvature = 0.0;  // 1/radius of the best circle through the root path
  double residual = 0.0;        // RMS distance to family_motion(fitted parameters)
};

FamilyFit fit_family(Action a, const MotionSequence& m);

// Linear-interpolation resampling along time.
MotionSequence resample(const MotionSequence& m, int frames);

struct NormStats {
  Eigen::VectorXd mean;  // per feature
  Eigen::VectorXd std;   // per feature, strictly positive

  MotionMat normalize(const MotionSequence& m) const;
  MotionSequence denormalize(const MotionMat& z, int fps) const;
};

enum class Split { train, val, test };
const char* to_string(Split s);

struct MotionRecord {
  PromptSpec prompt;
  MotionSequence motion;
};

struct MotionDataset {
  std::vector<MotionRecord> records;
  NormStats norm;
  Split split = Split::train;
};

struct DatasetSplits {
  MotionDataset train, val, test;
};

// Moments pooled over every frame of every record.
NormStats compute_norm_stats(const std::vector<MotionRecord>& records);

// Stratified by action, 80/10/10 by prompt, normalization from train only.
DatasetSplits build_dataset(int n_prompts, std::uint64_t seed, const DomainConfig& cfg = {});

inline constexpr int kDatasetSchemaVersion = 1;

// <dir>/{train,val,test}.jsonl plus <dir>/norm_stats.json.
void save_dataset(const std::filesystem::path& dir, const DatasetSplits& d);
DatasetSplits load_dataset(const std::filesystem::path& dir);

}  // namespace mdpo
