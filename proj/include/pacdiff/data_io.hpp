#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "pacdiff/models.hpp"
#include "pacdiff/sampler.hpp"
#include "pacdiff/training.hpp"

namespace pacdiff {

// ---------------------------------------------------------------------------
// Datasets

struct NormalizationOptions {
  // Fraction of each feature's range added on both sides before mapping the
  // box to [-1, 1].
  double feature_margin = 0.05;
};

struct NormalizationMeta {
  Vector x_lo;  // raw value mapped to -1
  Vector x_hi;  // raw value mapped to +1
  double y_min = 0.0;
  double y_max = 0.0;
  double feature_margin = 0.0;

  Eigen::Index dim() const { return x_lo.size(); }
  bool operator==(const NormalizationMeta&) const = default;
};

struct OfflineDataset {
  Tensor x_raw;
  Vector y_raw;
  Tensor x_norm;   // in [-1, 1]
  Vector y_train;  // in [0, 1]
  NormalizationMeta meta;
  std::vector<std::string> warnings;

  Eigen::Index size() const { return x_raw.rows(); }
  Eigen::Index dim() const { return x_raw.cols(); }
};

/// Computes training-set normalization. A constant feature maps to 0 and a
/// constant objective maps to 0; both add a warning.
OfflineDataset make_dataset(Tensor x_raw, Vector y_raw, const NormalizationOptions& options = {});

Tensor normalize_features(const NormalizationMeta& meta, const Tensor& raw);
Tensor denormalize_features(const NormalizationMeta& meta, const Tensor& normalized);
Vector normalize_objective(const NormalizationMeta& meta, const Vector& y_raw);

/// (y - y_min) / (y_max - y_min).
double benchmark_normalize(double y, double y_min, double y_max);

// Header plus numeric rows; blank lines and lines starting with '#' skipped.
struct CsvTable {
  std::vector<std::string> header;
  Tensor rows;
  std::vector<std::string> comments;
};

CsvTable parse_csv(std::istream& in, const std::string& source = "<stream>");
CsvTable read_csv(const std::filesystem::path& path);

/// Expects header `x1,...,xd,y`.
OfflineDataset parse_dataset(std::istream& in, const NormalizationOptions& options = {},
                             const std::string& source = "<stream>");
OfflineDataset load_dataset(const std::filesystem::path& path,
                            const NormalizationOptions& options = {});

std::string dataset_csv(const Tensor& x, const Vector& y);

std::string format_double(double v);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_bytes(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Checkpoints: magic, u32 version, u32 section count, then sections of
// (u32 name length, name, u64 payload length, payload), then a u64 FNV-1a
// checksum of everything before it. Integers and doubles are little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  NoiseSchedule schedule;
  WeightModel weights;
  ParamStore phi;
  ScoreNet theta;
  Hyperparams hyper;
  NormalizationMeta normalization;
  std::uint64_t seed = 0;
};

Checkpoint make_checkpoint(const TrainState& state, const NormalizationMeta& normalization);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a(std::string_view bytes);
/// Hex FNV-1a of the serialized checkpoint.
std::string checkpoint_id(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Samples

/// De-normalized designs with a `# checkpoint=... T=... seed=... N=...` line.
std::string samples_csv(const SampleBatch& batch, const NormalizationMeta& meta);
void export_samples(const SampleBatch& batch, const NormalizationMeta& meta,
                    const std::filesystem::path& path);

}  // namespace pacdiff
