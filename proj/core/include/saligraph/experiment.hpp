#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saligraph/metrics.hpp"
#include "saligraph/model.hpp"
#include "saligraph/saliency.hpp"

namespace saligraph {

/// Parses a method name as printed by method_id(): "GradCAM_Pos B1",
/// "RectGrad(q=95)", "LRP-gamma(0.25)", "LRP-zplus", ... Aggregation
/// methods given without a layer carry an empty label, which
/// resolve_method() replaces by the model's last block.
MethodSpec parse_method(const std::string& text);

/// Fills in default layers and validates against `model` (ValueError).
MethodSpec resolve_method(const MethodSpec& spec, const Model& model);

enum class Protocol { kPointing, kRestrictedPointing, kClassSensitivity, kRandomization };

std::string protocol_name(Protocol p);
Protocol parse_protocol(const std::string& text);

struct ProtocolSpec {
  Protocol kind = Protocol::kPointing;
  double tolerance = 0.0;
  HogParams hog;
  /// Randomization seed; defaults to the experiment seed.
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> stages;
  double std = 0.01;
};

struct ModelSource {
  /// Weights directory; when unset the model is built (and optionally
  /// trained) from `build`.
  std::optional<std::filesystem::path> path;
  MiniVggConfig build;
  bool gap_head = false;
  /// Training manifest; training is skipped when unset.
  std::optional<std::filesystem::path> train_manifest;
  TrainConfig train;
};

struct RenderSpec {
  /// Number of leading samples rendered as method x class grids.
  std::size_t samples = 0;
  std::string format = "pgm";
};

struct ExperimentConfig {
  ModelSource model;
  std::filesystem::path dataset;
  std::vector<MethodSpec> methods;
  std::vector<ProtocolSpec> protocols;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  /// Evaluate only the first N samples when set.
  std::optional<std::size_t> max_samples;
  std::size_t threads = 0;
  RenderSpec render;
};

/// Parses a JSON config document. Relative paths are resolved against
/// `base_dir`. Unknown keys, bad method names and malformed values raise
/// ConfigError.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON of the config with every default filled in.
std::string config_json(const ExperimentConfig& config);

/// FNV-1a 64-bit hash, hex encoded.
std::string fnv1a_hex(const std::string& text);

/// One result row. Randomization produces one row per stage.
struct ReportRow {
  EvalRecord record;
  std::optional<std::size_t> stage;
  /// Set when the (method, protocol) cell failed; the record then carries
  /// no value.
  std::optional<std::string> error;
};

/// Runs every (method, protocol) cell in config order. A failing cell is
/// reported as an error row and does not stop the others.
std::vector<ReportRow> evaluate(const Model& model, std::span<const Sample> samples,
                                std::span<const Method> methods,
                                std::span<const ProtocolSpec> protocols, std::uint64_t seed,
                                std::size_t threads = 0);

std::string report_csv(std::span<const ReportRow> rows);
std::string report_json(std::span<const ReportRow> rows);

struct ExperimentResult {
  std::vector<ReportRow> rows;
  std::filesystem::path output_dir;
  bool has_failures() const;
};

/// Loads or builds the model, loads the dataset, evaluates, and writes
/// report.csv, report.json, runmeta.json and optional renders into the
/// output directory. Config problems raise ConfigError before any cell runs.
ExperimentResult run_experiment(const ExperimentConfig& config);

}  // namespace saligraph
