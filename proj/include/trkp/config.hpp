#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trkp/amsd.hpp"
#include "trkp/distill.hpp"
#include "trkp/htrm.hpp"
#include "trkp/scenes.hpp"

namespace trkp {

// One experiment configuration tree, mirroring the JSON config file.
// Unknown keys are rejected; every run writes the fully resolved tree
// (defaults filled in) next to its outputs.

struct SourceEntry {
  std::string domain_id;
  double intensity_offset = 0;
  double noise_sigma = 0;
  double object_scale = 1;
  std::vector<double> class_prior;  // empty = uniform
  int train = 48;
  int heldout = 16;
};

struct TargetEntry {
  std::vector<double> weights;  // over sources
  int train = 48;
  int eval = 32;
};

struct SceneSetConfig {
  int image_size = 64;
  int classes = 3;
  std::vector<SourceEntry> sources;
  TargetEntry target;
};

struct DetectorConfig {
  int depth = 32;
  int hidden = 64;
  int c1 = 8;
  int c2 = 16;
};

struct AmsdStageConfig {
  double lambda = 0.2;
  double mu = 0.01;
  double learning_rate = 0.01;
  int batch_size = 16;
  int pretrain_epochs = 10;
  int finetune_epochs = 10;
  bool disentangle_cls = true;
  bool disentangle_reg = true;
  double momentum = 0.9;
  double lr_decay = 0.1;
  double decay_at = 0.8;
};

struct HtrmStageConfig {
  int k_prime = 5;
  double gamma = 1.0;
  double beta = 0.5;
  bool image_level = false;
  bool count_unique_queries = false;
  std::vector<int> k_prime_sweep;  // extra manifests emitted by the mine stage
};

struct DistillStageConfig {
  double confidence_threshold = 0.7;
  double ema = 0.99;
  int epochs = 10;
  double learning_rate = 0.01;
  int batch_size = 16;
  double momentum = 0.9;
  double lr_decay = 0.1;
  double decay_at = 0.8;
  double nms_iou = 0.5;
};

struct EvalStageConfig {
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  double match_iou = 0.5;
};

struct PipelineConfig {
  bool use_amsd = true;
  bool use_htrm = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware default
  std::string precision = "f32";
  std::string out = "runs/trkp";
  SceneSetConfig scenes;
  DetectorConfig detector;
  AmsdStageConfig amsd;
  HtrmStageConfig htrm;
  DistillStageConfig distill;
  EvalStageConfig eval;
  PipelineConfig pipeline;
};

// The built-in benchmark preset: S1 a near-target shift, S2 and S3 far
// shifts, target a mixture favoring S1.
ExperimentConfig tri_source_preset();

// Strict parse: unknown keys and malformed values raise ParseError with
// key context. Fields not present fall back to the preset defaults.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text, const std::string& origin);

// Fully resolved canonical JSON (sorted keys) and its FNV-1a hash.
std::string dump_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// Derived pieces.
DetectorLayout layout_from(const ExperimentConfig& cfg);
std::vector<DomainSpec> source_specs(const ExperimentConfig& cfg);
MixtureSpec target_spec(const ExperimentConfig& cfg);
AmsdConfig amsd_config(const ExperimentConfig& cfg, bool pretrain_phase, bool adversarial);
HtrmConfig htrm_config(const ExperimentConfig& cfg);
DistillConfig distill_config(const ExperimentConfig& cfg);
EvalSettings eval_settings(const ExperimentConfig& cfg);

}  // namespace trkp
