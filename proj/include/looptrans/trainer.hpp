#pragma once

// Training loop over precomputed feature maps, inference, and checkpoints.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "looptrans/features.hpp"
#include "looptrans/metrics.hpp"
#include "looptrans/parts.hpp"
#include "looptrans/pixel_decoder.hpp"
#include "looptrans/scam.hpp"
#include "looptrans/synth.hpp"

namespace looptrans {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A loss turned non-finite. Carries the id of the sample that produced it.
struct NumericError : std::runtime_error {
  NumericError(const std::string& what, std::string sample) : std::runtime_error(what), sample_id(std::move(sample)) {}
  std::string sample_id;
};

enum class BaselineMode { LoopTrans, OneWay };
enum class InferSource { Pixel, Activation };

struct TrainConfig {
  double lambda_cls = 1.0;
  double lambda_dill = 1.0;
  double lambda_pixel = 1.0;
  double lambda_corr = 1.0;
  double lambda_align = 1.0;  // one_way baseline only
  double lr = 1e-3;
  double momentum = 0.0;
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 2;
  std::size_t batch_size = 8;
  std::size_t n_exo = 3;
  std::size_t K = 4;
  std::size_t M = 15;
  double mu = 0.5;
  double tau = 1.0;
  std::uint64_t seed = 0;
  BaselineMode baseline_mode = BaselineMode::LoopTrans;
  bool neg_cls_term = true;
  PixelLossType pixel_loss_type = PixelLossType::DiceMse;
  InferSource infer_source = InferSource::Pixel;
  bool detach_teacher = true;
  double head_init_std = 0.01;
  std::size_t n_classes = 4;
  BackboneConfig backbone;

  void validate() const;
};

/// JSON object with any subset of the TrainConfig keys. Unknown keys, wrong
/// types and invalid values raise ConfigError.
TrainConfig config_from_json(const std::string& text, TrainConfig base = {});
std::string config_to_json(const TrainConfig& cfg);
std::uint64_t config_hash(const TrainConfig& cfg);

const char* baseline_mode_name(BaselineMode m);
const char* infer_source_name(InferSource s);

/// Everything a training step needs for one ego sample. The part clustering
/// depends only on the (frozen) ego features, so it is computed once up front.
struct TrainSample {
  std::string sample_id;
  std::size_t label = 0;
  FeatureMap ego;
  std::vector<FeatureMap> exo;
  std::optional<BinaryGrid> gt_mask;
  PartSegmentation parts;
};

TrainSample make_train_sample(std::string sample_id, std::size_t label, FeatureMap ego, std::vector<FeatureMap> exo,
                              std::optional<BinaryGrid> gt_mask, const TrainConfig& cfg);

struct ModelState {
  std::optional<BackboneParams> backbone;  // present when features come from the built-in backbone
  ScamParams scam;                         // shared CAM; the ego CAM in one_way mode
  std::optional<ScamParams> scam_exo;      // one_way mode only
  PixelDecoderParams pixel;
  std::vector<Tensor> velocity;            // SGD momentum buffers, parallel to trainable_params()
  std::size_t epoch = 0;
  std::size_t steps = 0;
  Rng rng;

  /// Parameters updated by SGD, in a fixed order.
  ParamRefs trainable_params();
  /// Every stored tensor, including the backbone and momentum buffers.
  ParamRefs all_tensors();
};

/// Fresh parameters. `channels` defaults to the backbone width, in which case a
/// backbone is created too.
ModelState init_state(const TrainConfig& cfg, std::optional<std::size_t> channels = std::nullopt);

/// Renders synthetic samples into feature maps with the state's backbone.
std::vector<TrainSample> prepare_samples(const std::vector<synth::SceneSample>& scenes, const ModelState& state,
                                         const TrainConfig& cfg);

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double total = 0.0;
  double cls = 0.0;
  double dill = 0.0;
  double pixel = 0.0;
  double corr = 0.0;
  double align = 0.0;
  std::size_t pixel_valid = 0;
  std::size_t pixel_skipped = 0;
};

/// One SGD update on `batch`.
LossRecord train_step(const std::vector<const TrainSample*>& batch, ModelState& state, const TrainConfig& cfg);

/// Min-max normalized localization map for class `label`, shaped like the feature grid.
Tensor infer(const FeatureMap& ego, std::size_t label, const ModelState& state, const TrainConfig& cfg);

struct EvalSummary {
  metrics::Scores scores;
  double mean_iou = 0.0;  // prediction ≥ 0.5 vs gt_mask
  std::size_t n = 0;
};

EvalSummary evaluate(const std::vector<TrainSample>& samples, const ModelState& state, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based count of completed epochs
  double mean_loss = 0.0;
  double seconds = 0.0;
  EvalSummary eval;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;  // writes last.ltck and best.ltck
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ModelState state;  // after the last epoch
  ModelState best;   // lowest held-out KLD (the initial state when epochs = 0)
  std::vector<EpochRecord> history;
  std::vector<LossRecord> steps;
};

/// Runs epochs from state.epoch up to cfg.epochs.
TrainResult train(const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& test_set,
                  const TrainConfig& cfg, std::optional<ModelState> initial = std::nullopt,
                  const TrainOptions& opts = {});

std::string format_history(const std::vector<EpochRecord>& history);
std::string format_steps(const std::vector<LossRecord>& steps);

// Checkpoint container: "LTCK", version, config hash, config JSON, counters,
// rng state, named float64 tensors, trailing CRC-32.
struct Checkpoint {
  TrainConfig config;
  ModelState state;
};

std::vector<std::uint8_t> encode_checkpoint(const ModelState& state, const TrainConfig& cfg);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelState& state, const TrainConfig& cfg);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace looptrans
