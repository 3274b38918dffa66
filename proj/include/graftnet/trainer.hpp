#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "graftnet/config.hpp"
#include "graftnet/data.hpp"
#include "graftnet/losses.hpp"
#include "graftnet/metrics.hpp"

namespace graftnet {

/// Linear warmup over round(warmup_fraction * total_steps) steps to max_lr,
/// then linear decay toward 0. Step indices start at 0; step 0 already runs at
/// max_lr / warmup_steps (max_lr when there is no warmup).
double learning_rate(std::size_t step, std::size_t total_steps, double warmup_fraction, double max_lr);

/// SGD with momentum and L2 weight decay (v = mu v + g + wd w; w -= lr v).
/// Attention-backbone parameters use lr_attn, all others lr_other.
class Sgd {
 public:
  Sgd(ParamStore<float>& store, double momentum, double weight_decay);
  void step(double lr_attn, double lr_other);
  void zero_grad();

 private:
  ParamStore<float>& store_;
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

/// [N,3,H,W] image batch and [N,1,H,W] mask batch from equally sized samples.
std::pair<Tensor<float>, Tensor<float>> to_batch(const std::vector<Sample>& samples);

/// Deterministic split of a manifest: floor(n * val_fraction) entries chosen
/// by a seeded permutation become the held-out part. Both halves stay sorted.
std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest, double val_fraction,
                                                           std::uint64_t seed);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double bce_p = 0.0;
  double iou_p = 0.0;
  double agl = 0.0;
  double aux = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean step loss
  double val_mae = 0.0;     // NaN without a validation set
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  double final_val_mae = 0.0;
};

struct TrainOptions {
  std::size_t threads = 1;  // data loading and validation
  /// Optional progress sink, called once per epoch.
  std::function<void(const EpochRecord&)> on_epoch;
  /// Stop after this many optimizer steps (0 = the full schedule).
  std::size_t max_steps = 0;
};

/// Owns a trained network and the config that built it.
struct Checkpoint {
  TrainConfig config;
  std::unique_ptr<GraftNet<float>> net;
};

/// Trains on `train_set`, validating on `val_set` after every epoch when it is
/// non-empty. Aborts with NumericError naming the step and loss breakdown if
/// the loss stops being finite.
TrainResult train(const TrainConfig& config, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  Checkpoint& out, const TrainOptions& options = {});

/// Manifest-level driver: splits off a validation part unless `val` is given,
/// trains, writes the checkpoint plus loss.csv and epochs.csv under out_dir.
TrainResult train_to_dir(const TrainConfig& config, const DatasetManifest& data, const DatasetManifest* val,
                         const std::string& out_dir, const TrainOptions& options = {});

/// Checkpoint directory: config.txt, params/index.tsv and one GTNS file per
/// parameter or buffer.
void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

/// Saliency map for one sample at the sample's mask resolution.
GrayMap predict(GraftNet<float>& net, const Image& image, std::size_t out_height, std::size_t out_width);

struct EvalRow {
  std::string id;
  EvalResult result;
};

/// Evaluates every sample; inputs are resized to the model resolution and the
/// predictions resized back to the mask resolution.
std::vector<EvalRow> evaluate_samples(GraftNet<float>& net, const std::vector<Sample>& samples,
                                      std::size_t threads = 1);
/// `sample_id,mae,f_max,s,e,bde` with one row per sample and an `aggregate` row.
void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows);

void write_loss_csv(const std::string& path, const std::vector<StepRecord>& steps);
void write_epoch_csv(const std::string& path, const std::vector<EpochRecord>& epochs);

/// Writes an 8-bit PGM of the saliency map at the image's own resolution.
void infer_to_file(GraftNet<float>& net, const std::string& image_path, const std::string& out_path);

}  // namespace graftnet
