#include "graftnet/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "graftnet/error.hpp"
#include "graftnet/gtns.hpp"

namespace graftnet {

namespace fs = std::filesystem;

double learning_rate(std::size_t step, std::size_t total_steps, double warmup_fraction, double max_lr) {
  if (total_steps == 0) return max_lr;
  const auto warmup = std::size_t(std::llround(warmup_fraction * double(total_steps)));
  if (step < warmup) return max_lr * double(step + 1) / double(warmup);
  const std::size_t decay = total_steps - warmup;
  if (decay == 0) return max_lr;
  const double remaining = double(total_steps - std::min(step, total_steps)) / double(decay);
  return max_lr * remaining;
}

Sgd::Sgd(ParamStore<float>& store, double momentum, double weight_decay)
    : store_(store), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& e : store_.entries()) velocity_.emplace_back(e.trainable ? e.tensor.numel() : 0, 0.0f);
}

void Sgd::zero_grad() {
  for (auto& e : store_.entries())
    if (e.trainable) e.tensor.zero_grad();
}

void Sgd::step(double lr_attn, double lr_other) {
  const auto mu = float(momentum_), wd = float(weight_decay_);
  auto& entries = store_.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto& e = entries[p];
    if (!e.trainable) continue;
    const auto lr = float(e.group == ParamGroup::attn_backbone ? lr_attn : lr_other);
    auto w = e.tensor.mutable_values();
    const auto g = e.tensor.grad();
    auto& v = velocity_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * w[i];
      w[i] -= lr * v[i];
    }
  }
}

std::pair<Tensor<float>, Tensor<float>> to_batch(const std::vector<Sample>& samples) {
  if (samples.empty()) throw DimensionError("empty batch");
  const std::size_t h = samples[0].image.height, w = samples[0].image.width, hw = h * w;
  Tensor<float> image(Shape{samples.size(), 3, h, w});
  Tensor<float> mask(Shape{samples.size(), 1, h, w});
  auto iv = image.mutable_values();
  auto mv = mask.mutable_values();
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& s = samples[n];
    if (s.image.height != h || s.image.width != w || s.mask.height != h || s.mask.width != w) {
      throw DimensionError("batch samples differ in size");
    }
    for (std::size_t i = 0; i < hw; ++i) {
      for (std::size_t c = 0; c < 3; ++c) iv[(n * 3 + c) * hw + i] = float(s.image.values[i * 3 + c]);
      mv[n * hw + i] = float(s.mask.values[i]);
    }
  }
  return {image, mask};
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest, double val_fraction,
                                                           std::uint64_t seed) {
  const std::size_t n = manifest.entries.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(seed ^ 0x5eedf00dULL);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_val = std::size_t(std::floor(double(n) * val_fraction));
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  DatasetManifest train = manifest, val = manifest;
  train.entries.clear();
  val.entries.clear();
  train.split = "train";
  val.split = "val";
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? val : train).entries.push_back(manifest.entries[i]);
  return {train, val};
}

namespace {

std::unique_ptr<GraftNet<float>> clone_net(const GraftNet<float>& net) {
  auto out = std::make_unique<GraftNet<float>>(net.config());
  auto& dst = out->params().entries();
  const auto& src = net.params().entries();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto d = dst[i].tensor.mutable_values();
    const auto s = src[i].tensor.values();
    std::copy(s.begin(), s.end(), d.begin());
  }
  return out;
}

std::string breakdown_str(const LossBreakdown<float>& b, double total) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "total=%g bce_P=%g iou_P=%g agl=%g aux=%g", total, b.bce_p, b.iou_p, b.agl, b.aux);
  return buf;
}

double mean_mae(const std::vector<EvalRow>& rows) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (const auto& r : rows) s += r.result.mae;
  return s / double(rows.size());
}

}  // namespace

TrainResult train(const TrainConfig& config_in, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, Checkpoint& out, const TrainOptions& options) {
  TrainConfig config = config_in;
  validate_config(config);
  if (train_set.empty()) throw ConfigError("training set is empty");
  out.config = config;
  out.net = std::make_unique<GraftNet<float>>(config.model);
  auto& net = *out.net;
  Sgd sgd(net.params(), config.momentum, config.weight_decay);

  const std::size_t hw = config.model.input_hw;
  std::vector<Sample> fitted;
  if (!config.augment) {
    for (const auto& s : train_set) fitted.push_back(fit(s, hw));
  }

  const std::size_t n = train_set.size();
  const std::size_t bs = config.batch_size;
  // A trailing batch of one sample is dropped: batch norm needs two.
  const std::size_t batches = n / bs + ((n % bs) >= 2 ? 1 : 0);
  if (batches == 0) throw ConfigError("training set smaller than two samples");
  std::size_t total_steps = batches * config.epochs;
  const std::size_t schedule_steps = total_steps;
  if (options.max_steps > 0) total_steps = std::min(total_steps, options.max_steps);

  TrainResult result;
  SplitMix64 root(config.seed ^ 0x7a11c0deULL);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs && step < total_steps; ++epoch) {
    SplitMix64 erng = root.fork(epoch);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[erng.below(i)]);

    double epoch_loss = 0;
    std::size_t epoch_steps = 0;
    for (std::size_t b = 0; b < batches && step < total_steps; ++b, ++step) {
      const std::size_t begin = b * bs, end = std::min(n, begin + bs);
      std::vector<Sample> batch;
      if (config.augment) {
        const std::size_t side = config.jitter_quantum > 0 ? jitter_size(hw, config.jitter_quantum, erng) : hw;
        for (std::size_t i = begin; i < end; ++i) {
          SplitMix64 srng = erng.fork(order[i]);
          batch.push_back(augment(train_set[order[i]], srng, side));
        }
      } else {
        for (std::size_t i = begin; i < end; ++i) batch.push_back(fitted[order[i]]);
      }
      auto [image, mask] = to_batch(batch);

      const double lr_attn = learning_rate(step, schedule_steps, config.warmup_fraction, config.lr_backbone_attn);
      const double lr_other = learning_rate(step, schedule_steps, config.warmup_fraction, config.lr_other);
      sgd.zero_grad();
      Tape<float> tape;
      TapeScope<float> scope(&tape);
      LossBreakdown<float> loss;
      try {
        auto o = net.forward(image, true);
        loss = total_loss(o.pred, o.rp, o.sp, config.model.uses_agl() ? o.cam : Tensor<float>(), mask, config.beta);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step) + ": non-finite value in forward pass: " + e.what());
      }
      const double total = loss.total.item();
      if (!std::isfinite(total) || !std::isfinite(loss.bce_p) || !std::isfinite(loss.iou_p) ||
          !std::isfinite(loss.agl) || !std::isfinite(loss.aux)) {
        throw NumericError("step " + std::to_string(step) + ": non-finite loss (" + breakdown_str(loss, total) + ")");
      }
      try {
        tape.backward(loss.total);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step) + ": non-finite gradient (" + breakdown_str(loss, total) +
                           "): " + e.what());
      }
      sgd.step(lr_attn, lr_other);
      result.steps.push_back({step, lr_other, total, loss.bce_p, loss.iou_p, loss.agl, loss.aux});
      epoch_loss += total;
      ++epoch_steps;
    }
    EpochRecord rec{epoch, epoch_steps ? epoch_loss / double(epoch_steps) : 0.0,
                    std::numeric_limits<double>::quiet_NaN()};
    if (!val_set.empty()) rec.val_mae = mean_mae(evaluate_samples(net, val_set, options.threads));
    result.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  result.final_val_mae = result.epochs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                               : result.epochs.back().val_mae;
  return result;
}

TrainResult train_to_dir(const TrainConfig& config, const DatasetManifest& data, const DatasetManifest* val,
                         const std::string& out_dir, const TrainOptions& options) {
  if (data.entries.empty()) throw ConfigError("training manifest is empty");
  DatasetManifest train_part = data, val_part;
  if (val != nullptr) {
    val_part = *val;
  } else if (config.val_fraction > 0) {
    std::tie(train_part, val_part) = split_manifest(data, config.val_fraction, config.seed);
  }
  const auto train_samples = load_samples(train_part, options.threads);
  const auto val_samples = load_samples(val_part, options.threads);
  Checkpoint ckpt;
  auto result = train(config, train_samples, val_samples, ckpt, options);
  fs::create_directories(out_dir);
  save_checkpoint(out_dir, ckpt);
  write_loss_csv((fs::path(out_dir) / "loss.csv").string(), result.steps);
  write_epoch_csv((fs::path(out_dir) / "epochs.csv").string(), result.epochs);
  write_manifest((fs::path(out_dir) / "train_manifest.tsv").string(), train_part);
  write_manifest((fs::path(out_dir) / "val_manifest.tsv").string(), val_part);
  return result;
}

namespace {

std::string shape_field(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
  if (!ckpt.net) throw StateError("checkpoint has no network");
  const fs::path root(dir);
  fs::create_directories(root / "params");
  {
    std::ofstream cfg(root / "config.txt");
    if (!cfg) throw IoError((root / "config.txt").string() + ": cannot open for writing");
    cfg << format_config(ckpt.config);
  }
  std::ofstream index(root / "params" / "index.tsv");
  if (!index) throw IoError((root / "params" / "index.tsv").string() + ": cannot open for writing");
  for (const auto& e : ckpt.net->params().entries()) {
    const std::string file = e.name + ".gtns";
    gtns::save(root / "params" / file, e.tensor);
    index << e.name << '\t' << file << '\t' << (e.trainable ? "param" : "buffer") << '\t' << shape_field(e.tensor.shape())
          << '\n';
  }
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  Checkpoint ckpt;
  ckpt.config = load_config((root / "config.txt").string());
  ckpt.net = std::make_unique<GraftNet<float>>(ckpt.config.model);
  const auto index_path = (root / "params" / "index.tsv").string();
  std::ifstream index(index_path);
  if (!index) throw IoError(index_path + ": cannot open");
  std::string line;
  std::size_t loaded = 0;
  auto& entries = ckpt.net->params().entries();
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name, file, kind, shape;
    std::getline(ss, name, '\t');
    std::getline(ss, file, '\t');
    std::getline(ss, kind, '\t');
    std::getline(ss, shape, '\t');
    auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
    if (it == entries.end()) throw IoError(index_path + ": unknown parameter " + name);
    const auto t = gtns::load<float>(root / "params" / file);
    if (t.shape() != it->tensor.shape()) {
      throw IoError(index_path + ": " + name + " has shape " + shape_field(t.shape()) + ", model expects " +
                    shape_field(it->tensor.shape()));
    }
    auto dst = it->tensor.mutable_values();
    const auto src = t.values();
    std::copy(src.begin(), src.end(), dst.begin());
    ++loaded;
  }
  if (loaded != entries.size()) {
    throw IoError(index_path + ": expected " + std::to_string(entries.size()) + " tensors, found " +
                  std::to_string(loaded));
  }
  return ckpt;
}

GrayMap predict(GraftNet<float>& net, const Image& image, std::size_t out_height, std::size_t out_width) {
  const std::size_t hw = net.config().input_hw;
  Sample s;
  s.image = resize_image(gray_to_rgb(image), hw, hw);
  s.mask = GrayMap(hw, hw);
  TapeScope<float> no_tape(nullptr);
  const auto o = net.forward(to_batch({s}).first, false);
  return resize_map(to_gray_map(o.pred, 0), out_height, out_width);
}

std::vector<EvalRow> evaluate_samples(GraftNet<float>& net, const std::vector<Sample>& samples, std::size_t threads) {
  std::vector<EvalRow> rows(samples.size());
  threads = std::max<std::size_t>(1, std::min(threads, samples.size()));
  auto run = [&](GraftNet<float>& model, std::size_t i) {
    const auto& s = samples[i];
    rows[i] = {s.id, evaluate(predict(model, s.image, s.mask.height, s.mask.width), s.mask)};
  };
  if (threads == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) run(net, i);
    return rows;
  }
  // Forward passes keep per-module scratch state, so each worker gets a copy.
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        auto local = clone_net(net);
        for (std::size_t i = next++; i < samples.size(); i = next++) run(*local, i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

namespace {

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  return out;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  auto out = open_csv(path);
  out << "sample_id,mae,f_max,s,e,bde\n";
  auto line = [&](const std::string& id, const EvalResult& r) {
    out << id << ',' << num(r.mae) << ',' << num(r.f_max) << ',' << num(r.s_measure) << ',' << num(r.e_measure) << ','
        << num(r.bde) << '\n';
  };
  std::vector<EvalResult> all;
  for (const auto& r : rows) {
    line(r.id, r.result);
    all.push_back(r.result);
  }
  if (!all.empty()) line("aggregate", aggregate(all));
}

void write_loss_csv(const std::string& path, const std::vector<StepRecord>& steps) {
  auto out = open_csv(path);
  out << "step,total,bce_P,iou_P,agl,aux\n";
  for (const auto& s : steps) {
    out << s.step << ',' << num(s.total) << ',' << num(s.bce_p) << ',' << num(s.iou_p) << ',' << num(s.agl) << ','
        << num(s.aux) << '\n';
  }
}

void write_epoch_csv(const std::string& path, const std::vector<EpochRecord>& epochs) {
  auto out = open_csv(path);
  out << "epoch,train_loss,val_mae\n";
  for (const auto& e : epochs) out << e.epoch << ',' << num(e.train_loss) << ',' << num(e.val_mae) << '\n';
}

void infer_to_file(GraftNet<float>& net, const std::string& image_path, const std::string& out_path) {
  const Image img = read_pnm(image_path);
  write_pgm(out_path, predict(net, img, img.height, img.width));
}

}  // namespace graftnet
