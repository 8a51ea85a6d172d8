#include "cfd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "cfd/checkpoint.hpp"
#include "cfd/explain.hpp"
#include "cfd/losses.hpp"

namespace cfd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string csv_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

MetricsRow compute_metrics(const ScoreSet& scores) {
  MetricsRow row;
  const ThresholdErrors te = fixed_threshold_errors(scores, 0.5);
  row.ace = te.ace;
  row.apcer = te.apcer;
  row.bpcer = te.bpcer;
  row.acer = te.acer;
  row.tdr = tdr_at_fdr(scores, 0.01);
  row.eer = eer(scores);
  return row;
}

std::string PhaseTiming::to_text() const {
  std::ostringstream os;
  os << "phase,seconds\n";
  os << "data," << data_s << "\n";
  os << "importance," << importance_s << "\n";
  os << "gradient," << gradient_s << "\n";
  os << "eval," << eval_s << "\n";
  os << "total," << total_s << "\n";
  return os.str();
}

std::string RunReport::to_text() const {
  std::ostringstream os;
  os << "# training report\n";
  os << "[config]\n" << config_echo;
  os << "[epoch_loss]\n";
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < epoch_losses.size(); ++e)
    os << (e + 1) << "," << csv_double(epoch_losses[e]) << "\n";
  os << "[final_metrics]\n";
  os << "ace,tdr_at_fdr1,eer,apcer,bpcer,acer\n";
  os << csv_double(final_metrics.ace) << "," << csv_double(final_metrics.tdr)
     << "," << csv_double(final_metrics.eer) << ","
     << csv_double(final_metrics.apcer) << "," << csv_double(final_metrics.bpcer)
     << "," << csv_double(final_metrics.acer) << "\n";
  os << "[dis]\n";
  for (std::size_t i = 0; i < dis.size(); ++i)
    os << (i ? "," : "") << csv_double(dis[i]);
  os << "\n[mask_keep]\n";
  for (std::size_t i = 0; i < mask_keep.size(); ++i)
    os << (i ? "," : "") << int(mask_keep[i]);
  os << "\n";
  return os.str();
}

ScoreSet score_dataset(const Model& model, const Dataset& dataset,
                       const std::vector<std::uint8_t>* keep) {
  const std::int64_t n = dataset.size();
  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(n * dataset.channels * dataset.height *
                                     dataset.width));
  for (const Sample& s : dataset.samples)
    x.insert(x.end(), s.image.values.begin(), s.image.values.end());
  const std::vector<double> scores = eval_spoof_scores(model, x, n, keep);
  ScoreSet out;
  out.entries.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    out.entries.push_back({scores[static_cast<std::size_t>(i)],
                           dataset.samples[static_cast<std::size_t>(i)].attack != 0});
  return out;
}

TrainResult train_run(const RunConfig& cfg) {
  cfg.validate();
  const auto t_start = Clock::now();

  TrainResult result;
  result.data = synth_generate(cfg.synth);
  result.model = init_model(cfg.model, cfg.seed);
  result.dis = ChannelDistance(cfg.model.feature_channels);

  const std::int64_t c = cfg.model.feature_channels;
  const bool use_denoise = variant_uses_denoise(cfg.variant);

  auto params = result.model.all_params();
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  AdamState adam = make_adam(params, acfg);

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng_batch(cfg.seed, Stream::kBatch, static_cast<std::uint64_t>(epoch));
    const auto batches =
        balanced_batches(result.data.train, cfg.batch_size, rng_batch);
    double loss_sum = 0.0;

    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto t0 = Clock::now();
      const auto& batch = batches[b];
      const std::int64_t bn = static_cast<std::int64_t>(batch.size());
      Rng rng_aug(cfg.seed, Stream::kAugment,
                  (static_cast<std::uint64_t>(epoch) << 20) | b);
      std::vector<double> flat;
      flat.reserve(static_cast<std::size_t>(bn * cfg.model.input_ch *
                                            cfg.model.input_h * cfg.model.input_w));
      std::vector<int> attack;
      attack.reserve(batch.size());
      for (std::int64_t idx : batch) {
        const Sample& s = result.data.train.samples[static_cast<std::size_t>(idx)];
        const Tensor img = augment(s.image, cfg.augment, rng_aug);
        flat.insert(flat.end(), img.values.begin(), img.values.end());
        attack.push_back(s.attack);
      }
      const std::vector<int> y = liveness_labels(attack);
      Tensor x({bn, cfg.model.input_ch, cfg.model.input_h, cfg.model.input_w},
               std::move(flat));
      result.timing.data_s += seconds_since(t0);

      t0 = Clock::now();
      Tape tape;
      BackboneRun run(tape, result.model, /*trainable=*/true);
      tape.leaf(x);
      const Tensor f = run.generator(x);
      const Tensor e = run.embedding(f);
      const Tensor o = run.classifier(e);
      result.timing.gradient_s += seconds_since(t0);

      DenoiseMask mask = DenoiseMask::all_kept(c);
      if (use_denoise) {
        t0 = Clock::now();
        importance_update(result.model, f, result.dis, cfg.dis_decay);
        mask = cfg.variant == Variant::kCfdRegularize
                   ? select_bottomk(result.dis, cfg.k)
                   : select_topk(result.dis, cfg.k);
        result.timing.importance_s += seconds_since(t0);
      }

      t0 = Clock::now();
      Tensor loss;
      switch (cfg.variant) {
        case Variant::kBaseline:
          loss = tape.scale(cross_entropy(tape, o, y), cfg.loss.lambda1);
          break;
        case Variant::kPaOnly: {
          const Tensor ce = tape.scale(cross_entropy(tape, o, y), cfg.loss.lambda1);
          const Tensor pa = tape.scale(
              pa_adaptation(tape, e, attack, cfg.loss.margin), cfg.loss.lambda2);
          loss = tape.add(ce, pa);
          break;
        }
        case Variant::kCfdOnly: {
          const Tensor f2 = suppress_channels(tape, f, mask);
          const Tensor o2 = run.classifier(run.embedding(f2));
          loss = tape.add(tape.scale(cross_entropy(tape, o, y), cfg.loss.lambda1),
                          tape.scale(cross_entropy(tape, o2, y), cfg.loss.lambda3));
          break;
        }
        case Variant::kCfdRegularize:
        case Variant::kFull: {
          const Tensor f2 = suppress_channels(tape, f, mask);
          const Tensor e2 = run.embedding(f2);
          const Tensor o2 = run.classifier(e2);
          loss = combined_loss(tape, o, o2, e2, y, attack, cfg.loss);
          break;
        }
      }
      tape.backward(loss);
      auto grads = run.take_param_grads();
      for (std::size_t i = 0; i < params.size(); ++i)
        params[i]->grad = std::move(grads[i]);
      adam_step(params, adam);
      loss_sum += loss.values[0];
      result.timing.gradient_s += seconds_since(t0);
    }
    result.report.epoch_losses.push_back(loss_sum /
                                         static_cast<double>(batches.size()));
    if (!result.model.all_finite())
      throw std::runtime_error("training diverged: non-finite parameter after epoch " +
                               std::to_string(epoch));
  }

  result.mask = use_denoise ? (cfg.variant == Variant::kCfdRegularize
                                   ? select_bottomk(result.dis, cfg.k)
                                   : select_topk(result.dis, cfg.k))
                            : DenoiseMask::all_kept(c);

  const auto t_eval = Clock::now();
  const ScoreSet scores = score_dataset(result.model, result.data.test,
                                        use_denoise ? &result.mask.keep : nullptr);
  result.report.final_metrics = compute_metrics(scores);
  result.timing.eval_s = seconds_since(t_eval);

  result.report.dis = result.dis.dis;
  result.report.mask_keep = result.mask.keep;
  result.report.config_echo = serialize_run_config(cfg);
  result.timing.total_s = seconds_since(t_start);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint bundle
// ---------------------------------------------------------------------------

namespace {

std::filesystem::path sidecar_config_path(const std::filesystem::path& ckpt) {
  std::filesystem::path p = ckpt;
  p.replace_extension(".cfg");
  return p;
}

}  // namespace

void save_checkpoint_bundle(const std::filesystem::path& ckpt_path,
                            const Model& model, const ChannelDistance& dis,
                            const DenoiseMask& mask, const RunConfig& cfg) {
  std::vector<NamedArray> arrays;
  const auto names = model.param_names();
  const auto params = model.all_params();
  for (std::size_t i = 0; i < params.size(); ++i)
    arrays.push_back({names[i], params[i]->shape, params[i]->values});
  arrays.push_back({"dis", {dis.channels()}, dis.dis});
  std::vector<double> keep(mask.keep.begin(), mask.keep.end());
  arrays.push_back({"mask_keep", {mask.channels()}, keep});
  write_container(ckpt_path, arrays);
  write_file_atomic(sidecar_config_path(ckpt_path), serialize_run_config(cfg));
}

CheckpointBundle load_checkpoint_bundle(const std::filesystem::path& ckpt_path) {
  CheckpointBundle bundle;
  bundle.config = load_run_config(sidecar_config_path(ckpt_path));
  bundle.model = init_model(bundle.config.model, bundle.config.seed);
  const auto arrays = read_container(ckpt_path);

  const auto names = bundle.model.param_names();
  auto params = bundle.model.all_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedArray* a = find_array(arrays, names[i]);
    if (!a)
      throw std::runtime_error(ckpt_path.string() + ": missing parameter array '" +
                               names[i] + "'");
    if (a->shape != params[i]->shape)
      throw std::runtime_error(ckpt_path.string() + ": parameter '" + names[i] +
                               "' has shape " + shape_str(a->shape) +
                               ", config implies " + shape_str(params[i]->shape));
    params[i]->values = a->values;
  }

  const NamedArray* dis = find_array(arrays, "dis");
  const NamedArray* keep = find_array(arrays, "mask_keep");
  const std::int64_t c = bundle.config.model.feature_channels;
  if (!dis || dis->shape != Shape({c}))
    throw std::runtime_error(ckpt_path.string() + ": missing or mis-sized 'dis'");
  if (!keep || keep->shape != Shape({c}))
    throw std::runtime_error(ckpt_path.string() + ": missing or mis-sized 'mask_keep'");
  bundle.dis.dis = dis->values;
  bundle.mask.keep.assign(c, 0);
  bundle.mask.k = 0;
  for (std::int64_t i = 0; i < c; ++i)
    if (keep->values[static_cast<std::size_t>(i)] != 0.0) {
      bundle.mask.keep[static_cast<std::size_t>(i)] = 1;
      bundle.mask.k += 1;
    }
  return bundle;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_train(const std::filesystem::path& config_path,
               const std::filesystem::path& out_dir,
               std::optional<std::uint64_t> seed_override) {
  RunConfig cfg = load_run_config(config_path);
  if (seed_override) {
    cfg.seed = *seed_override;
    cfg.synth.seed = *seed_override;
    cfg.validate();
  }
  const TrainResult result = train_run(cfg);
  std::filesystem::create_directories(out_dir);
  save_checkpoint_bundle(out_dir / "model.ckpt", result.model, result.dis,
                         result.mask, cfg);
  write_file_atomic(out_dir / "report.txt", result.report.to_text());
  write_file_atomic(out_dir / "timing.txt", result.timing.to_text());
}

void cmd_eval(const std::filesystem::path& ckpt_path,
              const std::filesystem::path& data_path, bool no_mask,
              const std::filesystem::path& out_dir) {
  const CheckpointBundle bundle = load_checkpoint_bundle(ckpt_path);
  const Dataset dataset = load_dataset(data_path);
  if (dataset.channels != bundle.config.model.input_ch ||
      dataset.height != bundle.config.model.input_h ||
      dataset.width != bundle.config.model.input_w)
    throw std::runtime_error(
        "eval: dataset images are " + std::to_string(dataset.width) + "x" +
        std::to_string(dataset.height) + "x" + std::to_string(dataset.channels) +
        ", checkpoint expects " + std::to_string(bundle.config.model.input_w) +
        "x" + std::to_string(bundle.config.model.input_h) + "x" +
        std::to_string(bundle.config.model.input_ch));

  const bool apply_mask =
      variant_uses_denoise(bundle.config.variant) && !no_mask;
  const ScoreSet scores = score_dataset(bundle.model, dataset,
                                        apply_mask ? &bundle.mask.keep : nullptr);
  const MetricsRow row = compute_metrics(scores);

  std::filesystem::create_directories(out_dir);
  std::vector<std::uint32_t> ids;
  for (const Sample& s : dataset.samples) ids.push_back(s.id);
  write_scores_csv(out_dir / "scores.csv", scores, ids);
  write_roc_csv(out_dir / "roc.csv", roc(scores));
  std::ostringstream os;
  os << "ace,tdr_at_fdr1,eer,apcer,bpcer,acer\n";
  os << csv_double(row.ace) << "," << csv_double(row.tdr) << ","
     << csv_double(row.eer) << "," << csv_double(row.apcer) << ","
     << csv_double(row.bpcer) << "," << csv_double(row.acer) << "\n";
  write_file_atomic(out_dir / "metrics.csv", os.str());
}

void cmd_ablate(const std::filesystem::path& config_path,
                const std::vector<std::uint64_t>& seeds,
                const std::filesystem::path& out_dir) {
  if (seeds.size() < 3)
    throw std::invalid_argument("ablate: need at least 3 seeds, got " +
                                std::to_string(seeds.size()));
  const RunConfig base = load_run_config(config_path);
  const Variant variants[] = {Variant::kBaseline, Variant::kPaOnly,
                              Variant::kCfdOnly, Variant::kCfdRegularize,
                              Variant::kFull};

  std::ostringstream cells;
  cells << "variant,seed,ace,tdr_at_fdr1,dis_max\n";
  std::map<Variant, std::vector<double>> ace_by, tdr_by;
  for (std::uint64_t seed : seeds) {
    for (Variant v : variants) {
      RunConfig cfg = base;
      cfg.seed = seed;
      cfg.synth.seed = seed;  // all variants share one split per seed
      cfg.variant = v;
      const TrainResult r = train_run(cfg);
      const double dis_max =
          *std::max_element(r.dis.dis.begin(), r.dis.dis.end());
      cells << variant_name(v) << "," << seed << ","
            << csv_double(r.report.final_metrics.ace) << ","
            << csv_double(r.report.final_metrics.tdr) << ","
            << csv_double(dis_max) << "\n";
      ace_by[v].push_back(r.report.final_metrics.ace);
      tdr_by[v].push_back(r.report.final_metrics.tdr);
    }
  }

  auto mean_sd = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size() - 1);
    return std::pair<double, double>(mean, std::sqrt(var));
  };

  std::ostringstream table;
  table << "variant,ace_mean,ace_sd,tdr_mean,tdr_sd\n";
  for (Variant v : variants) {
    const auto [am, as] = mean_sd(ace_by[v]);
    const auto [tm, ts] = mean_sd(tdr_by[v]);
    table << variant_name(v) << "," << csv_double(am) << "," << csv_double(as)
          << "," << csv_double(tm) << "," << csv_double(ts) << "\n";
  }

  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "ablation.csv", table.str());
  write_file_atomic(out_dir / "ablation_cells.csv", cells.str());
}

void cmd_explain(const std::filesystem::path& ckpt_path,
                 const std::filesystem::path& data_path,
                 const std::vector<std::uint32_t>& ids,
                 const std::filesystem::path& out_dir) {
  if (ids.empty()) throw std::invalid_argument("explain: no sample ids given");
  const CheckpointBundle bundle = load_checkpoint_bundle(ckpt_path);
  const Dataset dataset = load_dataset(data_path);

  std::filesystem::create_directories(out_dir);
  for (std::uint32_t id : ids) {
    const Sample* sample = nullptr;
    for (const Sample& s : dataset.samples)
      if (s.id == id) {
        sample = &s;
        break;
      }
    if (!sample)
      throw std::invalid_argument("explain: unknown sample id " + std::to_string(id));
    for (int cls : {0, 1}) {
      const CAMap map = grad_cam(bundle.model, sample->image, cls);
      const std::string name =
          std::to_string(id) + "_" + (cls == 0 ? "live" : "spoof") + ".pgm";
      write_cam_pgm(out_dir / name, map);
    }
  }

  std::ostringstream os;
  os << "removed,accuracy,order\n";
  for (auto order : {RemovalOrder::kImportanceDescending,
                     RemovalOrder::kImportanceAscending}) {
    const auto curve = channel_removal_curve(bundle.model, bundle.dis, dataset, order);
    const char* tag =
        order == RemovalOrder::kImportanceDescending ? "descending" : "ascending";
    for (const RemovalPoint& p : curve)
      os << p.removed << "," << csv_double(p.accuracy) << "," << tag << "\n";
  }
  write_file_atomic(out_dir / "removal_curve.csv", os.str());
}

}  // namespace cfd
