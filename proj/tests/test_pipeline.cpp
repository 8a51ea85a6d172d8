#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfd/checkpoint.hpp"
#include "cfd/trainer.hpp"

using namespace cfd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / "cfd_pipeline" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small configuration for fast smoke runs.
std::string micro_config(const std::string& variant, std::uint64_t seed) {
  return "input_h = 16\n"
         "input_w = 16\n"
         "image_size = 16\n"
         "generator_stages = 4:2,8:2,8:1\n"
         "feature_channels = 8\n"
         "embed_dim = 8\n"
         "n_materials = 3\n"
         "train_per_class = 9\n"
         "test_per_class = 8\n"
         "k = 3\n"
         "epochs = 2\n"
         "batch_size = 9\n"
         "cutout_count = 2\n"
         "seed = " + std::to_string(seed) + "\n"
         "variant = " + variant + "\n";
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("run config parses, echoes, and validates") {
  const RunConfig cfg = parse_run_config(micro_config("full", 3), "<test>");
  CHECK(cfg.model.feature_channels == 8);
  CHECK(cfg.k == 3);
  CHECK(cfg.variant == Variant::kFull);
  CHECK(cfg.seed == 3);
  CHECK(cfg.synth.seed == 3);

  // canonical echo round-trips
  const std::string echo = serialize_run_config(cfg);
  const RunConfig back = parse_run_config(echo, "<echo>");
  CHECK(serialize_run_config(back) == echo);

  // comments and blank lines are fine
  const RunConfig c2 = parse_run_config("# comment\n\nseed = 7 # trailing\n", "<t>");
  CHECK(c2.seed == 7);

  CHECK_THROWS_WITH_AS(parse_run_config("bogus_key = 1\n", "<t>"),
                       doctest::Contains("unknown key"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_run_config("seed = 1\nseed = 2\n", "<t>"),
                       doctest::Contains("duplicate"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_run_config("epochs = zero\n", "<t>"),
                       doctest::Contains(":1"), std::invalid_argument);
  // k > feature_channels rejected before any work
  CHECK_THROWS_WITH_AS(parse_run_config("k = 99\n", "<t>"),
                       doctest::Contains("k="), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("variant = nonsense\n", "<t>"),
                  std::invalid_argument);
}

TEST_CASE("train_run smoke: finite losses, mask size, report fields") {
  const RunConfig cfg = parse_run_config(micro_config("full", 5), "<test>");
  const TrainResult r = train_run(cfg);

  REQUIRE(r.report.epoch_losses.size() == 2);
  for (double l : r.report.epoch_losses) CHECK(std::isfinite(l));
  CHECK(r.mask.k == 3);
  std::int64_t kept = 0;
  for (auto b : r.mask.keep) kept += b;
  CHECK(kept == 3);
  CHECK(r.dis.batches_seen > 0);
  CHECK(r.report.dis.size() == 8);
  CHECK(r.model.all_finite());

  // dis is active for the full variant, inactive for the baseline
  double dis_max = 0;
  for (double v : r.report.dis) dis_max = std::max(dis_max, v);
  CHECK(dis_max > 0.0);

  const RunConfig bcfg = parse_run_config(micro_config("baseline", 5), "<test>");
  const TrainResult rb = train_run(bcfg);
  for (double v : rb.report.dis) CHECK(v == 0.0);
  CHECK(rb.dis.batches_seen == 0);
  // baseline keeps everything at inference
  CHECK(rb.mask.k == 8);
}

TEST_CASE("cmd_train is byte-deterministic and checkpoints round-trip") {
  const fs::path dir = temp_dir("determinism");
  const fs::path cfg_path = dir / "run.cfg";
  write_file_atomic(cfg_path, micro_config("full", 11));

  cmd_train(cfg_path, dir / "a", std::nullopt);
  cmd_train(cfg_path, dir / "b", std::nullopt);
  CHECK(read_file(dir / "a" / "model.ckpt") == read_file(dir / "b" / "model.ckpt"));
  CHECK(read_file(dir / "a" / "report.txt") == read_file(dir / "b" / "report.txt"));
  CHECK(read_file(dir / "a" / "model.cfg") == read_file(dir / "b" / "model.cfg"));

  // seed override changes the artifacts
  cmd_train(cfg_path, dir / "c", 12);
  CHECK(read_file(dir / "a" / "model.ckpt") != read_file(dir / "c" / "model.ckpt"));

  // bundle round-trip preserves parameters, dis, and mask
  const CheckpointBundle bundle = load_checkpoint_bundle(dir / "a" / "model.ckpt");
  const RunConfig cfg = load_run_config(cfg_path);
  const TrainResult r = train_run(cfg);
  const auto pa = bundle.model.all_params();
  const auto pb = r.model.all_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->values == pb[i]->values);
  CHECK(bundle.dis.dis == r.dis.dis);
  CHECK(bundle.mask.keep == r.mask.keep);
  CHECK(bundle.mask.k == r.mask.k);
}

TEST_CASE("cmd_eval emits consistent CSV surfaces") {
  const fs::path dir = temp_dir("eval");
  const fs::path cfg_path = dir / "run.cfg";
  write_file_atomic(cfg_path, micro_config("full", 21));
  cmd_train(cfg_path, dir / "train", std::nullopt);

  // export the test split for evaluation
  const RunConfig cfg = load_run_config(cfg_path);
  const SynthSplit split = synth_generate(cfg.synth);
  save_dataset(split.test, dir / "test.ds");

  cmd_eval(dir / "train" / "model.ckpt", dir / "test.ds", false, dir / "eval");

  // scores fed back through the metrics module give identical metrics
  const ScoreSet scores = read_scores_csv(dir / "eval" / "scores.csv");
  const MetricsRow recomputed = compute_metrics(scores);
  const std::string metrics = read_file(dir / "eval" / "metrics.csv");
  std::istringstream ms(metrics);
  std::string header, row;
  std::getline(ms, header);
  std::getline(ms, row);
  CHECK(header == "ace,tdr_at_fdr1,eer,apcer,bpcer,acer");
  std::vector<double> vals;
  std::stringstream rs(row);
  std::string cell;
  while (std::getline(rs, cell, ',')) vals.push_back(std::stod(cell));
  REQUIRE(vals.size() == 6);
  CHECK(vals[0] == doctest::Approx(recomputed.ace).epsilon(1e-12));
  CHECK(vals[1] == doctest::Approx(recomputed.tdr).epsilon(1e-12));
  CHECK(vals[2] == doctest::Approx(recomputed.eer).epsilon(1e-12));
  // ACER column equals (APCER+BPCER)/2
  CHECK(vals[5] == (vals[3] + vals[4]) / 2.0);

  // --no-mask changes scores for a denoising variant
  cmd_eval(dir / "train" / "model.ckpt", dir / "test.ds", true, dir / "eval_nomask");
  const ScoreSet s2 = read_scores_csv(dir / "eval_nomask" / "scores.csv");
  bool any_diff = false;
  for (std::size_t i = 0; i < s2.entries.size(); ++i)
    any_diff |= s2.entries[i].score != scores.entries[i].score;
  CHECK(any_diff);

  // shape mismatch rejected
  Dataset small;
  small.channels = 1;
  small.height = 8;
  small.width = 8;
  Sample s;
  s.image = Tensor::zeros({1, 8, 8});
  s.attack = 0;
  s.id = 0;
  small.samples.push_back(s);
  Sample sp = small.samples[0];
  sp.attack = 1;
  sp.id = 1;
  small.samples.push_back(sp);
  save_dataset(small, dir / "small.ds");
  CHECK_THROWS_AS(
      cmd_eval(dir / "train" / "model.ckpt", dir / "small.ds", false, dir / "bad"),
      std::runtime_error);
}

TEST_CASE("cmd_explain emits maps and curves deterministically") {
  const fs::path dir = temp_dir("explain");
  const fs::path cfg_path = dir / "run.cfg";
  write_file_atomic(cfg_path, micro_config("full", 31));
  cmd_train(cfg_path, dir / "train", std::nullopt);

  const RunConfig cfg = load_run_config(cfg_path);
  const SynthSplit split = synth_generate(cfg.synth);
  save_dataset(split.test, dir / "test.ds");
  const std::uint32_t id0 = split.test.samples[0].id;
  const std::uint32_t id1 = split.test.samples[1].id;

  cmd_explain(dir / "train" / "model.ckpt", dir / "test.ds", {id0, id1}, dir / "x1");
  for (std::uint32_t id : {id0, id1}) {
    for (const char* cls : {"live", "spoof"}) {
      const fs::path pgm = dir / "x1" / (std::to_string(id) + "_" + cls + ".pgm");
      REQUIRE(fs::exists(pgm));
      std::int64_t h = 0, w = 0;
      (void)read_pgm(pgm, h, w);
      CHECK(h == cfg.model.feature_h());
      CHECK(w == cfg.model.feature_w());
    }
  }
  const std::string curve = read_file(dir / "x1" / "removal_curve.csv");
  CHECK(curve.rfind("removed,accuracy,order", 0) == 0);
  // both orders, r = 0..c each
  CHECK(std::count(curve.begin(), curve.end(), '\n') ==
        1 + 2 * (cfg.model.feature_channels + 1));

  // reruns are byte-identical
  cmd_explain(dir / "train" / "model.ckpt", dir / "test.ds", {id0, id1}, dir / "x2");
  CHECK(read_file(dir / "x1" / "removal_curve.csv") ==
        read_file(dir / "x2" / "removal_curve.csv"));
  CHECK(read_file(dir / "x1" / (std::to_string(id0) + "_live.pgm")) ==
        read_file(dir / "x2" / (std::to_string(id0) + "_live.pgm")));

  // unknown id rejected
  CHECK_THROWS_AS(cmd_explain(dir / "train" / "model.ckpt", dir / "test.ds",
                              {999999}, dir / "x3"),
                  std::invalid_argument);
}

TEST_CASE("full variant with k=c reduces to the PA-augmented clean step") {
  RunConfig cfg = parse_run_config(micro_config("full", 41), "<test>");
  cfg.k = cfg.model.feature_channels;
  const SynthSplit split = synth_generate(cfg.synth);
  const Model model = init_model(cfg.model, cfg.seed);

  // one batch, assembled without augmentation for exactness
  std::vector<double> flat;
  std::vector<int> attack;
  for (int i = 0; i < 6; ++i) {
    const Sample& s = split.train.samples[static_cast<std::size_t>(i * 5)];
    flat.insert(flat.end(), s.image.values.begin(), s.image.values.end());
    attack.push_back(s.attack);
  }
  const std::vector<int> y = liveness_labels(attack);

  // graph 1: full step with the all-true mask
  Tape t1;
  BackboneRun run1(t1, model, true);
  Tensor x1({6, 1, 16, 16}, flat);
  t1.leaf(x1);
  const Tensor f1 = run1.generator(x1);
  const Tensor e1 = run1.embedding(f1);
  const Tensor o1 = run1.classifier(e1);
  const Tensor f1m = suppress_channels(t1, f1, DenoiseMask::all_kept(8));
  const Tensor e1m = run1.embedding(f1m);
  const Tensor o1m = run1.classifier(e1m);
  const Tensor loss1 = combined_loss(t1, o1, o1m, e1m, y, attack, cfg.loss);
  t1.backward(loss1);
  const auto g1 = run1.take_param_grads();

  // graph 2: clean path only, PA on the clean embedding, doubled CE weight
  Tape t2;
  BackboneRun run2(t2, model, true);
  Tensor x2({6, 1, 16, 16}, flat);
  t2.leaf(x2);
  const Tensor f2 = run2.generator(x2);
  const Tensor e2 = run2.embedding(f2);
  const Tensor o2 = run2.classifier(e2);
  const Tensor ce = t2.scale(cross_entropy(t2, o2, y),
                             cfg.loss.lambda1 + cfg.loss.lambda3);
  const Tensor pa = t2.scale(pa_adaptation(t2, e2, attack, cfg.loss.margin),
                             cfg.loss.lambda2);
  const Tensor loss2 = t2.add(ce, pa);
  t2.backward(loss2);
  const auto g2 = run2.take_param_grads();

  CHECK(loss1.values[0] == doctest::Approx(loss2.values[0]).epsilon(1e-12));
  REQUIRE(g1.size() == g2.size());
  for (std::size_t p = 0; p < g1.size(); ++p)
    for (std::size_t i = 0; i < g1[p].size(); ++i)
      CHECK(g1[p][i] == doctest::Approx(g2[p][i]).epsilon(1e-10));
}

TEST_CASE("timing report carries the per-phase breakdown") {
  const RunConfig cfg = parse_run_config(micro_config("full", 51), "<test>");
  const TrainResult r = train_run(cfg);
  CHECK(r.timing.total_s > 0.0);
  CHECK(r.timing.importance_s > 0.0);
  CHECK(r.timing.gradient_s > 0.0);
  const std::string text = r.timing.to_text();
  CHECK(text.rfind("phase,seconds", 0) == 0);
  CHECK(text.find("importance,") != std::string::npos);
}
