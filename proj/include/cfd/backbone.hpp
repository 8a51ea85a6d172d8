#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfd/tensor.hpp"

namespace cfd {

struct ConvStage {
  std::int64_t out_channels = 0;
  std::int64_t stride = 1;
};

// Toy backbone realizing the generator / embedding / classifier role split.
// All generator and embedding convolutions are 3x3 with zero padding 1.
struct ModelConfig {
  std::int64_t input_h = 32;
  std::int64_t input_w = 32;
  std::int64_t input_ch = 1;
  std::int64_t feature_channels = 16;  // channel count c of the feature map f
  std::int64_t embed_dim = 32;
  std::int64_t n_classes = 2;          // fixed: live, spoof
  std::vector<ConvStage> generator_stages = {{8, 2}, {16, 2}, {16, 1}};

  void validate() const;
  std::int64_t feature_h() const;
  std::int64_t feature_w() const;

  // Structural-parity configuration with c=160 feature channels.
  static ModelConfig paper_scale();
};

struct NamedParam {
  std::string name;
  Tensor value;
};

struct Model {
  ModelConfig config;
  std::vector<NamedParam> theta_g;
  std::vector<NamedParam> theta_e;
  std::vector<NamedParam> theta_c;

  std::vector<Tensor*> all_params();
  std::vector<const Tensor*> all_params() const;
  std::vector<std::string> param_names() const;
  bool all_finite() const;
};

// Deterministic fan-in-scaled Gaussian initialization, zero biases.
Model init_model(const ModelConfig& config, std::uint64_t seed);

// One forward builder per tape. Parameters are snapshotted on construction so
// concurrent runs over the same model never touch its tensors; gradients land
// on the snapshots and are fetched with take_param_grads().
class BackboneRun {
 public:
  BackboneRun(Tape& tape, const Model& model, bool trainable);

  // x [N,Cin,H,W] -> f [N,c,fh,fw]
  Tensor generator(const Tensor& x);
  // f [N,c,fh,fw] -> e [N,embed_dim]
  Tensor embedding(const Tensor& f);
  // e [N,embed_dim] -> o [N,2], class 0 = live, 1 = spoof
  Tensor classifier(const Tensor& e);

  // Gradients in Model::all_params() order, after Tape::backward.
  std::vector<std::vector<double>> take_param_grads();

 private:
  Tape& tape_;
  const ModelConfig& config_;
  std::vector<Tensor> params_;  // snapshots, leafed onto the tape
  std::size_t g_begin_ = 0, e_begin_ = 0, c_begin_ = 0;
};

// Gradient-free value-path forwards used for scoring, channel-importance
// evaluation and inference. Thread-safe for concurrent calls on one model.

// x flat [n,Cin,H,W] -> f flat [n,c,fh,fw]
std::vector<double> eval_generator(const Model& model,
                                   const std::vector<double>& x,
                                   std::int64_t n);

// f flat [n,c,fh,fw] -> softmax probabilities flat [n,2] (live, spoof).
// When emb_out is non-null it receives the embeddings flat [n,embed_dim].
std::vector<double> eval_head_probs(const Model& model,
                                    const std::vector<double>& f,
                                    std::int64_t n,
                                    std::vector<double>* emb_out = nullptr);

// Spoof probabilities for a batch of images flat [n,Cin,H,W]. When keep is
// non-null it has length c and channels with keep[i]==0 are zeroed in f.
std::vector<double> eval_spoof_scores(const Model& model,
                                      const std::vector<double>& x,
                                      std::int64_t n,
                                      const std::vector<std::uint8_t>* keep = nullptr);

// Clean-path spoof probability r[1] of a single [Cin,H,W] image.
double spoof_score(const Model& model, const Tensor& image);

}  // namespace cfd
