#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sca/rng.hpp"
#include "sca/sca_layer.hpp"
#include "sca/tensor.hpp"

namespace sca {

struct ForwardOptions {
    bool training = false;
    Rng* rng = nullptr; // required by stochastic layers in training mode
};

class Layer {
  public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, const ForwardOptions& opts) const = 0;
    virtual std::vector<Tensor*> params() { return {}; }
    virtual void init(Rng&) {}
    virtual void post_update() {} // constraint projections after optimizer steps
    virtual nlohmann::json describe() const = 0;
    static std::unique_ptr<Layer> from_json(const nlohmann::json& j);
};

// y = (x - offset) / scale, applied elementwise. Keeping input normalization
// inside the model means attacks can perturb raw inputs and differentiate
// through the whole pipeline.
class NormalizeLayer : public Layer {
  public:
    NormalizeLayer(double offset, double scale);
    Tensor forward(const Tensor& x, const ForwardOptions&) const override;
    nlohmann::json describe() const override;

  private:
    double offset_, scale_;
};

// y = x W^T + b with W of shape [out, in].
class AffineLayer : public Layer {
  public:
    AffineLayer(std::size_t in, std::size_t out);
    Tensor forward(const Tensor& x, const ForwardOptions&) const override;
    std::vector<Tensor*> params() override { return {&w_, &b_}; }
    void init(Rng& rng) override; // uniform +-1/sqrt(in) for both W and b
    nlohmann::json describe() const override;
    const Tensor& weight() const { return w_; }
    const Tensor& bias() const { return b_; }

  private:
    std::size_t in_, out_;
    Tensor w_, b_;
};

class ReluLayer : public Layer {
  public:
    Tensor forward(const Tensor& x, const ForwardOptions&) const override;
    nlohmann::json describe() const override;
};

// Inverted dropout: in training mode, zeroes each unit with probability p and
// scales survivors by 1/(1-p); identity in eval mode.
class DropoutLayer : public Layer {
  public:
    explicit DropoutLayer(double p);
    Tensor forward(const Tensor& x, const ForwardOptions&) const override;
    nlohmann::json describe() const override;
    double p() const { return p_; }

  private:
    double p_;
};

// Wraps the unrolled self-consistent activation refinement as a layer.
class ScaLayer : public Layer {
  public:
    ScaLayer(std::size_t d_x, std::size_t d_a, double lambda, double eta, int steps);
    Tensor forward(const Tensor& x, const ForwardOptions&) const override;
    std::vector<Tensor*> params() override;
    void init(Rng& rng) override;
    void post_update() override; // re-project the coupling diagonal to zero
    nlohmann::json describe() const override;
    ScaParams& sca() { return p_; }
    const ScaParams& sca() const { return p_; }

  private:
    ScaParams p_;
};

class Model {
  public:
    Model() = default;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    void add(std::unique_ptr<Layer> layer);
    // Marks the layer whose output is the representation analysed by the
    // correlation tooling (typically the last hidden activation).
    void set_penultimate(int layer_index);
    int penultimate() const { return penultimate_; }

    Tensor forward(const Tensor& x, const ForwardOptions& opts = {},
                   Tensor* penultimate_out = nullptr) const;

    std::vector<Tensor*> params();
    std::size_t n_params() const;
    void init(std::uint64_t seed);
    void post_update();

    std::size_t n_layers() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }

    nlohmann::json describe() const;
    static Model from_json(const nlohmann::json& j);
    Model clone() const; // same architecture, deep-copied parameters

  private:
    std::vector<std::unique_ptr<Layer>> layers_;
    int penultimate_ = -1;
};

// Architecture presets.
//   "mlp"   in -> affine(h1) -> relu -> dropout -> affine(h2) -> relu
//           -> dropout -> affine(classes); default hidden {384, 384}
//   "sca"   in -> affine(h1) -> relu -> dropout -> sca(h1 -> d_a)
//           -> affine(classes); default hidden {384, 384}
//   "mlp5"  like "mlp" with default hidden {512, 256, 128, 64}
// The penultimate tag lands on the last hidden activation.
struct ModelSpec {
    std::string preset = "mlp";
    std::size_t input_dim = 784;
    std::size_t n_classes = 10;
    std::vector<std::size_t> hidden; // empty => preset default widths
    double dropout_p = 0.2;
    double norm_offset = 0.5, norm_scale = 0.5;
    double lambda = 1.0, eta = 0.1;
    int steps = 16;

    nlohmann::json to_json() const;
    static ModelSpec from_json(const nlohmann::json& j);
    void validate() const;
};

Model build_model(const ModelSpec& spec);

// ---- optimizer ----

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    void validate() const;
};

class Adam {
  public:
    Adam(std::vector<Tensor*> params, AdamConfig cfg);
    // Applies one bias-corrected update; grads must align with the parameter
    // list one-to-one in order and shape.
    void step(const std::vector<Tensor>& grads);
    double lr() const { return cfg_.lr; }
    void set_lr(double lr);
    long steps_taken() const { return t_; }

  private:
    std::vector<Tensor*> params_;
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---- validation-loss plateau schedule ----

struct ScheduleConfig {
    int halving_patience = 5;   // halve lr after this many epochs without improvement
    int early_stop_patience = 20; // stop after this many epochs without improvement
    void validate() const;
};

class PlateauSchedule {
  public:
    struct Decision {
        bool improved = false;
        bool halve = false;
        bool stop = false;
    };
    explicit PlateauSchedule(ScheduleConfig cfg);
    // Strict improvement resets the counter; the learning rate halves each
    // time the counter reaches a multiple of the halving patience.
    Decision observe(double val_loss);
    double best() const { return best_; }
    int epochs_since_best() const { return since_; }

  private:
    ScheduleConfig cfg_;
    double best_ = std::numeric_limits<double>::infinity();
    int since_ = 0;
};

// ---- evaluation ----

double accuracy(const Model& model, const Tensor& x, const std::vector<int>& y,
                std::size_t batch = 512);
double ce_loss(const Model& model, const Tensor& x, const std::vector<int>& y,
               std::size_t batch = 512);

// ---- training ----

struct DataSplit {
    Tensor train_x;
    std::vector<int> train_y;
    Tensor val_x;
    std::vector<int> val_y;
    void validate() const;
};

// Maps a clean batch to a perturbed batch (used for adversarial training);
// must not consume the training RNG stream.
using BatchAdversary = std::function<Tensor(const Model&, const Tensor&, const std::vector<int>&)>;

struct TrainConfig {
    std::size_t batch_size = 256;
    int max_epochs = 100;
    double lr = 1e-3;
    int halving_patience = 5;
    int early_stop_patience = 20;
    std::uint64_t seed = 0;
    std::ostream* log = nullptr; // optional epoch-by-epoch lines
    void validate() const;
};

struct EpochStats {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1; // epoch whose parameters the model ends up with
    double best_val_loss = std::numeric_limits<double>::infinity();
};

// Minimises mean cross-entropy with Adam; halves the learning rate on
// validation-loss plateaus, stops early on long plateaus, and restores the
// parameters of the best validation epoch before returning. When `adversary`
// is set, training and validation batches are perturbed through it first.
TrainResult train(Model& model, const DataSplit& data, const TrainConfig& cfg,
                  const BatchAdversary& adversary = {});

// ---- checkpoints ----

void save_checkpoint(const std::string& path, const Model& model, const nlohmann::json& metadata);

struct LoadedModel {
    Model model;
    nlohmann::json metadata;
};
LoadedModel load_checkpoint(const std::string& path);

} // namespace sca
