#include "sca/nn.hpp"

#include <cmath>

namespace sca {

using nlohmann::json;

// ---- NormalizeLayer ----

NormalizeLayer::NormalizeLayer(double offset, double scale) : offset_(offset), scale_(scale) {
    if (scale_ == 0.0) throw ValueError("NormalizeLayer: scale must be non-zero");
}

Tensor NormalizeLayer::forward(const Tensor& x, const ForwardOptions&) const {
    return scale(shift(x, -offset_), 1.0 / scale_);
}

json NormalizeLayer::describe() const {
    return {{"kind", "normalize"}, {"offset", offset_}, {"scale", scale_}};
}

// ---- AffineLayer ----

AffineLayer::AffineLayer(std::size_t in, std::size_t out)
    : in_(in), out_(out), w_(Shape{out, in}), b_(Shape{out}) {
    if (in == 0 || out == 0) throw ValueError("AffineLayer: dimensions must be positive");
}

Tensor AffineLayer::forward(const Tensor& x, const ForwardOptions&) const {
    return add_rowvec(matmul(x, w_, false, true), b_);
}

void AffineLayer::init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    for (std::size_t i = 0; i < w_.size(); ++i) w_.at(i) = rng.uniform(-bound, bound);
    for (std::size_t i = 0; i < b_.size(); ++i) b_.at(i) = rng.uniform(-bound, bound);
}

json AffineLayer::describe() const { return {{"kind", "affine"}, {"in", in_}, {"out", out_}}; }

// ---- ReluLayer ----

Tensor ReluLayer::forward(const Tensor& x, const ForwardOptions&) const { return relu(x); }

json ReluLayer::describe() const { return {{"kind", "relu"}}; }

// ---- DropoutLayer ----

DropoutLayer::DropoutLayer(double p) : p_(p) {
    if (p < 0.0 || p >= 1.0) throw ValueError("DropoutLayer: p must be in [0, 1)");
}

Tensor DropoutLayer::forward(const Tensor& x, const ForwardOptions& opts) const {
    if (!opts.training || p_ == 0.0) return x;
    if (!opts.rng) throw ValueError("DropoutLayer: training-mode forward needs an rng");
    Tensor mask(x.shape());
    const double keep_scale = 1.0 / (1.0 - p_);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask.at(i) = opts.rng->uniform01() < p_ ? 0.0 : keep_scale;
    }
    return mul(x, mask); // mask is a constant: gradients flow through x only
}

json DropoutLayer::describe() const { return {{"kind", "dropout"}, {"p", p_}}; }

// ---- ScaLayer ----

ScaLayer::ScaLayer(std::size_t d_x, std::size_t d_a, double lambda, double eta, int steps)
    : p_(ScaParams::create(d_x, d_a, lambda, eta, steps)) {}

Tensor ScaLayer::forward(const Tensor& x, const ForwardOptions&) const {
    return sca_forward(x, p_);
}

std::vector<Tensor*> ScaLayer::params() { return p_.param_list(); }

void ScaLayer::init(Rng& rng) { p_.init(rng); }

void ScaLayer::post_update() { project_diag_zero(p_.w_g); }

json ScaLayer::describe() const {
    return {{"kind", "sca"},   {"d_x", p_.d_x()}, {"d_a", p_.d_a()},
            {"lambda", p_.lambda}, {"eta", p_.eta},   {"steps", p_.steps}};
}

// ---- Layer factory ----

std::unique_ptr<Layer> Layer::from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "normalize") {
        return std::make_unique<NormalizeLayer>(j.at("offset").get<double>(),
                                                j.at("scale").get<double>());
    }
    if (kind == "affine") {
        return std::make_unique<AffineLayer>(j.at("in").get<std::size_t>(),
                                             j.at("out").get<std::size_t>());
    }
    if (kind == "relu") return std::make_unique<ReluLayer>();
    if (kind == "dropout") return std::make_unique<DropoutLayer>(j.at("p").get<double>());
    if (kind == "sca") {
        return std::make_unique<ScaLayer>(j.at("d_x").get<std::size_t>(),
                                          j.at("d_a").get<std::size_t>(),
                                          j.at("lambda").get<double>(), j.at("eta").get<double>(),
                                          j.at("steps").get<int>());
    }
    throw DataError("Layer::from_json: unknown layer kind '" + kind + "'");
}

// ---- Model ----

void Model::add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

void Model::set_penultimate(int layer_index) {
    if (layer_index < -1 || layer_index >= static_cast<int>(layers_.size())) {
        throw ValueError("Model::set_penultimate: index out of range");
    }
    penultimate_ = layer_index;
}

Tensor Model::forward(const Tensor& x, const ForwardOptions& opts,
                      Tensor* penultimate_out) const {
    if (penultimate_out && penultimate_ < 0) {
        throw ValueError("Model::forward: no penultimate layer tagged");
    }
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i]->forward(h, opts);
        if (penultimate_out && static_cast<int>(i) == penultimate_) *penultimate_out = h;
    }
    return h;
}

std::vector<Tensor*> Model::params() {
    std::vector<Tensor*> out;
    for (auto& layer : layers_) {
        for (Tensor* p : layer->params()) out.push_back(p);
    }
    return out;
}

std::size_t Model::n_params() const {
    std::size_t n = 0;
    for (auto& layer : layers_) {
        for (Tensor* p : const_cast<Layer&>(*layer).params()) n += p->size();
    }
    return n;
}

void Model::init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0));
    for (auto& layer : layers_) layer->init(rng);
}

void Model::post_update() {
    for (auto& layer : layers_) layer->post_update();
}

json Model::describe() const {
    json layers = json::array();
    for (auto& layer : layers_) layers.push_back(layer->describe());
    return {{"layers", layers}, {"penultimate", penultimate_}};
}

Model Model::from_json(const json& j) {
    Model m;
    for (const auto& lj : j.at("layers")) m.add(Layer::from_json(lj));
    m.set_penultimate(j.at("penultimate").get<int>());
    return m;
}

Model Model::clone() const {
    Model copy = from_json(describe());
    auto& self = const_cast<Model&>(*this);
    auto src = self.params();
    auto dst = copy.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->values() = src[i]->values();
    return copy;
}

// ---- ModelSpec / presets ----

void ModelSpec::validate() const {
    if (preset != "mlp" && preset != "sca" && preset != "mlp5") {
        throw ValueError("ModelSpec: unknown preset '" + preset + "'");
    }
    if (input_dim == 0 || n_classes < 2) {
        throw ValueError("ModelSpec: need input_dim > 0 and at least 2 classes");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ValueError("ModelSpec: dropout_p in [0,1)");
    if (preset == "sca") {
        if (!hidden.empty() && hidden.size() != 2) {
            throw ValueError("ModelSpec: the sca preset takes exactly two hidden widths");
        }
        if (!(eta > 0.0)) throw ValueError("ModelSpec: eta must be positive");
        if (lambda < 0.0) throw ValueError("ModelSpec: lambda must be non-negative");
        if (steps < 0) throw ValueError("ModelSpec: steps must be non-negative");
    }
    for (std::size_t h : hidden) {
        if (h == 0) throw ValueError("ModelSpec: hidden widths must be positive");
    }
}

json ModelSpec::to_json() const {
    return {{"preset", preset},       {"input_dim", input_dim}, {"n_classes", n_classes},
            {"hidden", hidden},       {"dropout_p", dropout_p}, {"norm_offset", norm_offset},
            {"norm_scale", norm_scale}, {"lambda", lambda},       {"eta", eta},
            {"steps", steps}};
}

ModelSpec ModelSpec::from_json(const json& j) {
    ModelSpec s;
    s.preset = j.value("preset", s.preset);
    s.input_dim = j.value("input_dim", s.input_dim);
    s.n_classes = j.value("n_classes", s.n_classes);
    s.hidden = j.value("hidden", s.hidden);
    s.dropout_p = j.value("dropout_p", s.dropout_p);
    s.norm_offset = j.value("norm_offset", s.norm_offset);
    s.norm_scale = j.value("norm_scale", s.norm_scale);
    s.lambda = j.value("lambda", s.lambda);
    s.eta = j.value("eta", s.eta);
    s.steps = j.value("steps", s.steps);
    s.validate();
    return s;
}

Model build_model(const ModelSpec& spec) {
    spec.validate();
    std::vector<std::size_t> hidden = spec.hidden;
    if (hidden.empty()) {
        if (spec.preset == "mlp") hidden = {384, 384};
        else if (spec.preset == "sca") hidden = {384, 384};
        else hidden = {512, 256, 128, 64}; // mlp5
    }

    Model m;
    m.add(std::make_unique<NormalizeLayer>(spec.norm_offset, spec.norm_scale));
    if (spec.preset == "sca") {
        m.add(std::make_unique<AffineLayer>(spec.input_dim, hidden[0]));
        m.add(std::make_unique<ReluLayer>());
        m.add(std::make_unique<DropoutLayer>(spec.dropout_p));
        m.add(std::make_unique<ScaLayer>(hidden[0], hidden[1], spec.lambda, spec.eta, spec.steps));
        m.set_penultimate(4); // the refinement output
        m.add(std::make_unique<AffineLayer>(hidden[1], spec.n_classes));
        return m;
    }
    std::size_t in = spec.input_dim;
    int last_relu = -1;
    for (std::size_t h : hidden) {
        m.add(std::make_unique<AffineLayer>(in, h));
        m.add(std::make_unique<ReluLayer>());
        last_relu = static_cast<int>(m.n_layers()) - 1;
        m.add(std::make_unique<DropoutLayer>(spec.dropout_p));
        in = h;
    }
    m.add(std::make_unique<AffineLayer>(in, spec.n_classes));
    m.set_penultimate(last_relu);
    return m;
}

// ---- Adam ----

void AdamConfig::validate() const {
    if (!(lr >= 0.0)) throw ValueError("AdamConfig: lr must be non-negative");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ValueError("AdamConfig: betas must be in [0, 1)");
    }
    if (!(eps > 0.0)) throw ValueError("AdamConfig: eps must be positive");
}

Adam::Adam(std::vector<Tensor*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Tensor* p : params_) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
    }
}

void Adam::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) {
        throw ValueError("Adam::step: gradient list does not match parameter list");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        const Tensor& g = grads[i];
        if (g.size() != p.size()) {
            throw ShapeError("Adam::step: gradient shape " + shape_str(g.shape()) +
                             " does not match parameter shape " + shape_str(p.shape()));
        }
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g.at(k);
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p.at(k) -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::set_lr(double lr) {
    if (!(lr >= 0.0)) throw ValueError("Adam::set_lr: lr must be non-negative");
    cfg_.lr = lr;
}

// ---- PlateauSchedule ----

void ScheduleConfig::validate() const {
    if (halving_patience < 1) throw ValueError("ScheduleConfig: halving patience must be >= 1");
    if (early_stop_patience < halving_patience) {
        throw ValueError("ScheduleConfig: early-stop patience must be >= halving patience");
    }
}

PlateauSchedule::PlateauSchedule(ScheduleConfig cfg) : cfg_(cfg) { cfg_.validate(); }

PlateauSchedule::Decision PlateauSchedule::observe(double val_loss) {
    Decision d;
    if (val_loss < best_) {
        best_ = val_loss;
        since_ = 0;
        d.improved = true;
        return d;
    }
    ++since_;
    if (since_ % cfg_.halving_patience == 0) d.halve = true;
    if (since_ >= cfg_.early_stop_patience) d.stop = true;
    return d;
}

// ---- evaluation ----

namespace {

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t d = x.cols();
    Tensor out(Shape{end - begin, d});
    std::copy(x.data() + begin * d, x.data() + end * d, out.data());
    return out;
}

} // namespace

double accuracy(const Model& model, const Tensor& x, const std::vector<int>& y,
                std::size_t batch) {
    if (x.rank() != 2 || x.rows() == 0 || x.rows() != y.size()) {
        throw ValueError("accuracy: inputs must be a non-empty matrix with matching labels");
    }
    TapeSuspend pause;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < x.rows(); begin += batch) {
        const std::size_t end = std::min(x.rows(), begin + batch);
        Tensor logits = model.forward(slice_rows(x, begin, end));
        auto pred = argmax_rows(logits);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == y[begin + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(x.rows());
}

double ce_loss(const Model& model, const Tensor& x, const std::vector<int>& y, std::size_t batch) {
    if (x.rank() != 2 || x.rows() == 0 || x.rows() != y.size()) {
        throw ValueError("ce_loss: inputs must be a non-empty matrix with matching labels");
    }
    TapeSuspend pause;
    double total = 0.0;
    for (std::size_t begin = 0; begin < x.rows(); begin += batch) {
        const std::size_t end = std::min(x.rows(), begin + batch);
        Tensor logits = model.forward(slice_rows(x, begin, end));
        std::vector<int> yb(y.begin() + static_cast<std::ptrdiff_t>(begin),
                            y.begin() + static_cast<std::ptrdiff_t>(end));
        total += sum(cross_entropy_with_logits(logits, yb)).item();
    }
    return total / static_cast<double>(x.rows());
}

} // namespace sca
