#include <algorithm>
#include <cmath>

#include "sca/nn.hpp"

namespace sca {

void DataSplit::validate() const {
    if (train_x.rank() != 2 || train_x.rows() == 0 || train_x.rows() != train_y.size()) {
        throw ValueError("DataSplit: training inputs and labels are inconsistent or empty");
    }
    if (val_x.rank() != 2 || val_x.rows() == 0 || val_x.rows() != val_y.size()) {
        throw ValueError("DataSplit: validation inputs and labels are inconsistent or empty");
    }
    if (train_x.cols() != val_x.cols()) {
        throw ValueError("DataSplit: training and validation dimensionality disagree");
    }
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ValueError("TrainConfig: batch_size must be positive");
    if (max_epochs < 1) throw ValueError("TrainConfig: max_epochs must be >= 1");
    if (!(lr > 0.0) && lr != 0.0) throw ValueError("TrainConfig: lr must be non-negative");
    ScheduleConfig{halving_patience, early_stop_patience}.validate();
}

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& order, std::size_t begin,
                   std::size_t end) {
    const std::size_t d = x.cols();
    Tensor out(Shape{end - begin, d});
    for (std::size_t i = begin; i < end; ++i) {
        std::copy(x.data() + order[i] * d, x.data() + (order[i] + 1) * d,
                  out.data() + (i - begin) * d);
    }
    return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t d = x.cols();
    Tensor out(Shape{end - begin, d});
    std::copy(x.data() + begin * d, x.data() + end * d, out.data());
    return out;
}

// Validation metrics, optionally on adversarially perturbed inputs.
void validation_metrics(const Model& model, const Tensor& vx, const std::vector<int>& vy,
                        std::size_t batch, const BatchAdversary& adversary, double* loss_out,
                        double* acc_out) {
    double total_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < vx.rows(); begin += batch) {
        const std::size_t end = std::min(vx.rows(), begin + batch);
        Tensor xb = slice_rows(vx, begin, end);
        std::vector<int> yb(vy.begin() + static_cast<std::ptrdiff_t>(begin),
                            vy.begin() + static_cast<std::ptrdiff_t>(end));
        if (adversary) xb = adversary(model, xb, yb);
        TapeSuspend pause;
        Tensor logits = model.forward(xb);
        total_loss += sum(cross_entropy_with_logits(logits, yb)).item();
        auto pred = argmax_rows(logits);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == yb[i]) ++correct;
        }
    }
    *loss_out = total_loss / static_cast<double>(vx.rows());
    *acc_out = static_cast<double>(correct) / static_cast<double>(vx.rows());
}

} // namespace

TrainResult train(Model& model, const DataSplit& data, const TrainConfig& cfg,
                  const BatchAdversary& adversary) {
    data.validate();
    cfg.validate();

    auto params = model.params();
    Adam optimizer(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    PlateauSchedule schedule({cfg.halving_patience, cfg.early_stop_patience});
    Rng rng(derive_seed(cfg.seed, 1)); // batch order + dropout masks

    const std::size_t n = data.train_x.rows();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TrainResult result;
    std::vector<std::vector<double>> best_params;
    double current_lr = cfg.lr;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(n, begin + cfg.batch_size);
            Tensor xb = gather_rows(data.train_x, order, begin, end);
            std::vector<int> yb(end - begin);
            for (std::size_t i = begin; i < end; ++i) yb[i - begin] = data.train_y[order[i]];
            if (adversary) xb = adversary(model, xb, yb);

            TapeScope scope;
            for (Tensor* p : params) scope.tape().watch(*p);
            ForwardOptions opts;
            opts.training = true;
            opts.rng = &rng;
            Tensor loss = mean(cross_entropy_with_logits(model.forward(xb, opts), yb));
            epoch_loss += loss.item() * static_cast<double>(end - begin);
            Gradients grads = scope.tape().backward(loss);
            std::vector<Tensor> glist;
            glist.reserve(params.size());
            for (Tensor* p : params) glist.push_back(grads.grad(*p));
            optimizer.step(glist);
            model.post_update();
        }
        epoch_loss /= static_cast<double>(n);

        double val_loss = 0.0, val_acc = 0.0;
        validation_metrics(model, data.val_x, data.val_y, cfg.batch_size, adversary, &val_loss,
                           &val_acc);

        result.history.push_back({epoch, epoch_loss, val_loss, val_acc, current_lr});
        if (cfg.log) {
            (*cfg.log) << "epoch " << epoch << " train_loss " << epoch_loss << " val_loss "
                       << val_loss << " val_acc " << val_acc << " lr " << current_lr << "\n";
        }

        PlateauSchedule::Decision decision = schedule.observe(val_loss);
        if (decision.improved) {
            result.best_epoch = epoch;
            result.best_val_loss = val_loss;
            best_params.clear();
            for (Tensor* p : params) best_params.push_back(p->values());
        }
        if (decision.halve) {
            current_lr /= 2.0;
            optimizer.set_lr(current_lr);
        }
        if (decision.stop) break;
    }

    if (!best_params.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->values() = best_params[i];
    }
    return result;
}

} // namespace sca
