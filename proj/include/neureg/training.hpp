#pragma once

// Optimisation loop, checkpoints and cross-domain evaluation.
//
// One step: (optionally) domain-generalise fixed and moving for the encoder,
// predict the band-limited field, decode it, warp the raw moving image and
// minimise similarity(fixed, warped) + lambda * smoothness(field) with Adam.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "neureg/domaingen.hpp"
#include "neureg/encoder.hpp"
#include "neureg/lossmetrics.hpp"
#include "neureg/volume.hpp"
#include "neureg/warp.hpp"

namespace neureg {

struct TrainConfig {
    double lr = 5e-4;
    LossConfig loss{};  // NCC with lambda 1.0
    std::size_t epochs = 500;
    std::size_t patience = 30;
    std::uint64_t seed = 0;
    /// Feed domain-generalised volumes to the encoder (raw intensities otherwise).
    bool use_dg = true;
    std::size_t dg_patch_size = kDefaultPatchSize;
    double head_std = 0.02;
    std::string train_domain = "identity";
    std::size_t train_subjects = 4;
    std::size_t val_subjects = 1;
    EncoderConfig encoder{};

    void validate() const;
};

/// Configs from JSON. Missing keys take defaults; a "similarity" without an
/// explicit "lambda" takes that loss's default weight. Unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m, v;
};

/// Bias-corrected Adam update in place. Moments are created on the first call.
void adam_step(std::vector<std::vector<double>*> params, const std::vector<std::vector<double>>& grads, AdamState& state, double lr);
void adam_step(ModelParams& params, const std::vector<std::vector<double>>& grads, AdamState& state, double lr);

struct Sample {
    Volume3 image;
    LabelVolume labels;
};

struct TrainingSet {
    std::vector<Sample> train;
    std::vector<Sample> validation;  // may be empty: early stopping then uses the training loss
};

struct EpochRecord {
    std::size_t epoch = 0;  // 0 = before the first update
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct Checkpoint {
    static constexpr const char* kVersion = "NRC1";
    TrainConfig config;
    ModelParams params;
    AdamState optimizer;
    std::size_t epoch = 0;       // epochs actually run
    std::size_t best_epoch = 0;  // epoch whose parameters are stored
    double best_val_loss = 0.0;
    std::vector<EpochRecord> history;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Encoder input for one volume under the given config.
Volume3 encoder_input(const Volume3& image, const TrainConfig& config);

/// Loss of one (fixed, moving) pair on `tape`. `fixed_in`/`moving_in` are encoder inputs.
LossTerms pair_loss(ad::Tape& tape, const SwinEncoder& encoder, const BoundParams& params, const Volume3& fixed,
                    const Volume3& moving, const Volume3& fixed_in, const Volume3& moving_in, const LossConfig& loss);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Ordered inter-subject pairs of the training set, reshuffled each epoch.
/// Returns the checkpoint of the best validation epoch.
Checkpoint train(const TrainingSet& data, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Full-resolution displacement field predicted by the checkpoint.
DeformationField predict_field(const Checkpoint& checkpoint, const Volume3& fixed, const Volume3& moving);

struct TestPair {
    std::string domain;
    std::size_t fixed_subject = 0;
    std::size_t moving_subject = 0;
    const Sample* fixed = nullptr;
    const Sample* moving = nullptr;
};

struct MetricSummary {
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation; 0 for fewer than two values
};

MetricSummary summarize(const std::vector<double>& values);

struct PairResult {
    std::string domain;
    std::size_t fixed_subject = 0;
    std::size_t moving_subject = 0;
    double ssim = 0.0;
    double dice = 0.0;
    double baseline_ssim = 0.0;
    double baseline_dice = 0.0;
    JacobianStats jacobian;
};

struct CrossDomainReport {
    std::vector<PairResult> pairs;
    MetricSummary ssim, dice, baseline_ssim, baseline_dice, min_jacobian_det, nonpositive_jacobian_fraction;
    std::map<std::string, MetricSummary> dice_by_domain;
};

/// Disjoint pairs may be evaluated on several threads; results keep pair order.
CrossDomainReport evaluate_cross_domain(const Checkpoint& checkpoint, const std::vector<TestPair>& pairs, std::size_t threads = 1);
nlohmann::json to_json(const CrossDomainReport& report);

}  // namespace neureg
