#pragma once

// Train-on-one-domain, test-on-the-rest protocol over synthetic cohorts, with
// and without the domain-generalisation layer in front of the encoder.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "neureg/synthdata.hpp"
#include "neureg/training.hpp"

namespace neureg {

struct ExperimentConfig {
    std::size_t subjects = 8;
    Dims dims = kDefaultSynthDims;
    std::vector<DomainSpec> domains = default_domains();
    std::vector<std::uint64_t> seeds{1, 2, 3};
    TrainConfig train{};  // train.use_dg and train.seed are set per run
    SubjectOptions synth{};
    std::size_t threads = 1;

    /// 8 subjects x 6 domains at 32x40x48, at most 150 epochs, three seeds,
    /// DG patch 2, displacement amplitude 4, 5 train / 1 validation / 2 test.
    static ExperimentConfig desk_scale();
    void validate() const;
};

struct SubjectSplit {
    std::vector<std::size_t> train, validation, test;
};

/// Seeded permutation of 0..subjects-1 cut into train / validation / test.
SubjectSplit split_subjects(std::size_t subjects, std::size_t train, std::size_t validation, std::uint64_t seed);

/// Owns the samples that test pairs point into.
struct ProtocolData {
    Cohort cohort;
    SubjectSplit split;
    TrainingSet training;
    std::vector<std::vector<Sample>> test_samples;  // [unseen domain][test subject]
    std::vector<TestPair> test_pairs;

    ProtocolData() = default;
    ProtocolData(const ProtocolData&) = delete;
    ProtocolData& operator=(const ProtocolData&) = delete;
};

/// Training set from `train_domain`; ordered test pairs among the test subjects
/// within each other domain.
void build_protocol(ProtocolData& out, Cohort cohort, const SubjectSplit& split, const std::string& train_domain);

struct RunResult {
    std::uint64_t seed = 0;
    bool use_dg = true;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double initial_val_loss = 0.0;
    double best_val_loss = 0.0;
    CrossDomainReport report;
};

struct ExperimentResult {
    std::vector<RunResult> runs;
    double dice_with_dg = 0.0;     // mean over seeds of the unseen-domain mean DICE
    double dice_without_dg = 0.0;
    double baseline_dice = 0.0;    // zero-field DICE on the same pairs
    double ssim_with_dg = 0.0;
    double ssim_without_dg = 0.0;
    double baseline_ssim = 0.0;
};

using ExperimentProgress = std::function<void(std::uint64_t seed, bool use_dg, const EpochRecord&)>;

/// One training run and its evaluation.
RunResult run_protocol(const ProtocolData& data, const ExperimentConfig& config, std::uint64_t seed, bool use_dg,
                       const ExperimentProgress& progress = {});

/// Every seed with and without the DG layer.
ExperimentResult run_cross_domain_experiment(const ExperimentConfig& config, const ExperimentProgress& progress = {});

nlohmann::json to_json(const ExperimentResult& result);

}  // namespace neureg
