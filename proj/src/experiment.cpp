#include "neureg/experiment.hpp"

#include <stdexcept>

#include "neureg/random.hpp"

namespace neureg {

ExperimentConfig ExperimentConfig::desk_scale() {
    ExperimentConfig c;
    c.train.epochs = 150;
    // 2-voxel DG patches keep detail at this resolution; amplitude 4 stays fold-free
    // and leaves room above the identity baseline; 5/1/2 split per seed.
    c.train.dg_patch_size = 2;
    c.train.train_subjects = 5;
    c.synth.amplitude = 4.0;
    return c;
}

void ExperimentConfig::validate() const {
    train.validate();
    synth.validate();
    if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: need at least one seed");
    if (train.train_subjects + train.val_subjects + 2 > subjects)
        throw std::invalid_argument("ExperimentConfig: " + std::to_string(subjects) + " subjects leave fewer than two for testing");
    bool has_train_domain = false;
    for (const auto& d : domains) has_train_domain = has_train_domain || d.name == train.train_domain;
    if (!has_train_domain) throw std::invalid_argument("ExperimentConfig: training domain '" + train.train_domain + "' is not in the domain list");
    if (domains.size() < 2) throw std::invalid_argument("ExperimentConfig: need at least one unseen domain");
}

SubjectSplit split_subjects(std::size_t subjects, std::size_t train, std::size_t validation, std::uint64_t seed) {
    if (train + validation > subjects) throw std::invalid_argument("split_subjects: not enough subjects");
    std::vector<std::size_t> order(subjects);
    for (std::size_t i = 0; i < subjects; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = subjects; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    SubjectSplit split;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train));
    split.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(train), order.begin() + static_cast<std::ptrdiff_t>(train + validation));
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(train + validation), order.end());
    return split;
}

void build_protocol(ProtocolData& out, Cohort cohort, const SubjectSplit& split, const std::string& train_domain) {
    out.cohort = std::move(cohort);
    out.split = split;
    const Cohort& c = out.cohort;
    const std::size_t td = c.domain_index(train_domain);
    out.training = {};
    for (std::size_t s : split.train) out.training.train.push_back({c.images[td][s], c.labels[s]});
    for (std::size_t s : split.validation) out.training.validation.push_back({c.images[td][s], c.labels[s]});

    out.test_samples.clear();
    std::vector<std::size_t> unseen;
    for (std::size_t d = 0; d < c.domains.size(); ++d) {
        if (d == td) continue;
        unseen.push_back(d);
        std::vector<Sample> samples;
        for (std::size_t s : split.test) samples.push_back({c.images[d][s], c.labels[s]});
        out.test_samples.push_back(std::move(samples));
    }
    // Pointers are taken only after test_samples stops growing.
    out.test_pairs.clear();
    for (std::size_t u = 0; u < unseen.size(); ++u)
        for (std::size_t f = 0; f < split.test.size(); ++f)
            for (std::size_t m = 0; m < split.test.size(); ++m)
                if (f != m)
                    out.test_pairs.push_back({c.domains[unseen[u]].name, split.test[f], split.test[m], &out.test_samples[u][f], &out.test_samples[u][m]});
}

RunResult run_protocol(const ProtocolData& data, const ExperimentConfig& config, std::uint64_t seed, bool use_dg,
                       const ExperimentProgress& progress) {
    TrainConfig tc = config.train;
    tc.seed = seed;
    tc.use_dg = use_dg;
    const Checkpoint ck = train(data.training, tc, [&](const EpochRecord& r) {
        if (progress) progress(seed, use_dg, r);
    });
    RunResult r;
    r.seed = seed;
    r.use_dg = use_dg;
    r.epochs_run = ck.epoch;
    r.best_epoch = ck.best_epoch;
    r.initial_val_loss = ck.history.front().val_loss;
    r.best_val_loss = ck.best_val_loss;
    r.report = evaluate_cross_domain(ck, data.test_pairs, config.threads);
    return r;
}

ExperimentResult run_cross_domain_experiment(const ExperimentConfig& config, const ExperimentProgress& progress) {
    config.validate();
    ExperimentResult result;
    for (std::uint64_t seed : config.seeds) {
        ProtocolData data;
        build_protocol(data, make_cohort(config.subjects, config.domains, mix_seed(seed, 7), config.dims, config.synth),
                       split_subjects(config.subjects, config.train.train_subjects, config.train.val_subjects, mix_seed(seed, 8)),
                       config.train.train_domain);
        for (bool use_dg : {true, false}) {
            RunResult run = run_protocol(data, config, seed, use_dg, progress);
            (use_dg ? result.dice_with_dg : result.dice_without_dg) += run.report.dice.mean;
            (use_dg ? result.ssim_with_dg : result.ssim_without_dg) += run.report.ssim.mean;
            if (use_dg) {
                result.baseline_dice += run.report.baseline_dice.mean;
                result.baseline_ssim += run.report.baseline_ssim.mean;
            }
            result.runs.push_back(std::move(run));
        }
    }
    const double n = static_cast<double>(config.seeds.size());
    result.dice_with_dg /= n;
    result.dice_without_dg /= n;
    result.baseline_dice /= n;
    result.ssim_with_dg /= n;
    result.ssim_without_dg /= n;
    result.baseline_ssim /= n;
    return result;
}

nlohmann::json to_json(const ExperimentResult& result) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : result.runs)
        runs.push_back({{"seed", r.seed},
                        {"use_dg", r.use_dg},
                        {"epochs_run", r.epochs_run},
                        {"best_epoch", r.best_epoch},
                        {"initial_val_loss", r.initial_val_loss},
                        {"best_val_loss", r.best_val_loss},
                        {"report", to_json(r.report)}});
    return {{"dice_with_dg", result.dice_with_dg},   {"dice_without_dg", result.dice_without_dg},
            {"baseline_dice", result.baseline_dice}, {"ssim_with_dg", result.ssim_with_dg},
            {"ssim_without_dg", result.ssim_without_dg}, {"baseline_ssim", result.baseline_ssim},
            {"runs", runs}};
}

}  // namespace neureg
