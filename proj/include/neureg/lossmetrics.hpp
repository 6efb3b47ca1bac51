#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "neureg/autodiff.hpp"
#include "neureg/volume.hpp"

namespace neureg {

enum class Similarity { mse, ncc };

std::string to_string(Similarity s);
Similarity similarity_from_string(const std::string& name);

constexpr double kNccEps = 1e-5;

struct LossConfig {
    Similarity similarity = Similarity::ncc;
    double lambda = 1.0;
    std::size_t ncc_window = 9;

    /// Regularization weight that pairs with each similarity: 1.0 for NCC, 0.2 for MSE.
    static double default_lambda(Similarity s) { return s == Similarity::ncc ? 1.0 : 0.2; }
    static LossConfig defaults(Similarity s) { return {s, default_lambda(s), 9}; }

    void validate() const;
};

// Tape ops. Volumes are [D, H, W]; fields are [3, D, H, W].

/// Mean squared voxel difference.
ad::Tensor mse_loss(const ad::Tensor& fixed, const ad::Tensor& warped);

/// Negative mean of the local squared correlation coefficient over a cubic
/// window clipped at the borders; in [-1, 0].
ad::Tensor ncc_loss(const ad::Tensor& fixed, const ad::Tensor& warped, std::size_t window = 9);

/// Diffusion regularizer: per axis, mean over forward differences of the squared
/// displacement change summed over channels; the three axes are added.
ad::Tensor smoothness_reg(const ad::Tensor& field);

struct LossTerms {
    ad::Tensor total;
    ad::Tensor similarity;
    ad::Tensor regularizer;
};

LossTerms total_loss(const ad::Tensor& fixed, const ad::Tensor& warped, const ad::Tensor& field, const LossConfig& config);

struct DiceReport {
    std::map<std::uint16_t, double> per_label;
    double mean = 1.0;
};

/// Overlap per foreground label over the union of labels present in either
/// volume. With no foreground in either volume the mean is 1.
DiceReport dice(const LabelVolume& a, const LabelVolume& b);

constexpr std::size_t kSsimWindow = 7;

/// Mean SSIM over all fully contained cubic windows. Both inputs are jointly
/// min-max rescaled to [0, 1] first (L = 1, K1 = 0.01, K2 = 0.03).
double ssim3(const Volume3& a, const Volume3& b, std::size_t window = kSsimWindow);

}  // namespace neureg
