#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dadnn/types.hpp"

namespace dadnn {

enum class Activation { kElu, kSigmoid, kIdentity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct DenseLayer {
  Mat W;  // out x in
  Vec b;
  Activation act = Activation::kElu;
};

/// Hidden affine + ELU layers (with dropout) followed by a sigmoid head.
/// Inputs are standardized with (input_mean, input_std) before the first layer.
struct MlpParams {
  std::vector<DenseLayer> layers;
  Vec input_mean;
  Vec input_std;
  double dropout = 0.1;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().W.rows()); }
  int hidden_dim() const { return layers.size() < 2 ? 0 : static_cast<int>(layers.front().W.rows()); }
};

enum class InitMode {
  kManual,  // last layer W = 0, b = 9
  kRandom,  // last layer Kaiming-uniform, b = 0
};

inline constexpr double kManualHeadBias = 9.0;

MlpParams init_network(int n_bus, int hidden_dim, int n_line, std::uint64_t seed,
                       InitMode mode = InitMode::kManual, int hidden_layers = 3, double dropout = 0.1);

/// Per-column mean and std of a (samples x N_b) matrix; std below 1e-12 is set to 1.
void set_input_normalization(MlpParams& params, const Mat& samples);

enum class ForwardMode { kTrain, kEval };

struct ForwardTrace {
  ForwardMode mode = ForwardMode::kEval;
  Vec input;                 // standardized
  std::vector<Vec> pre;      // per layer
  std::vector<Vec> post;     // per layer, after activation and dropout
  std::vector<Vec> masks;    // per hidden layer in train mode: 0 or 1/(1-p)
  Vec output;
};

using Rng = std::mt19937_64;

ForwardTrace forward(const MlpParams& params, const Vec& pd, ForwardMode mode, Rng* rng = nullptr);

/// Train-mode forward with given dropout masks (for gradient checks).
ForwardTrace forward_with_masks(const MlpParams& params, const Vec& pd, const std::vector<Vec>& masks);

struct MlpGrads {
  std::vector<Mat> dW;
  std::vector<Vec> db;

  static MlpGrads zeros_like(const MlpParams& p);
  MlpGrads& operator+=(const MlpGrads& o);
  MlpGrads& operator*=(double s);
};

/// Reverse-mode gradient of upstream' * output with respect to every weight.
MlpGrads backward(const MlpParams& params, const ForwardTrace& trace, const Vec& upstream);

struct AdamWState {
  std::vector<Mat> mW, vW;
  std::vector<Vec> mb, vb;
  long step = 0;
  double lr = 5e-5;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamWState for_params(const MlpParams& p, double lr, double weight_decay);
};

/// Decoupled weight decay p <- p (1 - lr wd), then the bias-corrected Adam step.
void adamw_step(MlpParams& params, const MlpGrads& grads, AdamWState& state);

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const MlpParams& params);
MlpParams model_from_json(const nlohmann::json& j);
void save_model(const MlpParams& params, const std::filesystem::path& path);
MlpParams load_model(const std::filesystem::path& path);

/// Throws ShapeError unless the model maps N_b inputs to N_l outputs.
void check_model_shape(const MlpParams& params, int n_bus, int n_line);

double sigmoid(double x);

}  // namespace dadnn
