// SPDX-License-Identifier: Apache-2.0
#pragma once

// Four-score ensemble: an RBF-kernel SVM over (s_F, s_V, s_C, s_H) and the
// mean / max / vote combiners it is compared against.

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/data.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse {

/// Probabilities from the three-branch, image-only, caption-only and
/// hashtag-only models.
struct ScoreQuadruple {
  double s_f = 0, s_v = 0, s_c = 0, s_h = 0;

  std::array<double, 4> vec() const { return {s_f, s_v, s_c, s_h}; }
  static ScoreQuadruple from(const std::array<double, 4>& v) { return {v[0], v[1], v[2], v[3]}; }
};

using Feature4 = std::array<double, 4>;

struct SvmOptions {
  double C = 1.0;
  std::optional<double> gamma;  // default 1 / (4 var(features)), 1 when var is 0
  double tolerance = 1e-3;
  std::size_t max_passes = 200;  // iteration cap = max_passes * n
};

struct SvmModel {
  std::vector<Feature4> support;
  std::vector<double> coef;  // alpha_i * y_i with y in {-1, +1}
  double bias = 0;
  double gamma = 1;
  double C = 1;
  // Diagnostics from training; not serialized.
  std::size_t iterations = 0;
  bool converged = true;
  std::size_t violations = 0;
};

double rbf(const Feature4& a, const Feature4& b, double gamma);
double default_gamma(const std::vector<Feature4>& x);

/// Soft-margin dual by SMO with second-order working-set selection. Throws
/// ConfigError for a single class, C <= 0 or gamma <= 0. Non-convergence is
/// reported through `converged`/`violations`, not thrown.
SvmModel svm_train(const std::vector<Feature4>& x, const std::vector<int>& labels, const SvmOptions& opts = {});

/// f(x) = sum coef_i k(x, sv_i) + bias
double svm_decision(const SvmModel& m, const Feature4& x);
/// 1 iff f(x) > 0.
inline int svm_predict(const SvmModel& m, const Feature4& x) { return svm_decision(m, x) > 0 ? 1 : 0; }

std::string svm_to_json(const SvmModel& m);
/// Throws DataError on malformed input.
SvmModel svm_from_json(const std::string& text);

/// Mean of the four scores > 0.5.
int ensemble_mean(const ScoreQuadruple& q);
/// Score farthest from 0.5 decides; ties go to the earliest of F, V, C, H.
int ensemble_max(const ScoreQuadruple& q);
/// Majority of thresholded votes. A 2-2 split goes to the side whose mean
/// score lies farther from 0.5; equal deviations go to 1, or to 0 with
/// `tie_to_negative`.
int ensemble_vote(const ScoreQuadruple& q, bool tie_to_negative = false);

/// One quadruple per post, in order. models = {fused, image, caption, tag};
/// ConfigError when a unimodal slot holds a model of other modalities.
template <Real T>
std::vector<ScoreQuadruple> collect_scores(const Dataset& data, const std::array<const Model<T>*, 4>& models,
                                           std::size_t threads = 0);

struct ScoreRow {
  std::string id;
  ScoreQuadruple q;
  std::optional<int> label;
};

/// CSV `id,s_F,s_V,s_C,s_H,label`; an empty label field means unlabeled.
void write_scores(std::ostream& out, const std::vector<ScoreRow>& rows);
std::vector<ScoreRow> read_scores(std::istream& in);

}  // namespace mmfuse
