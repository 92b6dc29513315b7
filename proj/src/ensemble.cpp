// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "mmfuse/errors.hpp"
#include "mmfuse/train.hpp"

namespace mmfuse {

double rbf(const Feature4& a, const Feature4& b, double gamma) {
  double d2 = 0;
  for (std::size_t k = 0; k < 4; ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
  return std::exp(-gamma * d2);
}

double default_gamma(const std::vector<Feature4>& x) {
  if (x.empty()) return 1.0;
  double mean = 0;
  for (const auto& v : x)
    for (double e : v) mean += e;
  mean /= static_cast<double>(4 * x.size());
  double var = 0;
  for (const auto& v : x)
    for (double e : v) var += (e - mean) * (e - mean);
  var /= static_cast<double>(4 * x.size());
  return var > 0 ? 1.0 / (4.0 * var) : 1.0;
}

// Solver in the libsvm formulation: minimize 0.5 a'Qa - e'a subject to
// y'a = 0 and 0 <= a <= C, with Q_ij = y_i y_j k(x_i, x_j).
SvmModel svm_train(const std::vector<Feature4>& x, const std::vector<int>& labels, const SvmOptions& opts) {
  if (x.size() != labels.size()) throw DimensionError("svm_train: features and labels differ in length");
  if (!(opts.C > 0)) throw ConfigError("SVM C must be positive");
  const std::size_t n = x.size();
  std::vector<double> y(n);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("SVM labels must be 0 or 1");
    y[i] = labels[i] == 1 ? 1.0 : -1.0;
    pos += labels[i] == 1;
  }
  if (pos == 0 || pos == n) throw ConfigError("SVM training needs both classes");
  const double gamma = opts.gamma ? *opts.gamma : default_gamma(x);
  if (!(gamma > 0)) throw ConfigError("SVM gamma must be positive");
  const double C = opts.C;
  constexpr double tau = 1e-12;

  std::vector<double> alpha(n, 0.0), grad(n, -1.0);
  std::vector<double> qi(n), qj(n);
  auto q_row = [&](std::size_t i, std::vector<double>& row) {
    for (std::size_t t = 0; t < n; ++t) row[t] = y[i] * y[t] * rbf(x[i], x[t], gamma);
  };
  auto in_up = [&](std::size_t t) { return (y[t] > 0 && alpha[t] < C) || (y[t] < 0 && alpha[t] > 0); };
  auto in_low = [&](std::size_t t) { return (y[t] > 0 && alpha[t] > 0) || (y[t] < 0 && alpha[t] < C); };

  SvmModel m;
  m.gamma = gamma;
  m.C = C;
  const std::size_t max_iter = std::max<std::size_t>(opts.max_passes * n, 1);
  m.converged = false;
  for (m.iterations = 0; m.iterations < max_iter; ++m.iterations) {
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t)
      if (in_up(t) && -y[t] * grad[t] >= gmax) {
        if (-y[t] * grad[t] > gmax || i == n) i = t;
        gmax = -y[t] * grad[t];
      }
    if (i == n) {
      m.converged = true;
      break;
    }
    q_row(i, qi);
    double gmin = std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    std::size_t j = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      const double v = -y[t] * grad[t];
      gmin = std::min(gmin, v);
      const double b = gmax - v;
      if (b > 0) {
        double a = qi[i] + 1.0 - 2.0 * y[i] * y[t] * qi[t];  // k(t,t) = 1 for RBF
        if (a <= 0) a = tau;
        const double obj = -(b * b) / a;
        if (obj < best) {
          best = obj;
          j = t;
        }
      }
    }
    if (gmax - gmin < opts.tolerance || j == n) {
      m.converged = true;
      break;
    }
    q_row(j, qj);

    const double ai = alpha[i], aj = alpha[j];
    if (y[i] != y[j]) {
      double quad = qi[i] + qj[j] + 2.0 * qi[j];
      if (quad <= 0) quad = tau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = C - diff;
        }
      } else if (alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = C + diff;
      }
    } else {
      double quad = qi[i] + qj[j] - 2.0 * qi[j];
      if (quad <= 0) quad = tau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = sum - C;
        }
      } else if (alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > C) {
        if (alpha[j] > C) {
          alpha[j] = C;
          alpha[i] = sum - C;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }
    const double di = alpha[i] - ai, dj = alpha[j] - aj;
    for (std::size_t t = 0; t < n; ++t) grad[t] += qi[t] * di + qj[t] * dj;
  }

  // rho: mean of y_t G_t over free vectors, else the midpoint of the bounds.
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  double free_sum = 0;
  std::size_t free_n = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (alpha[t] >= C) {
      if (y[t] < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0) {
      if (y[t] > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      free_sum += yg;
      ++free_n;
    }
  }
  const double rho = free_n ? free_sum / static_cast<double>(free_n) : (ub + lb) / 2;
  m.bias = -rho;

  if (!m.converged) {
    // Violators of the stopping rule at the final iterate.
    double gmax = -std::numeric_limits<double>::infinity(), gmin = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (in_up(t)) gmax = std::max(gmax, -y[t] * grad[t]);
      if (in_low(t)) gmin = std::min(gmin, -y[t] * grad[t]);
    }
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -y[t] * grad[t];
      if ((in_up(t) && v > gmin + opts.tolerance) || (in_low(t) && v < gmax - opts.tolerance)) ++m.violations;
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0) {
      m.support.push_back(x[t]);
      m.coef.push_back(alpha[t] * y[t]);
    }
  }
  return m;
}

double svm_decision(const SvmModel& m, const Feature4& x) {
  double f = 0;
  for (std::size_t i = 0; i < m.support.size(); ++i) f += m.coef[i] * rbf(m.support[i], x, m.gamma);
  return f + m.bias;
}

std::string svm_to_json(const SvmModel& m) {
  nlohmann::ordered_json j;
  j["kernel"] = "rbf";
  j["gamma"] = m.gamma;
  j["C"] = m.C;
  j["bias"] = m.bias;
  j["support_vectors"] = m.support;
  j["coefficients"] = m.coef;
  return j.dump(2);
}

SvmModel svm_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SvmModel m;
    m.gamma = j.at("gamma").get<double>();
    m.C = j.at("C").get<double>();
    m.bias = j.at("bias").get<double>();
    m.support = j.at("support_vectors").get<std::vector<Feature4>>();
    m.coef = j.at("coefficients").get<std::vector<double>>();
    if (m.support.size() != m.coef.size()) throw DataError("SVM support vectors and coefficients differ in count");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed SVM model: ") + e.what());
  }
}

int ensemble_mean(const ScoreQuadruple& q) {
  return (q.s_f + q.s_v + q.s_c + q.s_h) / 4.0 > 0.5 ? 1 : 0;
}

int ensemble_max(const ScoreQuadruple& q) {
  const auto v = q.vec();
  std::size_t pick = 0;
  for (std::size_t k = 1; k < 4; ++k)
    if (std::abs(v[k] - 0.5) > std::abs(v[pick] - 0.5)) pick = k;
  return decide(v[pick]);
}

int ensemble_vote(const ScoreQuadruple& q, bool tie_to_negative) {
  double pos_sum = 0, neg_sum = 0;
  int votes = 0;
  for (double s : q.vec()) {
    if (decide(s)) {
      ++votes;
      pos_sum += s;
    } else {
      neg_sum += s;
    }
  }
  if (votes != 2) return votes > 2 ? 1 : 0;
  const double pos_dev = pos_sum / 2 - 0.5;
  const double neg_dev = 0.5 - neg_sum / 2;
  if (pos_dev != neg_dev) return pos_dev > neg_dev ? 1 : 0;
  return tie_to_negative ? 0 : 1;
}

template <Real T>
std::vector<ScoreQuadruple> collect_scores(const Dataset& data, const std::array<const Model<T>*, 4>& models,
                                           std::size_t threads) {
  static const char* slot[4] = {"fused", "image", "caption", "tag"};
  static const Modality uni[3] = {Modality::image, Modality::text, Modality::hashtag};
  for (std::size_t k = 0; k < 4; ++k)
    if (!models[k]) throw ConfigError(std::string("ensemble is missing the ") + slot[k] + " model");
  for (std::size_t k = 1; k < 4; ++k) {
    const auto& mods = models[k]->config.modalities;
    if (mods.count() != 1 || !mods.has(uni[k - 1]))
      throw ConfigError(std::string("the ") + slot[k] + " slot holds a model over '" + mods.str() + "'");
  }
  std::array<std::vector<double>, 4> p;
  for (std::size_t k = 0; k < 4; ++k) p[k] = predict_proba(*models[k], data, threads);
  std::vector<ScoreQuadruple> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = {p[0][i], p[1][i], p[2][i], p[3][i]};
  return out;
}

void write_scores(std::ostream& out, const std::vector<ScoreRow>& rows) {
  out << "id,s_F,s_V,s_C,s_H,label\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g,", r.q.s_f, r.q.s_v, r.q.s_c, r.q.s_h);
    out << r.id << buf;
    if (r.label) out << *r.label;
    out << '\n';
  }
}

std::vector<ScoreRow> read_scores(std::istream& in) {
  std::vector<ScoreRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("id,", 0) == 0)) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw DataError("scores line " + std::to_string(lineno) + ": expected 6 fields");
    ScoreRow r;
    r.id = f[0];
    try {
      std::array<double, 4> v{};
      for (std::size_t k = 0; k < 4; ++k) {
        std::size_t used = 0;
        v[k] = std::stod(f[k + 1], &used);
        if (used != f[k + 1].size() || !(v[k] >= 0.0 && v[k] <= 1.0)) throw std::invalid_argument("range");
      }
      r.q = ScoreQuadruple::from(v);
      if (!f[5].empty()) {
        if (f[5] != "0" && f[5] != "1") throw std::invalid_argument("label");
        r.label = f[5] == "1" ? 1 : 0;
      }
    } catch (const std::exception&) {
      throw DataError("scores line " + std::to_string(lineno) + ": scores must be in [0,1], label 0/1 or empty");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

template std::vector<ScoreQuadruple> collect_scores(const Dataset&, const std::array<const Model<float>*, 4>&,
                                                    std::size_t);
template std::vector<ScoreQuadruple> collect_scores(const Dataset&, const std::array<const Model<double>*, 4>&,
                                                    std::size_t);

}  // namespace mmfuse
