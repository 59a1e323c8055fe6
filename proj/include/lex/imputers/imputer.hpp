#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lex/dataset.hpp"
#include "lex/imputers/gmm.hpp"
#include "lex/imputers/kmeans.hpp"
#include "lex/imputers/logistics.hpp"

namespace lex::impute {

enum class Kind {
  constant,
  marginal,
  gaussian_std,
  gmm,
  gmm_means,
  gmm_dataset,
  kmeans_dataset,
  logistics,
  logistics_means
};

inline constexpr Kind kAllKinds[] = {Kind::constant,    Kind::marginal,       Kind::gaussian_std,
                                     Kind::gmm,         Kind::gmm_means,      Kind::gmm_dataset,
                                     Kind::kmeans_dataset, Kind::logistics,   Kind::logistics_means};

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::constant: return "constant";
    case Kind::marginal: return "marginal";
    case Kind::gaussian_std: return "gaussian_std";
    case Kind::gmm: return "gmm";
    case Kind::gmm_means: return "gmm_means";
    case Kind::gmm_dataset: return "gmm_dataset";
    case Kind::kmeans_dataset: return "kmeans_dataset";
    case Kind::logistics: return "logistics";
    case Kind::logistics_means: return "logistics_means";
  }
  return "?";
}

inline Kind kind_from_string(const std::string& s) {
  for (Kind k : kAllKinds)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown imputer kind '" + s + "'");
}

inline bool uses_gmm(Kind k) { return k == Kind::gmm || k == Kind::gmm_means || k == Kind::gmm_dataset; }
inline bool uses_logistics(Kind k) { return k == Kind::logistics || k == Kind::logistics_means; }
inline bool needs_validation(Kind k) {
  return k == Kind::marginal || k == Kind::gmm_dataset || k == Kind::kmeans_dataset;
}

struct Spec {
  Kind kind = Kind::constant;
  double constant = 0.0;
  std::size_t components = 10;
  std::uint64_t seed = 0;
  std::size_t max_iter = 200;
  double tol = 1e-5;
  int grid_max = 255;
  std::size_t logistics_epochs = 30;
  /// Adds U[0,1) noise before fitting a GMM on grid-valued data.
  bool dequantize = false;

  bool operator==(const Spec&) const = default;
};

/// A fitted conditional sampler p(x~ | x, z). Immutable after fitting; sampling
/// only touches the caller's RNG, so one instance may serve concurrent callers.
class Imputer {
 public:
  Imputer() = default;

  const Spec& spec() const { return spec_; }
  Kind kind() const { return spec_.kind; }
  bool fitted() const { return fitted_; }
  std::size_t dim() const { return dim_; }

  /// Deterministic kinds produce one imputation per (x, z).
  bool stochastic() const { return spec_.kind != Kind::constant; }

  const std::optional<GmmParams>& gmm() const { return gmm_; }
  const std::optional<LogisticsParams>& logistics() const { return logistics_; }
  const std::optional<ResampleTable>& resample_table() const { return table_; }
  const std::vector<double>& validation_rows() const { return val_; }
  const std::vector<double>& kmeans_centers() const { return centers_; }
  const std::vector<std::vector<std::size_t>>& cluster_members() const { return members_; }

  /// Writes x~ into `out` (length dim): observed coordinates are copied, the rest drawn per kind.
  void impute(const double* x, const std::uint8_t* z, double* out, Rng& rng) const {
    if (!fitted_) throw StateError("imputer '" + to_string(spec_.kind) + "' used before fitting");
    for (std::size_t d = 0; d < dim_; ++d) out[d] = x[d];
    bool any_missing = false;
    for (std::size_t d = 0; d < dim_; ++d) any_missing = any_missing || !z[d];
    if (!any_missing) return;

    auto fill = [&](auto value_of) {
      for (std::size_t d = 0; d < dim_; ++d)
        if (!z[d]) out[d] = value_of(d);
    };
    switch (spec_.kind) {
      case Kind::constant: fill([&](std::size_t) { return spec_.constant; }); break;
      case Kind::gaussian_std: fill([&](std::size_t) { return standard_normal(rng); }); break;
      case Kind::marginal: {
        const double* r = val_row(std::uniform_int_distribution<std::size_t>(0, n_val() - 1)(rng));
        fill([&](std::size_t d) { return r[d]; });
        break;
      }
      case Kind::gmm: {
        const auto k = sample_index(gmm_component_posterior(*gmm_, x, z), rng);
        fill([&](std::size_t d) { return gmm_->mean(k)[d] + std::sqrt(gmm_->var(k)[d]) * standard_normal(rng); });
        break;
      }
      case Kind::gmm_means: {
        const auto k = sample_index(gmm_component_posterior(*gmm_, x, z), rng);
        fill([&](std::size_t d) { return gmm_->mean(k)[d]; });
        break;
      }
      case Kind::gmm_dataset: {
        const auto k = sample_index(gmm_component_posterior(*gmm_, x, z), rng);
        const double* r = val_row(sample_cumulative(table_cdf_[k], rng));
        fill([&](std::size_t d) { return r[d]; });
        break;
      }
      case Kind::kmeans_dataset: {
        const auto k = nearest_masked_center(x, z, rng);
        const auto& m = members_[k];
        const std::size_t i = m.empty() ? std::uniform_int_distribution<std::size_t>(0, n_val() - 1)(rng)
                                        : m[std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng)];
        const double* r = val_row(i);
        fill([&](std::size_t d) { return r[d]; });
        break;
      }
      case Kind::logistics: {
        const auto k = sample_index(logistics_component_posterior(*logistics_, x, z), rng);
        const auto& p = *logistics_;
        fill([&](std::size_t d) {
          return static_cast<double>(sample_discretized_logistic(p.centers[k * dim_ + d], p.scales[k * dim_ + d], p.V, rng));
        });
        break;
      }
      case Kind::logistics_means: {
        const auto k = sample_index(logistics_component_posterior(*logistics_, x, z), rng);
        fill([&](std::size_t d) { return logistics_->centers[k * dim_ + d]; });
        break;
      }
    }
  }

  std::vector<double> impute(std::span<const double> x, std::span<const std::uint8_t> z, Rng& rng) const {
    if (!fitted_) throw StateError("imputer '" + to_string(spec_.kind) + "' used before fitting");
    if (x.size() != dim_ || z.size() != dim_) throw DimensionError("impute: row length differs from imputer width");
    std::vector<double> out(dim_);
    impute(x.data(), z.data(), out.data(), rng);
    return out;
  }

  // Construction -------------------------------------------------------------

  /// Kinds that need no data (constant, gaussian_std).
  static Imputer make_stateless(const Spec& spec, std::size_t dim) {
    if (spec.kind != Kind::constant && spec.kind != Kind::gaussian_std)
      throw ConfigError("imputer '" + to_string(spec.kind) + "' must be fitted on data");
    Imputer imp;
    imp.spec_ = spec;
    imp.dim_ = dim;
    imp.fitted_ = true;
    return imp;
  }

  /// Wraps known mixture parameters (gmm / gmm_means, or gmm_dataset with `val_rows`).
  static Imputer from_gmm(GmmParams params, Kind kind = Kind::gmm, std::vector<double> val_rows = {}) {
    if (!uses_gmm(kind)) throw ConfigError("from_gmm: kind '" + to_string(kind) + "' is not a GMM imputer");
    Imputer imp;
    imp.spec_.kind = kind;
    imp.spec_.components = params.K;
    imp.dim_ = params.D;
    imp.gmm_ = std::move(params);
    imp.val_ = std::move(val_rows);
    if (kind == Kind::gmm_dataset) {
      if (imp.val_.empty()) throw ContractError("from_gmm: gmm_dataset needs validation rows");
      imp.table_ = build_resample_table(*imp.gmm_, MatrixView(imp.val_, imp.dim_));
    }
    imp.finish();
    return imp;
  }

  /// Fits on `train` rows; validation-based kinds draw from `val` (train rows when `val` is empty).
  static Imputer fit(const Spec& spec, const MatrixView& train, const MatrixView& val, FitReport* report = nullptr) {
    if (spec.kind == Kind::constant || spec.kind == Kind::gaussian_std) return make_stateless(spec, train.d);
    Imputer imp;
    imp.spec_ = spec;
    imp.dim_ = train.d;
    const MatrixView pool = val.n ? val : train;
    if (!val.n && needs_validation(spec.kind) && report) report->notes.push_back("no validation rows; sampling from train rows");
    if (needs_validation(spec.kind)) {
      if (pool.n == 0) throw ContractError("imputer '" + to_string(spec.kind) + "' needs rows to resample from");
      imp.val_.assign(pool.data, pool.data + pool.n * pool.d);
    }

    if (uses_gmm(spec.kind)) {
      std::vector<double> noisy;
      MatrixView fit_view = train;
      if (spec.dequantize) {
        Rng dq = make_stream(spec.seed, "gmm/dequantize");
        noisy.assign(train.data, train.data + train.n * train.d);
        for (auto& v : noisy) v += uniform_open(dq);
        fit_view = MatrixView(noisy.data(), train.n, train.d);
      }
      imp.gmm_ = fit_gmm_em(fit_view, spec.components, spec.seed, {spec.max_iter, spec.tol, kVarianceFloor}, report);
      if (spec.kind == Kind::gmm_dataset) {
        imp.table_ = build_resample_table(*imp.gmm_, pool);
        if (report)
          for (auto k : imp.table_->uniform_fallback)
            report->notes.push_back("component " + std::to_string(k) + " has vanishing density on every validation row; uniform resampling");
      }
    } else if (uses_logistics(spec.kind)) {
      LogisticsOptions lo{spec.grid_max, spec.logistics_epochs};
      imp.logistics_ = fit_logistics(train, spec.components, spec.seed, lo, report, val.n ? &val : nullptr);
    } else if (spec.kind == Kind::kmeans_dataset) {
      auto km = fit_kmeans(train, spec.components, spec.seed, spec.max_iter);
      if (report) {
        report->loglik_trace = km.wcss_trace;
        report->iterations = km.wcss_trace.size();
        report->reseeds = km.reseeds;
      }
      imp.centers_ = km.centers;
      imp.members_.assign(spec.components, {});
      for (std::size_t i = 0; i < pool.n; ++i) imp.members_[km.nearest(pool.row(i))].push_back(i);
    }
    imp.finish();
    return imp;
  }

  static Imputer fit(const Spec& spec, const Dataset& ds, FitReport* report = nullptr) {
    Dataset tr = ds.subset(Split::train), va = ds.subset(Split::val);
    if (tr.size() == 0) tr = ds;
    return fit(spec, MatrixView(tr.X, ds.dim), MatrixView(va.X, ds.dim), report);
  }

  // Serialization -----------------------------------------------------------

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "lex-imputer";
    j["version"] = 1;
    j["kind"] = to_string(spec_.kind);
    j["dim"] = dim_;
    j["spec"] = {{"constant", spec_.constant}, {"components", spec_.components}, {"seed", spec_.seed},
                 {"max_iter", spec_.max_iter}, {"tol", spec_.tol},             {"grid_max", spec_.grid_max},
                 {"logistics_epochs", spec_.logistics_epochs}, {"dequantize", spec_.dequantize}};
    if (gmm_) j["gmm"] = {{"K", gmm_->K}, {"weights", gmm_->weights}, {"means", gmm_->means}, {"variances", gmm_->vars}};
    if (logistics_)
      j["logistics"] = {{"K", logistics_->K}, {"V", logistics_->V}, {"weights", logistics_->weights},
                        {"centers", logistics_->centers}, {"scales", logistics_->scales}};
    if (table_) j["resample_table"] = {{"K", table_->K}, {"n_val", table_->n_val}, {"prob", table_->prob},
                             {"uniform_fallback", table_->uniform_fallback}};
    if (!val_.empty()) j["validation_rows"] = val_;
    if (!centers_.empty()) j["kmeans"] = {{"centers", centers_}, {"members", members_}};
    return j;
  }

  static Imputer from_json(const nlohmann::json& j) {
    try {
      if (j.value("format", "") != "lex-imputer") throw ParseError("not a lex-imputer document");
      if (j.at("version").get<int>() != 1) throw ParseError("unsupported imputer version");
      Imputer imp;
      imp.dim_ = j.at("dim").get<std::size_t>();
      const auto& s = j.at("spec");
      imp.spec_.kind = kind_from_string(j.at("kind").get<std::string>());
      imp.spec_.constant = s.at("constant").get<double>();
      imp.spec_.components = s.at("components").get<std::size_t>();
      imp.spec_.seed = s.at("seed").get<std::uint64_t>();
      imp.spec_.max_iter = s.at("max_iter").get<std::size_t>();
      imp.spec_.tol = s.at("tol").get<double>();
      imp.spec_.grid_max = s.at("grid_max").get<int>();
      imp.spec_.logistics_epochs = s.at("logistics_epochs").get<std::size_t>();
      imp.spec_.dequantize = s.at("dequantize").get<bool>();
      if (j.contains("gmm")) {
        const auto& g = j["gmm"];
        imp.gmm_ = GmmParams{g.at("K").get<std::size_t>(), imp.dim_, g.at("weights").get<std::vector<double>>(),
                             g.at("means").get<std::vector<double>>(), g.at("variances").get<std::vector<double>>()};
      }
      if (j.contains("logistics")) {
        const auto& g = j["logistics"];
        imp.logistics_ = LogisticsParams{g.at("K").get<std::size_t>(), imp.dim_, g.at("V").get<int>(),
                                         g.at("weights").get<std::vector<double>>(),
                                         g.at("centers").get<std::vector<double>>(),
                                         g.at("scales").get<std::vector<double>>()};
      }
      if (j.contains("resample_table")) {
        const auto& t = j["resample_table"];
        imp.table_ = ResampleTable{t.at("K").get<std::size_t>(), t.at("n_val").get<std::size_t>(),
                                   t.at("prob").get<std::vector<double>>(),
                                   t.value("uniform_fallback", std::vector<std::size_t>{})};
      }
      if (j.contains("validation_rows")) imp.val_ = j["validation_rows"].get<std::vector<double>>();
      if (j.contains("kmeans")) {
        imp.centers_ = j["kmeans"].at("centers").get<std::vector<double>>();
        imp.members_ = j["kmeans"].at("members").get<std::vector<std::vector<std::size_t>>>();
      }
      imp.validate_loaded();
      imp.finish();
      return imp;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed imputer document: ") + e.what());
    }
  }

  bool operator==(const Imputer& o) const {
    return spec_ == o.spec_ && dim_ == o.dim_ && fitted_ == o.fitted_ && gmm_ == o.gmm_ &&
           logistics_ == o.logistics_ && table_ == o.table_ && val_ == o.val_ && centers_ == o.centers_ &&
           members_ == o.members_;
  }

 private:
  std::size_t n_val() const { return dim_ ? val_.size() / dim_ : 0; }
  const double* val_row(std::size_t i) const { return val_.data() + i * dim_; }

  /// Cluster whose center is closest on the observed coordinates. Ties (e.g. an
  /// all-missing mask) are broken at random in proportion to cluster size.
  std::size_t nearest_masked_center(const double* x, const std::uint8_t* z, Rng& rng) const {
    const std::size_t K = members_.size();
    std::vector<double> dist(K, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t d = 0; d < dim_; ++d)
        if (z[d]) {
          const double diff = x[d] - centers_[k * dim_ + d];
          dist[k] += diff * diff;
        }
    const double best = *std::min_element(dist.begin(), dist.end());
    std::vector<double> w(K, 0.0);
    double total = 0;
    for (std::size_t k = 0; k < K; ++k)
      if (dist[k] == best) total += (w[k] = static_cast<double>(members_[k].size()) + 1e-12);
    for (auto& v : w) v /= total;
    return sample_index(w, rng);
  }

  void validate_loaded() const {
    auto need = [&](bool ok, const char* what) {
      if (!ok) throw ParseError(std::string("imputer document lacks ") + what);
    };
    if (uses_gmm(spec_.kind)) need(gmm_.has_value(), "gmm parameters");
    if (spec_.kind == Kind::gmm_dataset) need(table_.has_value(), "resample table");
    if (uses_logistics(spec_.kind)) need(logistics_.has_value(), "logistic mixture parameters");
    if (needs_validation(spec_.kind)) need(!val_.empty(), "validation rows");
    if (spec_.kind == Kind::kmeans_dataset) need(!centers_.empty(), "k-means centers");
  }

  void finish() {
    if (table_) {
      table_cdf_.assign(table_->K, {});
      for (std::size_t k = 0; k < table_->K; ++k) {
        auto r = table_->row(k);
        table_cdf_[k].resize(r.size());
        double acc = 0;
        for (std::size_t i = 0; i < r.size(); ++i) table_cdf_[k][i] = (acc += r[i]);
      }
    }
    fitted_ = true;
  }

  Spec spec_;
  std::size_t dim_ = 0;
  bool fitted_ = false;
  std::optional<GmmParams> gmm_;
  std::optional<LogisticsParams> logistics_;
  std::optional<ResampleTable> table_;
  std::vector<std::vector<double>> table_cdf_;
  std::vector<double> val_;
  std::vector<double> centers_;
  std::vector<std::vector<std::size_t>> members_;
};

using ImputerPtr = std::shared_ptr<const Imputer>;

}  // namespace lex::impute
