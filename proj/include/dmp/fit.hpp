#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dmp/data_model.hpp"
#include "dmp/models.hpp"
#include "dmp/reparam.hpp"
#include "dmp/sampler.hpp"

namespace dmp {

/// A fitted DMP model: raw draws plus the same draws on the constrained scale.
struct DmpFit {
  ModelKind kind = ModelKind::AP;
  HyperPriors hp;
  int first_year = 0;  // first training year
  std::shared_ptr<const DmpModel> model;
  PosteriorDraws draws;
  std::vector<std::string> names;  // constrained parameter names
  std::vector<double> constrained;  // [chain][iter][param]

  std::size_t num_params() const { return names.size(); }
  std::span<const double> constrained_draw(std::size_t chain, std::size_t iter) const {
    return {constrained.data() + (chain * draws.kept + iter) * names.size(), names.size()};
  }
  std::vector<std::vector<double>> param_chains(std::size_t k) const {
    std::vector<std::vector<double>> out(draws.chains, std::vector<double>(draws.kept));
    for (std::size_t c = 0; c < draws.chains; ++c)
      for (std::size_t i = 0; i < draws.kept; ++i) out[c][i] = constrained_draw(c, i)[k];
    return out;
  }
  Params params(std::size_t chain, std::size_t iter) const {
    return model->params_from_constrained(constrained_draw(chain, iter));
  }
};

inline void attach_constrained(DmpFit& fit) {
  fit.names = fit.model->constrained_names();
  fit.constrained.clear();
  fit.constrained.reserve(fit.draws.total() * fit.names.size());
  for (std::size_t c = 0; c < fit.draws.chains; ++c)
    for (std::size_t i = 0; i < fit.draws.kept; ++i) {
      const auto v = fit.model->constrained_values(fit.draws.draw(c, i));
      fit.constrained.insert(fit.constrained.end(), v.begin(), v.end());
    }
}

/// Runs NUTS on the DMP posterior of `data`. Sampling happens in the
/// SamplingBasis coordinates; stored draws are the model's unconstrained u.
inline DmpFit fit_dmp(ModelKind kind, const MortalityDataset& data, const HyperPriors& hp,
                      const SamplerConfig& config) {
  hp.validate();
  DmpFit fit;
  fit.kind = kind;
  fit.hp = hp;
  fit.first_year = data.years().first();
  fit.model = std::make_shared<const DmpModel>(kind, data, hp);
  const SamplingBasis basis(*fit.model);
  const LogDensityFn f = [&basis](std::span<const double> z, std::span<double> g) {
    return basis.log_density(z, g);
  };
  const auto init = basis.from_u(fit.model->init_center());
  fit.draws = nuts_sample(f, basis.dim(), config, init);
  for (std::size_t c = 0; c < fit.draws.chains; ++c)
    for (std::size_t i = 0; i < fit.draws.kept; ++i) {
      const auto u = basis.to_u(fit.draws.draw(c, i));
      std::copy(u.begin(), u.end(), fit.draws.draws.begin() +
                                        static_cast<std::ptrdiff_t>((c * fit.draws.kept + i) * u.size()));
    }
  attach_constrained(fit);
  return fit;
}

/// Summary table over the constrained parameters.
inline Diagnostics diagnose(const DmpFit& fit) {
  Diagnostics out;
  for (std::size_t k = 0; k < fit.num_params(); ++k)
    out.params.push_back(summarize_param(fit.names[k], fit.param_chains(k)));
  out.divergences = fit.draws.divergences();
  out.mean_accept = fit.draws.mean_accept();
  return out;
}

}  // namespace dmp
