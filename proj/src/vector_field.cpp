#include "bss/vector_field.hpp"

namespace bss {

MeanFieldModel MeanFieldModel::from(const SystemParams& params) {
  MeanFieldModel m;
  m.layout = layout_of(params);
  m.g = normalized_choice_weights(params.choice, params.k_max());
  m.g_scale = choice_weight_scale(params.choice, params.k_max());
  m.p = params.p;
  m.mu = params.mu;
  m.gamma = params.gamma;
  m.arrival = params.arrival;
  m.class_fractions = Eigen::Map<const Vector>(params.capacity.fractions.data(),
                                               static_cast<Eigen::Index>(params.capacity.fractions.size()));
  return m;
}

HeterogeneousMeasure drift_hetero(const MeanFieldModel& m, const HeterogeneousMeasure& y, double t) {
  return {y.layout, drift_flat(m, y.layout, y.values, t)};
}

}  // namespace bss
