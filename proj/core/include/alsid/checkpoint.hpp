#pragma once

#include <memory>
#include <string>

#include "alsid/models.hpp"
#include "alsid/signals.hpp"
#include "alsid/types.hpp"

namespace alsid {

enum class ModelKind { LinearArx = 0, NarxNn = 1, RnnSs = 2 };

ModelKind model_kind_from_string(const std::string& s);
std::string model_kind_name(ModelKind k);

/// Versioned binary model checkpoint: architecture header, the frozen
/// scalers, and the flat parameter vector. Byte order is little-endian
/// regardless of host.
struct Checkpoint {
  ModelKind kind = ModelKind::NarxNn;
  LagOrders lags;                        // n_a/n_b used by NARX kinds
  int n1 = 0, n2 = 0;                    // NARX-NN hidden sizes
  int n_x = 0, n1x = 0, n2x = 0, n1y = 0;  // RNN state-space sizes
  Scaler u_scaler;
  Scaler y_scaler;
  Vec theta;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  /// Instantiate the checkpointed NARX model with theta applied.
  std::unique_ptr<NarxModel> make_narx_model() const;
  /// Instantiate the checkpointed state-space model with theta applied.
  std::unique_ptr<StateSpaceModel> make_ss_model() const;
};

}  // namespace alsid
