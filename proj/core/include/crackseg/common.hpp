#pragma once

#include <string>

namespace crackseg {

/// Forward-pass mode. Selects batch-norm behavior and, in the data
/// pipeline, random versus deterministic cropping.
enum class Mode { train, eval };

/// The three learning-rate/freeze groups the network is partitioned into:
/// g1 = stem through the second residual stage, g2 = remaining encoder,
/// g3 = decoder and head.
enum class LayerGroup { g1, g2, g3 };

inline std::string to_string(LayerGroup g) {
  switch (g) {
    case LayerGroup::g1: return "G1";
    case LayerGroup::g2: return "G2";
    case LayerGroup::g3: return "G3";
  }
  return "?";
}

}  // namespace crackseg
