#pragma once

#include "tiny_fixture.hpp"

namespace fgcam::fixture {

/// The bundle written by the fixture setup step, read once per process.
inline const Bundle& shared_bundle() {
  static const Bundle bundle = read_bundle(FGCAM_FIXTURE_DIR);
  return bundle;
}

inline const ModelGraph& shared_model() {
  static const ModelGraph model = load_model(shared_bundle().model);
  return model;
}

}  // namespace fgcam::fixture
