#pragma once

namespace fairsan {

inline constexpr const char* kVersion = "0.1.0";

// Bumped whenever the layout of machine-readable records (reports, manifests,
// traces, grid rows) changes.
inline constexpr int kRecordSchemaVersion = 1;

}  // namespace fairsan
