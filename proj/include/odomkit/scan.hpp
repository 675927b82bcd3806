// LiDAR sweep as delivered by the sensor: points in the sensor frame at their
// individual firing times, stamped at sweep start.
#pragma once

#include <vector>

#include "odomkit/geometry.hpp"

namespace odomkit {

struct ScanPoint {
  Vec3 position = Vec3::Zero();  // sensor frame at firing time
  double relative_time = 0.0;    // seconds within the sweep, in [0, sweep)
};

struct Scan {
  std::vector<ScanPoint> points;
  double stamp = 0.0;  // sweep start, seconds
};

}  // namespace odomkit
