// Dataset and result file formats. Binary records are little-endian float32.
// Parse failures throw std::runtime_error naming the file and the line or
// byte offset.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "odomkit/evaluation.hpp"
#include "odomkit/preintegration.hpp"
#include "odomkit/scan.hpp"
#include "odomkit/simulator.hpp"
#include "odomkit/visual_odometry.hpp"

namespace odomkit::io {

namespace fs = std::filesystem;

// imu.csv: header "t,ax,ay,az,gx,gy,gz", SI units, one sample per line
void write_imu_csv(const fs::path& path, const std::vector<ImuSample>& samples);
std::vector<ImuSample> read_imu_csv(const fs::path& path);

// TUM trajectory lines: t x y z qx qy qz qw
void write_tum(const fs::path& path, const EvalTrajectory& traj);
EvalTrajectory read_tum(const fs::path& path);

// scans/NNNNNN.bin records: float32 x, y, z, relative_time; scans.txt
// manifest lines: stamp filename
void write_scan_dir(const fs::path& dir, const std::vector<Scan>& scans);
std::vector<Scan> read_scan_dir(const fs::path& dir);

// tracks.csv: frame_id,feature_id,u,v (normalized coordinates);
// frames.csv: frame_id,t
void write_tracks_csv(const fs::path& path, const std::vector<sim::FrameObservations>& frames);
std::vector<sim::FrameObservations> read_tracks_csv(const fs::path& tracks_path,
                                                    const fs::path& frames_path);
void write_frames_csv(const fs::path& path, const std::vector<sim::FrameObservations>& frames);

// camera.txt: flat key=value block with intrinsics and the body-to-camera
// extrinsic
void write_camera(const fs::path& path, const CameraModel& camera);
CameraModel read_camera(const fs::path& path);

// map.bin: float32 x,y,z triples; sidecar map.txt: count, voxel_size
void write_map(const fs::path& bin_path, const fs::path& header_path,
               const std::vector<Vec3>& points, double voxel_size);
std::vector<Vec3> read_map(const fs::path& bin_path);

// Flat key = value text with '#' comments; dotted keys act as sections.
using KeyValues = std::map<std::string, std::string>;
KeyValues read_key_values(const fs::path& path);
void write_key_values(const fs::path& path, const KeyValues& kv);

// Minimal SVG line plot; one polyline per named series over a shared x axis.
struct PlotSeries {
  std::string name;
  std::vector<double> y;
};
std::string render_svg_plot(const std::string& title, const std::vector<double>& x,
                            const std::vector<PlotSeries>& series);

}  // namespace odomkit::io
