#include "odomkit/io.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace odomkit::io {

namespace {

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

[[noreturn]] void fail_line(const fs::path& path, size_t line, const std::string& what) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) fail(path, "cannot open");
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) fail(path, "cannot open for writing");
  return out;
}

std::vector<double> parse_doubles(const fs::path& path, size_t line_no, const std::string& line,
                                  char sep, size_t expected) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      fail_line(path, line_no, "cannot parse number '" + tok + "'");
    }
  }
  if (out.size() != expected) {
    fail_line(path, line_no,
              "expected " + std::to_string(expected) + " fields, got " +
                  std::to_string(out.size()));
  }
  return out;
}

}  // namespace

void write_imu_csv(const fs::path& path, const std::vector<ImuSample>& samples) {
  auto out = open_out(path);
  out << "t,ax,ay,az,gx,gy,gz\n";
  out << std::setprecision(17);
  for (const auto& s : samples) {
    out << s.t << ',' << s.accel.x() << ',' << s.accel.y() << ',' << s.accel.z() << ','
        << s.gyro.x() << ',' << s.gyro.y() << ',' << s.gyro.z() << '\n';
  }
}

std::vector<ImuSample> read_imu_csv(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,ax,ay,az,gx,gy,gz", 0) != 0) {
    fail_line(path, 1, "missing imu csv header");
  }
  std::vector<ImuSample> out;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto v = parse_doubles(path, line_no, line, ',', 7);
    ImuSample s;
    s.t = v[0];
    s.accel = Vec3(v[1], v[2], v[3]);
    s.gyro = Vec3(v[4], v[5], v[6]);
    out.push_back(s);
  }
  return out;
}

void write_tum(const fs::path& path, const EvalTrajectory& traj) {
  auto out = open_out(path);
  out << std::setprecision(17);
  for (const auto& sp : traj) {
    const Quat& q = sp.pose.rotation;
    out << sp.t << ' ' << sp.pose.translation.x() << ' ' << sp.pose.translation.y() << ' '
        << sp.pose.translation.z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' '
        << q.w() << '\n';
  }
}

EvalTrajectory read_tum(const fs::path& path) {
  auto in = open_in(path);
  EvalTrajectory out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> v;
    std::stringstream ss(line);
    double x;
    while (ss >> x) v.push_back(x);
    if (v.size() != 8) fail_line(path, line_no, "expected 8 fields (t x y z qx qy qz qw)");
    StampedPose sp;
    sp.t = v[0];
    sp.pose.translation = Vec3(v[1], v[2], v[3]);
    sp.pose.rotation = Quat(v[7], v[4], v[5], v[6]).normalized();
    out.push_back(sp);
  }
  if (out.empty()) fail(path, "no poses");
  return out;
}

void write_scan_dir(const fs::path& dir, const std::vector<Scan>& scans) {
  fs::create_directories(dir / "scans");
  auto manifest = open_out(dir / "scans.txt");
  manifest << std::setprecision(17);
  for (size_t i = 0; i < scans.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.bin", i);
    const fs::path rel = fs::path("scans") / name;
    auto out = open_out(dir / rel, std::ios::binary);
    for (const auto& p : scans[i].points) {
      const float rec[4] = {static_cast<float>(p.position.x()),
                            static_cast<float>(p.position.y()),
                            static_cast<float>(p.position.z()),
                            static_cast<float>(p.relative_time)};
      out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
    manifest << scans[i].stamp << ' ' << rel.generic_string() << '\n';
  }
}

std::vector<Scan> read_scan_dir(const fs::path& dir) {
  const fs::path manifest_path = dir / "scans.txt";
  auto manifest = open_in(manifest_path);
  std::vector<Scan> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    double stamp;
    std::string rel;
    if (!(ss >> stamp >> rel)) fail_line(manifest_path, line_no, "expected: stamp filename");

    Scan scan;
    scan.stamp = stamp;
    const fs::path bin_path = dir / rel;
    auto in = open_in(bin_path, std::ios::binary);
    in.seekg(0, std::ios::end);
    const std::streamoff size = in.tellg();
    in.seekg(0);
    if (size % 16 != 0) {
      fail(bin_path, "truncated record at byte offset " + std::to_string(size - size % 16));
    }
    scan.points.resize(static_cast<size_t>(size / 16));
    for (auto& p : scan.points) {
      float rec[4];
      in.read(reinterpret_cast<char*>(rec), sizeof(rec));
      p.position = Vec3(rec[0], rec[1], rec[2]);
      p.relative_time = rec[3];
    }
    out.push_back(std::move(scan));
  }
  if (out.empty()) fail(manifest_path, "no scans listed");
  return out;
}

void write_tracks_csv(const fs::path& path, const std::vector<sim::FrameObservations>& frames) {
  auto out = open_out(path);
  out << "frame_id,feature_id,u,v\n";
  out << std::setprecision(17);
  for (const auto& f : frames) {
    for (const auto& [fid, uv] : f.observations) {
      out << f.frame_id << ',' << fid << ',' << uv.x() << ',' << uv.y() << '\n';
    }
  }
}

void write_frames_csv(const fs::path& path, const std::vector<sim::FrameObservations>& frames) {
  auto out = open_out(path);
  out << "frame_id,t\n";
  out << std::setprecision(17);
  for (const auto& f : frames) out << f.frame_id << ',' << f.t << '\n';
}

std::vector<sim::FrameObservations> read_tracks_csv(const fs::path& tracks_path,
                                                    const fs::path& frames_path) {
  std::map<int, double> frame_times;
  {
    auto in = open_in(frames_path);
    std::string line;
    size_t line_no = 0;
    std::getline(in, line);
    ++line_no;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto v = parse_doubles(frames_path, line_no, line, ',', 2);
      frame_times[static_cast<int>(v[0])] = v[1];
    }
  }
  std::map<int, sim::FrameObservations> by_frame;
  for (const auto& [fid, t] : frame_times) {
    by_frame[fid].frame_id = fid;
    by_frame[fid].t = t;
  }
  {
    auto in = open_in(tracks_path);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(in, line) || line.rfind("frame_id,feature_id,u,v", 0) != 0) {
      fail_line(tracks_path, 1, "missing tracks csv header");
    }
    ++line_no;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto v = parse_doubles(tracks_path, line_no, line, ',', 4);
      const int frame_id = static_cast<int>(v[0]);
      auto it = by_frame.find(frame_id);
      if (it == by_frame.end()) {
        fail_line(tracks_path, line_no, "frame id " + std::to_string(frame_id) +
                                            " missing from frames csv");
      }
      it->second.observations.emplace_back(static_cast<int>(v[1]),
                                           Eigen::Vector2d(v[2], v[3]));
    }
  }
  std::vector<sim::FrameObservations> out;
  out.reserve(by_frame.size());
  for (auto& [fid, f] : by_frame) out.push_back(std::move(f));
  return out;
}

void write_camera(const fs::path& path, const CameraModel& camera) {
  KeyValues kv;
  auto set = [&](const std::string& k, double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    kv[k] = os.str();
  };
  set("fx", camera.fx);
  set("fy", camera.fy);
  set("cx", camera.cx);
  set("cy", camera.cy);
  const Quat& q = camera.body_to_camera.rotation;
  set("extrinsic.qw", q.w());
  set("extrinsic.qx", q.x());
  set("extrinsic.qy", q.y());
  set("extrinsic.qz", q.z());
  set("extrinsic.tx", camera.body_to_camera.translation.x());
  set("extrinsic.ty", camera.body_to_camera.translation.y());
  set("extrinsic.tz", camera.body_to_camera.translation.z());
  write_key_values(path, kv);
}

CameraModel read_camera(const fs::path& path) {
  const KeyValues kv = read_key_values(path);
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) fail(path, "missing key '" + k + "'");
    return std::stod(it->second);
  };
  CameraModel cam;
  cam.fx = get("fx");
  cam.fy = get("fy");
  cam.cx = get("cx");
  cam.cy = get("cy");
  cam.body_to_camera.rotation =
      Quat(get("extrinsic.qw"), get("extrinsic.qx"), get("extrinsic.qy"), get("extrinsic.qz"))
          .normalized();
  cam.body_to_camera.translation =
      Vec3(get("extrinsic.tx"), get("extrinsic.ty"), get("extrinsic.tz"));
  return cam;
}

void write_map(const fs::path& bin_path, const fs::path& header_path,
               const std::vector<Vec3>& points, double voxel_size) {
  auto out = open_out(bin_path, std::ios::binary);
  for (const auto& p : points) {
    const float rec[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                          static_cast<float>(p.z())};
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
  auto hdr = open_out(header_path);
  hdr << "count=" << points.size() << "\nvoxel_size=" << voxel_size << '\n';
}

std::vector<Vec3> read_map(const fs::path& bin_path) {
  auto in = open_in(bin_path, std::ios::binary);
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0);
  if (size % 12 != 0) {
    fail(bin_path, "truncated record at byte offset " + std::to_string(size - size % 12));
  }
  std::vector<Vec3> out(static_cast<size_t>(size / 12));
  for (auto& p : out) {
    float rec[3];
    in.read(reinterpret_cast<char*>(rec), sizeof(rec));
    p = Vec3(rec[0], rec[1], rec[2]);
  }
  return out;
}

KeyValues read_key_values(const fs::path& path) {
  auto in = open_in(path);
  KeyValues out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail_line(path, line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail_line(path, line_no, "empty key");
    out[key] = value;
  }
  return out;
}

void write_key_values(const fs::path& path, const KeyValues& kv) {
  auto out = open_out(path);
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

std::string render_svg_plot(const std::string& title, const std::vector<double>& x,
                            const std::vector<PlotSeries>& series) {
  const int width = 860, height = 480, margin = 60;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!x.empty()) {
    xmin = *std::min_element(x.begin(), x.end());
    xmax = *std::max_element(x.begin(), x.end());
  }
  bool first = true;
  for (const auto& s : series) {
    for (double v : s.y) {
      if (first) {
        ymin = ymax = v;
        first = false;
      }
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;

  auto px = [&](double v) {
    return margin + (v - xmin) / (xmax - xmin) * (width - 2 * margin);
  };
  auto py = [&](double v) {
    return height - margin - (v - ymin) / (ymax - ymin) * (height - 2 * margin);
  };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
     << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << width / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
     << "</text>\n";
  os << "<line x1='" << margin << "' y1='" << height - margin << "' x2='" << width - margin
     << "' y2='" << height - margin << "' stroke='black'/>\n";
  os << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
     << height - margin << "' stroke='black'/>\n";
  os << "<text x='" << margin << "' y='" << margin - 8 << "' font-size='11'>" << ymax
     << "</text>\n";
  os << "<text x='" << margin << "' y='" << height - margin + 14 << "' font-size='11'>" << xmin
     << "</text>\n";
  os << "<text x='" << width - margin << "' y='" << height - margin + 14
     << "' text-anchor='end' font-size='11'>" << xmax << "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    os << "<polyline fill='none' stroke='" << colors[s % 5] << "' stroke-width='1.5' points='";
    for (size_t i = 0; i < series[s].y.size() && i < x.size(); ++i) {
      os << px(x[i]) << ',' << py(series[s].y[i]) << ' ';
    }
    os << "'/>\n";
    os << "<text x='" << width - margin - 8 << "' y='" << margin + 16 * (s + 1)
       << "' text-anchor='end' font-size='12' fill='" << colors[s % 5] << "'>" << series[s].name
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace odomkit::io
