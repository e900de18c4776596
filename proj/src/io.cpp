#include "kpose/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace kpose {

namespace {

[[noreturn]] void parse_error(const fs::path& path, const std::string& what) {
  throw Error(ErrorCode::Parse, path.string() + ": " + what);
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

float get_f32(const unsigned char* p, bool little) {
  std::uint32_t bits = little ? get_u32_le(p)
                              : (static_cast<std::uint32_t>(p[3]) | (static_cast<std::uint32_t>(p[2]) << 8) |
                                 (static_cast<std::uint32_t>(p[1]) << 16) | (static_cast<std::uint32_t>(p[0]) << 24));
  return std::bit_cast<float>(bits);
}

void put_f32_le(std::string& out, float f) { put_u32_le(out, std::bit_cast<std::uint32_t>(f)); }

// Whitespace-separated header tokens of a netpbm-style file; '#' comments
// run to end of line. Leaves pos on the single whitespace byte after the last token.
struct HeaderReader {
  const std::string& data;
  std::size_t pos = 0;

  std::string next(const fs::path& path) {
    for (;;) {
      while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
      if (pos < data.size() && data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos) parse_error(path, "truncated header");
    return data.substr(start, pos - start);
  }
  int next_int(const fs::path& path) {
    const std::string t = next(path);
    try {
      std::size_t used = 0;
      const int v = std::stoi(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      parse_error(path, "bad integer '" + t + "' in header");
    }
  }
  std::size_t data_start(const fs::path& path) {
    if (pos >= data.size()) parse_error(path, "missing data");
    return pos + 1;
  }
};

std::string fmt17(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

double number(const Json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw Error(ErrorCode::Parse, "expected a number, got " + j.dump());
  return j.get<double>();
}

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorCode::Parse, std::string("missing field '") + key + "'");
  return j.at(key);
}

template <typename F>
auto parsing(const char* what, F&& f) {
  try {
    return f();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::Parse, std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot rename onto " + path.string() + ": " + ec.message());
}

Json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const std::exception& e) {
    parse_error(path, e.what());
  }
}

void write_json(const fs::path& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// ---- PLY ----

SurfaceModel read_ply(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) parse_error(path, "not a PLY file");

  struct Element {
    std::string name;
    long count = 0;
    std::vector<std::string> props;  // "list" entries recorded as the property name
    std::vector<bool> is_list;
  };
  std::vector<Element> elements;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (kw == "element") {
      Element e;
      ls >> e.name >> e.count;
      if (!ls || e.count < 0) parse_error(path, "bad element line");
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) parse_error(path, "property before element");
      std::string type, name;
      ls >> type;
      if (type == "list") {
        std::string ct, it;
        ls >> ct >> it >> name;
        elements.back().is_list.push_back(true);
      } else {
        ls >> name;
        elements.back().is_list.push_back(false);
      }
      elements.back().props.push_back(name);
    } else if (kw == "end_header") {
      break;
    }
  }
  if (!ascii) parse_error(path, "only ASCII PLY is supported");

  std::vector<double> xyz, nxyz;
  std::vector<std::array<int, 3>> tris;
  bool has_normals = false;
  long nverts = 0;
  for (const Element& e : elements) {
    auto find = [&](const char* n) {
      auto it = std::find(e.props.begin(), e.props.end(), n);
      return it == e.props.end() ? -1 : static_cast<int>(it - e.props.begin());
    };
    if (e.name == "vertex") {
      const int ix = find("x"), iy = find("y"), iz = find("z");
      const int inx = find("nx"), iny = find("ny"), inz = find("nz");
      if (ix < 0 || iy < 0 || iz < 0) parse_error(path, "vertex element lacks x, y or z");
      has_normals = inx >= 0 && iny >= 0 && inz >= 0;
      nverts = e.count;
      for (long i = 0; i < e.count; ++i) {
        if (!std::getline(in, line)) parse_error(path, "truncated vertex list");
        std::istringstream ls(line);
        std::vector<double> vals(e.props.size());
        for (double& v : vals) {
          if (!(ls >> v)) parse_error(path, "bad vertex line");
        }
        xyz.insert(xyz.end(), {vals[static_cast<std::size_t>(ix)], vals[static_cast<std::size_t>(iy)],
                               vals[static_cast<std::size_t>(iz)]});
        if (has_normals) {
          nxyz.insert(nxyz.end(), {vals[static_cast<std::size_t>(inx)], vals[static_cast<std::size_t>(iny)],
                                   vals[static_cast<std::size_t>(inz)]});
        }
      }
    } else if (e.name == "face") {
      for (long i = 0; i < e.count; ++i) {
        if (!std::getline(in, line)) parse_error(path, "truncated face list");
        std::istringstream ls(line);
        long n = 0;
        if (!(ls >> n) || n < 3) parse_error(path, "face with fewer than 3 vertices");
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int& v : idx) {
          if (!(ls >> v)) parse_error(path, "bad face line");
        }
        for (std::size_t j = 1; j + 1 < idx.size(); ++j) tris.push_back({idx[0], idx[j], idx[j + 1]});
      }
    } else {
      for (long i = 0; i < e.count; ++i) std::getline(in, line);
    }
  }
  Points3 vertices = Eigen::Map<const Points3>(xyz.data(), 3, nverts);
  for (const auto& t : tris) {
    for (int i : t) {
      if (i < 0 || i >= nverts) parse_error(path, "face index out of range");
    }
  }
  if (has_normals) {
    SurfaceModel m;
    m.vertices = vertices;
    m.triangles = tris;
    m.normals = Eigen::Map<const Points3>(nxyz.data(), 3, nverts);
    bool unit = true;
    for (Eigen::Index i = 0; i < nverts; ++i) unit = unit && std::abs(m.normals.col(i).norm() - 1.0) <= 1e-6;
    if (unit) return m;
  }
  return SurfaceModel::with_vertex_normals(std::move(vertices), std::move(tris));
}

void write_ply(const fs::path& path, const SurfaceModel& model) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "ply\nformat ascii 1.0\n";
  os << "element vertex " << model.vertices.cols() << "\n";
  os << "property double x\nproperty double y\nproperty double z\n";
  const bool normals = model.normals.cols() == model.vertices.cols();
  if (normals) os << "property double nx\nproperty double ny\nproperty double nz\n";
  os << "element face " << model.triangles.size() << "\n";
  os << "property list uchar int vertex_indices\nend_header\n";
  for (Eigen::Index i = 0; i < model.vertices.cols(); ++i) {
    os << model.vertices(0, i) << ' ' << model.vertices(1, i) << ' ' << model.vertices(2, i);
    if (normals) os << ' ' << model.normals(0, i) << ' ' << model.normals(1, i) << ' ' << model.normals(2, i);
    os << '\n';
  }
  for (const auto& t : model.triangles) os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  write_file_atomic(path, os.str());
}

// ---- PFM / PGM ----

DepthImage read_pfm(const fs::path& path) {
  const std::string data = read_file(path);
  HeaderReader h{data};
  const std::string magic = h.next(path);
  if (magic != "Pf") parse_error(path, magic == "PF" ? "colour PFM is not a depth image" : "not a PFM file");
  const int w = h.next_int(path);
  const int ht = h.next_int(path);
  const std::string scale_tok = h.next(path);
  double scale = 0.0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    parse_error(path, "bad scale field");
  }
  if (w <= 0 || ht <= 0 || scale == 0.0) parse_error(path, "bad dimensions or scale");
  const std::size_t start = h.data_start(path);
  const std::size_t need = static_cast<std::size_t>(w) * ht * 4;
  if (data.size() - start < need) parse_error(path, "truncated pixel data");
  const bool little = scale < 0.0;
  DepthImage img(w, ht);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + start);
  for (int row = 0; row < ht; ++row) {
    const int v = ht - 1 - row;
    for (int u = 0; u < w; ++u) img.at(u, v) = get_f32(p + 4 * (static_cast<std::size_t>(row) * w + u), little);
  }
  return img;
}

void write_pfm(const fs::path& path, const DepthImage& depth) {
  std::string out = "Pf\n" + std::to_string(depth.width) + " " + std::to_string(depth.height) + "\n-1.0\n";
  out.reserve(out.size() + depth.data.size() * 4);
  for (int row = 0; row < depth.height; ++row) {
    const int v = depth.height - 1 - row;
    for (int u = 0; u < depth.width; ++u) put_f32_le(out, depth.at(u, v));
  }
  write_file_atomic(path, out);
}

DepthImage read_pgm16(const fs::path& path) {
  const std::string data = read_file(path);
  HeaderReader h{data};
  if (h.next(path) != "P5") parse_error(path, "not a binary PGM file");
  const int w = h.next_int(path);
  const int ht = h.next_int(path);
  const int maxval = h.next_int(path);
  if (w <= 0 || ht <= 0 || maxval <= 0 || maxval > 65535) parse_error(path, "bad dimensions or maxval");
  const std::size_t start = h.data_start(path);
  const int bytes = maxval > 255 ? 2 : 1;
  if (data.size() - start < static_cast<std::size_t>(w) * ht * bytes) parse_error(path, "truncated pixel data");
  DepthImage img(w, ht);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + start);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const unsigned mm = bytes == 2 ? (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1] : p[i];
    img.data[i] = static_cast<float>(mm / 1000.0);
  }
  return img;
}

void write_pgm16(const fs::path& path, const DepthImage& depth) {
  std::string out = "P5\n" + std::to_string(depth.width) + " " + std::to_string(depth.height) + "\n65535\n";
  for (float z : depth.data) {
    const long mm = std::clamp(std::lround(static_cast<double>(z) * 1000.0), 0L, 65535L);
    out.push_back(static_cast<char>((mm >> 8) & 0xff));
    out.push_back(static_cast<char>(mm & 0xff));
  }
  write_file_atomic(path, out);
}

DepthImage read_depth(const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".pfm") return read_pfm(path);
  if (ext == ".pgm") return read_pgm16(path);
  throw Error(ErrorCode::InvalidArgument, "unknown depth format: " + path.string());
}

// ---- TUM ----

std::vector<TrajectoryEntry> read_tum(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<TrajectoryEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v[8];
    for (double& x : v) {
      if (!(ls >> x)) parse_error(path, "line " + std::to_string(lineno) + ": expected 8 numbers");
    }
    std::string extra;
    if (ls >> extra) parse_error(path, "line " + std::to_string(lineno) + ": trailing fields");
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (!(q.norm() > 0.0)) parse_error(path, "line " + std::to_string(lineno) + ": zero quaternion");
    out.push_back({v[0], {Rotation::from_quaternion(q), Vec3(v[1], v[2], v[3])}});
  }
  return out;
}

void write_tum(const fs::path& path, const std::vector<TrajectoryEntry>& entries) {
  std::ostringstream os;
  os << "# timestamp tx ty tz qx qy qz qw (fixed frame -> camera)\n";
  for (const auto& e : entries) {
    const Eigen::Quaterniond q = e.pose.rotation.to_quaternion();
    const Vec3& t = e.pose.translation;
    os << fmt17(e.timestamp) << ' ' << fmt17(t.x()) << ' ' << fmt17(t.y()) << ' ' << fmt17(t.z()) << ' '
       << fmt17(q.x()) << ' ' << fmt17(q.y()) << ' ' << fmt17(q.z()) << ' ' << fmt17(q.w()) << '\n';
  }
  write_file_atomic(path, os.str());
}

// ---- KHM ----

fs::path khm_sidecar(const fs::path& path) {
  fs::path s = path;
  s += ".json";
  return s;
}

void write_khm(const fs::path& path, const HeatmapStack& stack) {
  if (stack.channels.empty()) throw Error(ErrorCode::InvalidArgument, "empty heatmap stack");
  const int w = stack.channels.front().width();
  const int h = stack.channels.front().height();
  std::string out = "KHM1";
  put_u32_le(out, static_cast<std::uint32_t>(w));
  put_u32_le(out, static_cast<std::uint32_t>(h));
  put_u32_le(out, static_cast<std::uint32_t>(stack.channels.size()));
  Json names = Json::array();
  for (const Heatmap& hm : stack.channels) {
    if (hm.width() != w || hm.height() != h) throw Error(ErrorCode::DimensionMismatch, "heatmap sizes differ");
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) put_f32_le(out, static_cast<float>(hm.grid(y, x)));
    }
    names.push_back(hm.keypoint_name);
  }
  Json side;
  side["names"] = names;
  side["mapping"] = {{"scale", stack.mapping.scale},
                     {"offset_u", stack.mapping.offset_u},
                     {"offset_v", stack.mapping.offset_v}};
  write_file_atomic(path, out);
  write_json(khm_sidecar(path), side);
}

HeatmapStack read_khm(const fs::path& path) {
  const std::string data = read_file(path);
  if (data.size() < 16 || data.compare(0, 4, "KHM1") != 0) parse_error(path, "not a KHM1 file");
  const auto* p = reinterpret_cast<const unsigned char*>(data.data());
  const std::uint32_t w = get_u32_le(p + 4), h = get_u32_le(p + 8), n = get_u32_le(p + 12);
  if (w == 0 || h == 0) parse_error(path, "zero heatmap size");
  const std::uint64_t need = 16 + 4ull * w * h * n;
  if (data.size() != need) parse_error(path, "payload size does not match the header");

  HeatmapStack stack;
  std::vector<std::string> names(n);
  if (fs::exists(khm_sidecar(path))) {
    const Json side = read_json(khm_sidecar(path));
    parsing("KHM sidecar", [&] {
      const Json& jn = field(side, "names");
      if (jn.size() != n) throw Error(ErrorCode::DimensionMismatch, "sidecar lists a different channel count");
      for (std::size_t i = 0; i < n; ++i) names[i] = jn.at(i).get<std::string>();
      if (side.contains("mapping")) {
        const Json& m = side.at("mapping");
        stack.mapping.scale = number(field(m, "scale"));
        stack.mapping.offset_u = number(field(m, "offset_u"));
        stack.mapping.offset_v = number(field(m, "offset_v"));
      }
      return 0;
    });
  }
  const unsigned char* q = p + 16;
  for (std::uint32_t c = 0; c < n; ++c) {
    Heatmap hm;
    hm.keypoint_name = names[c];
    hm.grid.resize(h, w);
    for (std::uint32_t y = 0; y < h; ++y) {
      for (std::uint32_t x = 0; x < w; ++x, q += 4) hm.grid(y, x) = get_f32(q, true);
    }
    stack.channels.push_back(std::move(hm));
  }
  return stack;
}

// ---- JSON helpers ----

Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw Error(ErrorCode::Parse, "expected " + std::to_string(rows) + " rows");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j.at(static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorCode::Parse, "expected " + std::to_string(cols) + " columns");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = number(row.at(static_cast<std::size_t>(c)));
  }
  return m;
}

Json vector_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vector_from_json(const Json& j, std::optional<Eigen::Index> size) {
  if (!j.is_array()) throw Error(ErrorCode::Parse, "expected an array");
  if (size && static_cast<Eigen::Index>(j.size()) != *size) {
    throw Error(ErrorCode::Parse, "expected " + std::to_string(*size) + " entries");
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j.at(i));
  return v;
}

namespace {

// 3 x p either as three rows or flattened row-major.
Points3 points3_from_json(const Json& j, Eigen::Index p) {
  if (j.is_array() && j.size() == 3 && j.at(0).is_array()) return matrix_from_json(j, 3, p);
  const Eigen::VectorXd flat = vector_from_json(j, 3 * p);
  Points3 m(3, p);
  for (Eigen::Index r = 0; r < 3; ++r) m.row(r) = flat.segment(r * p, p).transpose();
  return m;
}

std::vector<std::string> names_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorCode::Parse, "names must be an array");
  std::vector<std::string> out;
  for (const Json& n : j) out.push_back(n.get<std::string>());
  return out;
}

}  // namespace

Json to_json(const ShapeBasis& basis) {
  Json j;
  j["names"] = basis.names;
  j["b0"] = matrix_json(basis.b0);
  Json modes = Json::array();
  for (const Points3& m : basis.modes) modes.push_back(matrix_json(m));
  j["modes"] = modes;
  j["eigenvalues"] = basis.eigenvalues;
  return j;
}

ShapeBasis basis_from_json(const Json& j) {
  return parsing("basis", [&] {
    ShapeBasis b;
    b.names = names_from_json(field(j, "names"));
    const auto p = static_cast<Eigen::Index>(b.names.size());
    b.b0 = points3_from_json(field(j, "b0"), p);
    for (const Json& m : field(j, "modes")) b.modes.push_back(points3_from_json(m, p));
    const Eigen::VectorXd ev = vector_from_json(field(j, "eigenvalues"), static_cast<Eigen::Index>(b.modes.size()));
    b.eigenvalues.assign(ev.data(), ev.data() + ev.size());
    b.validate();
    return b;
  });
}

Json to_json(const Keypoints3D& kps) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < kps.size(); ++i) {
    Json e;
    e["name"] = kps.names[static_cast<std::size_t>(i)];
    e["position"] = vector_json(kps.points.col(i));
    if (kps.normals) e["normal"] = vector_json(kps.normals->col(i));
    arr.push_back(e);
  }
  return Json{{"keypoints", arr}};
}

Keypoints3D keypoints_from_json(const Json& j) {
  return parsing("keypoints", [&] {
    const Json& arr = j.is_array() ? j : field(j, "keypoints");
    if (!arr.is_array() || arr.empty()) throw Error(ErrorCode::Parse, "keypoints must be a nonempty array");
    Keypoints3D k;
    k.points.resize(3, static_cast<Eigen::Index>(arr.size()));
    int with_normal = 0;
    Points3 normals(3, static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const Json& e = arr.at(i);
      const auto col = static_cast<Eigen::Index>(i);
      if (e.contains("name") && e.contains("position")) {
        k.names.push_back(e.at("name").get<std::string>());
        k.points.col(col) = vector_from_json(e.at("position"), 3);
      } else {
        // {"<name>": [x, y, z], "normal": [...]}
        std::string name;
        for (const auto& [key, val] : e.items()) {
          if (key == "normal") continue;
          if (!name.empty()) throw Error(ErrorCode::Parse, "keypoint entry with several names");
          name = key;
          k.points.col(col) = vector_from_json(val, 3);
        }
        if (name.empty()) throw Error(ErrorCode::Parse, "keypoint entry without a name");
        k.names.push_back(name);
      }
      if (e.contains("normal")) {
        normals.col(col) = vector_from_json(e.at("normal"), 3);
        ++with_normal;
      }
    }
    if (with_normal != 0 && with_normal != static_cast<int>(arr.size())) {
      throw Error(ErrorCode::Parse, "either every keypoint has a normal or none does");
    }
    if (with_normal) k.normals = normals;
    k.validate();
    return k;
  });
}

Json to_json(const CameraIntrinsics& k) {
  return Json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics intrinsics_from_json(const Json& j) {
  return parsing("intrinsics", [&] {
    CameraIntrinsics k;
    k.fx = number(field(j, "fx"));
    k.fy = number(field(j, "fy"));
    k.cx = number(field(j, "cx"));
    k.cy = number(field(j, "cy"));
    k.width = field(j, "width").get<int>();
    k.height = field(j, "height").get<int>();
    k.validate();
    return k;
  });
}

Json to_json(const RigidTransform& t) {
  return Json{{"rotation", matrix_json(t.rotation.matrix())}, {"translation", vector_json(t.translation)}};
}

RigidTransform transform_from_json(const Json& j) {
  return parsing("transform", [&] {
    RigidTransform t;
    t.rotation = Rotation::from_matrix(matrix_from_json(field(j, "rotation"), 3, 3), 1e-6);
    t.translation = vector_from_json(field(j, "translation"), 3);
    return t;
  });
}

Json to_json(const SymmetrySet& sym) {
  Json arr = Json::array();
  for (const auto& t : sym.transforms) arr.push_back(to_json(t));
  return Json{{"symmetries", arr}};
}

SymmetrySet symmetries_from_json(const Json& j) {
  return parsing("symmetries", [&] {
    const Json& arr = j.is_array() ? j : field(j, "symmetries");
    std::vector<RigidTransform> ts;
    for (const Json& e : arr) ts.push_back(transform_from_json(e));
    return SymmetrySet::from(std::move(ts));
  });
}

Json to_json(const ObservationFrame& f) {
  Json kps = Json::array();
  for (Eigen::Index i = 0; i < f.obs.size(); ++i) {
    Json e;
    if (!f.obs.names.empty()) e["name"] = f.obs.names[static_cast<std::size_t>(i)];
    e["u"] = f.obs.w(0, i);
    e["v"] = f.obs.w(1, i);
    e["confidence"] = f.obs.d(i);
    kps.push_back(e);
  }
  return Json{{"frame_id", f.frame_id}, {"keypoints", kps}};
}

ObservationFrame observations_from_json(const Json& j) {
  return parsing("observations", [&] {
    ObservationFrame f;
    f.frame_id = j.contains("frame_id") ? j.at("frame_id").get<int>() : 0;
    const Json& arr = field(j, "keypoints");
    const auto n = static_cast<Eigen::Index>(arr.size());
    f.obs.w.resize(2, n);
    f.obs.d.resize(n);
    int named = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Json& e = arr.at(static_cast<std::size_t>(i));
      f.obs.w(0, i) = number(field(e, "u"));
      f.obs.w(1, i) = number(field(e, "v"));
      f.obs.d(i) = number(field(e, "confidence"));
      if (e.contains("name")) {
        f.obs.names.push_back(e.at("name").get<std::string>());
        ++named;
      }
    }
    if (named != 0 && named != n) throw Error(ErrorCode::Parse, "either every observation is named or none is");
    f.obs.validate();
    return f;
  });
}

Json to_json(const GroundTruth& gt) {
  Json j = to_json(gt.pose);
  Json out{{"frame_id", gt.frame_id}};
  out["rotation"] = j["rotation"];
  out["translation"] = j["translation"];
  out["c"] = vector_json(gt.c);
  return out;
}

GroundTruth ground_truth_from_json(const Json& j) {
  return parsing("ground truth", [&] {
    GroundTruth gt;
    gt.frame_id = field(j, "frame_id").get<int>();
    gt.pose = transform_from_json(j);
    gt.c = j.contains("c") ? vector_from_json(j.at("c")) : Eigen::VectorXd();
    return gt;
  });
}

namespace {

Json trace_json(const Trace& t) {
  Json arr = Json::array();
  for (const auto& e : t) arr.push_back(Json{{"iteration", e.iteration}, {"block", to_string(e.block)}, {"cost", e.cost}});
  return arr;
}

Json flags_json(const SolveFlags& f) {
  return Json{{"converged", f.converged},
              {"ill_conditioned", f.ill_conditioned},
              {"behind_camera", f.behind_camera},
              {"condition_number", f.condition_number}};
}

}  // namespace

Json pose_estimate_json(int frame_id, const PoseEstimate& est, bool include_trace) {
  Json j{{"frame_id", frame_id}, {"status", "ok"}};
  j["names"] = est.observations.names;

  const WeakSolution& w = est.weak;
  Json weak;
  weak["s"] = w.pose.cam.s;
  weak["rbar"] = matrix_json(w.pose.cam.rbar);
  weak["tbar"] = vector_json(w.pose.cam.tbar);
  weak["rotation"] = matrix_json(lift_rotation(w.pose.cam.rbar).matrix());
  weak["c"] = vector_json(w.pose.c);
  weak["cost"] = w.cost;
  weak["iterations"] = w.iterations;
  weak["flags"] = flags_json(w.flags);
  weak["residuals_px"] = vector_json(est.weak_residuals_px);
  if (include_trace) weak["trace"] = trace_json(w.trace);
  j["weak"] = weak;

  if (est.full) {
    const FullSolution& f = *est.full;
    Json full = to_json(f.pose.pose);
    full["c"] = vector_json(f.pose.c);
    full["z"] = vector_json(f.pose.z);
    full["cost"] = f.cost;
    full["iterations"] = f.iterations;
    full["flags"] = flags_json(f.flags);
    full["residuals_px"] = vector_json(est.full_residuals_px);
    if (include_trace) full["trace"] = trace_json(f.trace);
    j["full"] = full;
  }
  return j;
}

Json pose_failure_json(int frame_id, ErrorCode code, const std::string& message) {
  return Json{{"frame_id", frame_id}, {"status", "failed"}, {"error", to_string(code)}, {"message", message}};
}

PoseRecord pose_record_from_json(const Json& j) {
  return parsing("pose", [&] {
    PoseRecord r;
    r.frame_id = field(j, "frame_id").get<int>();
    r.ok = field(j, "status").get<std::string>() == "ok";
    if (!r.ok) return r;
    const Json& weak = field(j, "weak");
    r.weak_rotation = lift_rotation(polar_rows(matrix_from_json(field(weak, "rbar"), 2, 3)));
    if (j.contains("full")) r.full = transform_from_json(j.at("full"));
    return r;
  });
}

Json annotation_json(int frame_id, const RigidTransform& camera_pose, const std::vector<ProjectedKeypoint>& kps,
                     const std::optional<std::string>& warning) {
  Json arr = Json::array();
  for (const auto& kp : kps) {
    arr.push_back(Json{{"name", kp.name},
                       {"u", kp.pixel.x()},
                       {"v", kp.pixel.y()},
                       {"visibility", to_string(kp.visibility)},
                       {"refinement", to_string(kp.refinement)}});
  }
  Json j{{"frame_id", frame_id}, {"camera_pose", to_json(camera_pose)}, {"keypoints", arr}};
  if (warning) j["warning"] = *warning;
  return j;
}

}  // namespace kpose
