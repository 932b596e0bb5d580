#include "ppcreg/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "ppcreg/errors.hpp"

namespace ppcreg::io {

namespace {

using nlohmann::json;

constexpr const char* kVolumeFormat = "ppcreg-volume";
constexpr const char* kImageFormat = "ppcreg-image";

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::ofstream open_for_write(const fs::path& path, bool binary) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIoFailure, fmt::format("cannot write '{}'", path.string()));
  }
  return out;
}

void close_checked(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw Error(ErrorCode::kIoFailure, fmt::format("failed writing '{}'", path.string()));
}

std::string vec_json(std::initializer_list<double> values) {
  std::string s = "[";
  bool first = true;
  for (double v : values) {
    s += first ? "" : ", ";
    s += format_double(v);
    first = false;
  }
  return s + "]";
}

template <typename UInt>
void put_le(std::vector<unsigned char>& out, UInt bits) {
  for (std::size_t b = 0; b < sizeof(UInt); ++b) {
    out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xffu));
  }
}

template <typename UInt>
UInt get_le(const unsigned char* p) {
  UInt bits = 0;
  for (std::size_t b = 0; b < sizeof(UInt); ++b) bits |= static_cast<UInt>(p[b]) << (8 * b);
  return bits;
}

struct RawHeader {
  std::vector<int> dims;
  json doc;
};

// Parses and validates the fields shared by volume and image headers.
RawHeader parse_header(const fs::path& header_path, const char* format, std::size_t rank,
                       const char* dtype) {
  const std::string text = read_text(header_path);
  RawHeader h;
  try {
    h.doc = json::parse(text);
    if (h.doc.at("format").get<std::string>() != format) {
      throw Error(ErrorCode::kMalformedHeader,
                  fmt::format("'{}' is not a {} header", header_path.string(), format));
    }
    h.dims = h.doc.at("dims").get<std::vector<int>>();
    const std::string order = h.doc.at("byte_order").get<std::string>();
    const std::string type = h.doc.at("dtype").get<std::string>();
    if (order != "little") {
      throw Error(ErrorCode::kByteOrderMismatch,
                  fmt::format("'{}' declares byte order '{}', only 'little' is supported",
                              header_path.string(), order));
    }
    if (type != dtype) {
      throw Error(ErrorCode::kUnsupportedType,
                  fmt::format("'{}' declares dtype '{}', expected '{}'", header_path.string(),
                              type, dtype));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedHeader,
                fmt::format("malformed header '{}': {}", header_path.string(), e.what()));
  }
  if (h.dims.size() != rank ||
      std::any_of(h.dims.begin(), h.dims.end(), [](int d) { return d <= 0; })) {
    throw Error(ErrorCode::kMalformedHeader,
                fmt::format("'{}' needs {} positive dims", header_path.string(), rank));
  }
  return h;
}

std::vector<unsigned char> read_payload(const fs::path& header_path, std::size_t expected_bytes) {
  const fs::path raw = payload_path(header_path);
  std::vector<unsigned char> bytes = read_bytes(raw);
  if (bytes.size() < expected_bytes) {
    throw Error(ErrorCode::kTruncatedPayload,
                fmt::format("'{}' holds {} bytes, header requires {}", raw.string(), bytes.size(),
                            expected_bytes));
  }
  if (bytes.size() > expected_bytes) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("'{}' holds {} bytes, header dims imply {}", raw.string(),
                            bytes.size(), expected_bytes));
  }
  return bytes;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out = open_for_write(path, true);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  close_checked(out, path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_for_write(path, false);
  out << text;
  close_checked(out, path);
}

}  // namespace

std::string format_double(double value) { return fmt::format("{:.17g}", value); }

fs::path payload_path(const fs::path& header_path) {
  fs::path raw = header_path;
  raw.replace_extension(".raw");
  return raw;
}

void save_volume(const fs::path& header_path, const Volume& v) {
  const Dims3& d = v.dims();
  const Vec3& s = v.spacing();
  const Vec3& o = v.origin();
  const std::string header = fmt::format(
      "{{\n  \"format\": \"{}\",\n  \"dims\": [{}, {}, {}],\n  \"spacing\": {},\n"
      "  \"origin\": {},\n  \"dtype\": \"float32\",\n  \"byte_order\": \"little\",\n"
      "  \"data_file\": \"{}\"\n}}\n",
      kVolumeFormat, d[0], d[1], d[2], vec_json({s.x(), s.y(), s.z()}),
      vec_json({o.x(), o.y(), o.z()}), payload_path(header_path).filename().string());

  std::vector<unsigned char> bytes;
  bytes.reserve(4 * v.voxel_count());
  for (float value : v.data()) put_le(bytes, std::bit_cast<std::uint32_t>(value));
  write_text(header_path, header);
  write_bytes(payload_path(header_path), bytes);
}

Volume load_volume(const fs::path& header_path) {
  const RawHeader h = parse_header(header_path, kVolumeFormat, 3, "float32");
  Vec3 spacing, origin;
  try {
    const auto sp = h.doc.at("spacing").get<std::vector<double>>();
    const auto og = h.doc.at("origin").get<std::vector<double>>();
    if (sp.size() != 3 || og.size() != 3) {
      throw Error(ErrorCode::kMalformedHeader,
                  fmt::format("'{}': spacing and origin need 3 values", header_path.string()));
    }
    spacing = Vec3(sp[0], sp[1], sp[2]);
    origin = Vec3(og[0], og[1], og[2]);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedHeader,
                fmt::format("malformed header '{}': {}", header_path.string(), e.what()));
  }
  const Dims3 dims{h.dims[0], h.dims[1], h.dims[2]};
  const std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  const auto bytes = read_payload(header_path, 4 * count);
  std::vector<float> data(count);
  for (std::size_t n = 0; n < count; ++n) {
    data[n] = std::bit_cast<float>(get_le<std::uint32_t>(&bytes[4 * n]));
  }
  return Volume(dims, spacing, origin, std::move(data));
}

void save_image(const fs::path& header_path, const Image2D& img) {
  const std::string header = fmt::format(
      "{{\n  \"format\": \"{}\",\n  \"dims\": [{}, {}],\n  \"dtype\": \"float64\",\n"
      "  \"byte_order\": \"little\",\n  \"data_file\": \"{}\"\n}}\n",
      kImageFormat, img.width, img.height, payload_path(header_path).filename().string());
  std::vector<unsigned char> bytes;
  bytes.reserve(8 * img.data.size());
  for (double value : img.data) put_le(bytes, std::bit_cast<std::uint64_t>(value));
  write_text(header_path, header);
  write_bytes(payload_path(header_path), bytes);
}

Image2D load_image(const fs::path& header_path) {
  const RawHeader h = parse_header(header_path, kImageFormat, 2, "float64");
  Image2D img(h.dims[0], h.dims[1]);
  const auto bytes = read_payload(header_path, 8 * img.data.size());
  for (std::size_t n = 0; n < img.data.size(); ++n) {
    img.data[n] = std::bit_cast<double>(get_le<std::uint64_t>(&bytes[8 * n]));
  }
  return img;
}

void export_image_pgm(const Image2D& img, const fs::path& path) {
  if (img.width <= 0 || img.height <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "cannot export an empty image");
  }
  const auto [lo_it, hi_it] = std::minmax_element(img.data.begin(), img.data.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  std::vector<unsigned char> bytes;
  const std::string header = fmt::format("P5\n{} {}\n65535\n", img.width, img.height);
  bytes.assign(header.begin(), header.end());
  for (double value : img.data) {
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::kInvalidArgument, "cannot export an image with non-finite values");
    }
    const auto level =
        range > 0.0 ? static_cast<std::uint16_t>(std::lround((value - lo) / range * 65535.0)) : 0;
    bytes.push_back(static_cast<unsigned char>(level >> 8));  // PGM is big-endian
    bytes.push_back(static_cast<unsigned char>(level & 0xffu));
  }
  write_bytes(path, bytes);
}

std::string pose_to_json(const RigidTransform& pose) {
  const Mat3& r = pose.rotation();
  const Vec3& t = pose.translation();
  return fmt::format(
      "{{\"frame\": \"{}\", \"rotation\": {}, \"translation\": {}}}", kPoseFrame,
      vec_json({r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)}),
      vec_json({t.x(), t.y(), t.z()}));
}

RigidTransform pose_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("frame").get<std::string>() != kPoseFrame) {
      throw Error(ErrorCode::kMalformedHeader,
                  fmt::format("pose frame must be '{}'", kPoseFrame));
    }
    const auto r = doc.at("rotation").get<std::vector<double>>();
    const auto t = doc.at("translation").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) {
      throw Error(ErrorCode::kMalformedHeader, "pose needs 9 rotation and 3 translation values");
    }
    Mat3 rot;
    rot << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
    if (!is_valid_rotation(rot)) {
      throw Error(ErrorCode::kMalformedHeader, "pose rotation is not a proper rotation");
    }
    return RigidTransform(rot, Vec3(t[0], t[1], t[2]));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedHeader, fmt::format("malformed pose record: {}", e.what()));
  }
}

void save_pose(const fs::path& path, const RigidTransform& pose) {
  write_text(path, pose_to_json(pose) + "\n");
}

RigidTransform load_pose(const fs::path& path) {
  try {
    return pose_from_json(read_text(path));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kMalformedHeader) throw;
    throw Error(e.code(), fmt::format("'{}': {}", path.string(), e.what()));
  }
}

void save_points(const fs::path& path, const SurfacePointSet& points) {
  std::string text = "x,y,z,gx,gy,gz\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& x = points.points[i];
    const Vec3& g = points.gradients[i];
    text += fmt::format("{},{},{},{},{},{}\n", format_double(x.x()), format_double(x.y()),
                        format_double(x.z()), format_double(g.x()), format_double(g.y()),
                        format_double(g.z()));
  }
  write_text(path, text);
}

SurfacePointSet load_points(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "x,y,z,gx,gy,gz") {
    throw Error(ErrorCode::kMalformedHeader,
                fmt::format("'{}' is not a point-set CSV", path.string()));
  }
  SurfacePointSet out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    double v[6];
    std::size_t pos = 0;
    for (int n = 0; n < 6; ++n) {
      const std::size_t end = line.find(',', pos);
      const std::string field = line.substr(pos, end == std::string::npos ? end : end - pos);
      char* stop = nullptr;
      v[n] = std::strtod(field.c_str(), &stop);
      if (field.empty() || *stop != '\0' || (n < 5 && end == std::string::npos)) {
        throw Error(ErrorCode::kMalformedHeader,
                    fmt::format("'{}' line {}: bad field '{}'", path.string(), line_no, field));
      }
      pos = end == std::string::npos ? line.size() : end + 1;
    }
    out.points.emplace_back(v[0], v[1], v[2]);
    out.gradients.emplace_back(v[3], v[4], v[5]);
  }
  return out;
}

void export_results_csv(const Summary& summary, const fs::path& out_dir) {
  const auto row_text = [](const SummaryRow& row) {
    return fmt::format("{},{},{},{},{},{},{},{}\n", row.name, format_double(row.p50),
                       format_double(row.p75), format_double(row.p95),
                       format_double(row.mtre_mean), format_double(row.mtre_std),
                       row.rf_mean ? format_double(*row.rf_mean) : "",
                       row.rf_std ? format_double(*row.rf_std) : "");
  };
  std::string text = std::string(kSummaryHeader) + "\n";
  text += row_text(summary.initial);
  text += row_text(summary.method);
  write_text(out_dir / "summary.csv", text);

  std::string samples = std::string(kSamplesHeader) + "\n";
  for (const SampleResult& s : summary.samples) {
    samples += fmt::format("{},{},{},{},{},{}\n", s.sample_id, s.view_id, s.seed,
                           format_double(s.mtre_before),
                           format_double(std::min(s.mtre_after, kScatterClipMm)),
                           format_double(s.mtre_after));
  }
  write_text(out_dir / "samples.csv", samples);
}

}  // namespace ppcreg::io
