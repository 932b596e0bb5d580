#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ppcreg/geometry.hpp"
#include "ppcreg/pipeline.hpp"
#include "ppcreg/projector.hpp"
#include "ppcreg/volume.hpp"

namespace ppcreg::io {

namespace fs = std::filesystem;

// Volumes and images are stored as a JSON header plus a raw little-endian
// payload next to it (same stem, ".raw"). Volumes are float32, images
// float64; both x-fastest.

void save_volume(const fs::path& header_path, const Volume& v);
/// Errors: kIoFailure, kMalformedHeader, kByteOrderMismatch,
/// kUnsupportedType, kTruncatedPayload, kDimensionMismatch.
Volume load_volume(const fs::path& header_path);

void save_image(const fs::path& header_path, const Image2D& img);
Image2D load_image(const fs::path& header_path);

fs::path payload_path(const fs::path& header_path);

/// 16-bit binary PGM, min-max scaled to [0, 65535]; constant images map to 0.
void export_image_pgm(const Image2D& img, const fs::path& path);

// Poses ----------------------------------------------------------------------

inline constexpr const char* kPoseFrame = "camera_from_volume";

std::string pose_to_json(const RigidTransform& pose);
/// Throws kMalformedHeader on a bad record or an invalid rotation.
RigidTransform pose_from_json(const std::string& text);
void save_pose(const fs::path& path, const RigidTransform& pose);
RigidTransform load_pose(const fs::path& path);

// Point sets -----------------------------------------------------------------

/// CSV "x,y,z,gx,gy,gz" with 17 significant digits.
void save_points(const fs::path& path, const SurfacePointSet& points);
SurfacePointSet load_points(const fs::path& path);

// Results --------------------------------------------------------------------

inline constexpr const char* kSummaryHeader =
    "name,p50,p75,p95,mtre_mean,mtre_std,rf_mean,rf_std";
inline constexpr const char* kSamplesHeader =
    "sample_id,view_id,seed,mtre_before,mtre_after_clipped50,mtre_after_raw";
inline constexpr double kScatterClipMm = 50.0;

/// Writes summary.csv (initial + method rows) and samples.csv into out_dir.
void export_results_csv(const Summary& summary, const fs::path& out_dir);

/// 17 significant digits; exact round trip through strtod.
std::string format_double(double value);

}  // namespace ppcreg::io
