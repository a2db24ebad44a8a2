#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coarsebind/affinity.hpp"
#include "coarsebind/distogram.hpp"
#include "coarsebind/epinet.hpp"
#include "coarsebind/selection.hpp"
#include "coarsebind/tensor.hpp"

namespace coarsebind::io {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Little-endian f32 packing used by all binary payloads.
std::vector<std::uint8_t> pack_f32(const std::vector<double>& values);
std::vector<double> unpack_f32(const std::vector<std::uint8_t>& bytes);

// Distogram file: one-line JSON header, then one line of base64 f32 data
// (row-major i, j, b).
std::string distogram_to_string(const distogram::Distogram& d);
distogram::Distogram distogram_from_string(const std::string& text);

// Posterior file: JSON header {K, N, ids} + base64 f32 row-major K x N.
std::string posterior_to_string(const Mat& samples, const std::vector<std::string>& ids);
struct PosteriorFile {
  Mat samples;
  std::vector<std::string> ids;
};
PosteriorFile posterior_from_string(const std::string& text);

// Parameter checkpoint: JSON manifest (config, seed, shapes) with one
// base64 f32 blob per tensor, keyed by the stable parameter names.
std::string checkpoint_to_string(const ParamStore& params, const std::string& config_json,
                                 std::uint64_t seed);
struct Checkpoint {
  ParamStore params;
  std::string config_json;
  std::uint64_t seed = 0;
};
Checkpoint checkpoint_from_string(const std::string& text);

// Assay records as JSON-lines.
std::string assay_record_to_line(const affinity::AssayRecord& r);
affinity::AssayRecord assay_record_from_line(const std::string& line);

// Selection-pool items as JSON-lines.
std::string pool_item_to_line(const select::PoolItem& item);
select::PoolItem pool_item_from_line(const std::string& line);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Sidecar metadata written next to every CLI output: config hash, seed,
// format version. Deliberately no timestamps, so reruns are byte-identical.
void write_run_meta(const std::string& out_path, const std::string& config_json,
                    std::uint64_t seed);

}  // namespace coarsebind::io
