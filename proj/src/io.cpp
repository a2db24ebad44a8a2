#include "coarsebind/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "coarsebind/errors.hpp"
#include "json.hpp"

namespace coarsebind::io {

using nlohmann::json;

namespace {

const char* kB64Alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    std::uint32_t chunk = static_cast<std::uint32_t>(bytes[i]) << 16;
    const std::size_t rest = bytes.size() - i;
    if (rest > 1) chunk |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
    if (rest > 2) chunk |= static_cast<std::uint32_t>(bytes[i + 2]);
    out.push_back(kB64Alphabet[(chunk >> 18) & 63]);
    out.push_back(kB64Alphabet[(chunk >> 12) & 63]);
    out.push_back(rest > 1 ? kB64Alphabet[(chunk >> 6) & 63] : '=');
    out.push_back(rest > 2 ? kB64Alphabet[chunk & 63] : '=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ParseError("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (k < 2 || (k == 2 && text[i + 3] != '='))
          throw ParseError("base64: misplaced padding", static_cast<std::ptrdiff_t>(i + k));
        vals[k] = 0;
        ++pad;
      } else {
        vals[k] = b64_value(c);
        if (vals[k] < 0)
          throw ParseError("base64: invalid character", static_cast<std::ptrdiff_t>(i + k));
        if (pad > 0) throw ParseError("base64: data after padding", static_cast<std::ptrdiff_t>(i + k));
      }
    }
    const std::uint32_t chunk = (static_cast<std::uint32_t>(vals[0]) << 18) |
                                (static_cast<std::uint32_t>(vals[1]) << 12) |
                                (static_cast<std::uint32_t>(vals[2]) << 6) |
                                static_cast<std::uint32_t>(vals[3]);
    out.push_back(static_cast<std::uint8_t>((chunk >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((chunk >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(chunk & 0xff));
  }
  return out;
}

std::vector<std::uint8_t> pack_f32(const std::vector<double>& values) {
  std::vector<std::uint8_t> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto f = static_cast<float>(values[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    out[4 * i + 0] = static_cast<std::uint8_t>(bits & 0xff);
    out[4 * i + 1] = static_cast<std::uint8_t>((bits >> 8) & 0xff);
    out[4 * i + 2] = static_cast<std::uint8_t>((bits >> 16) & 0xff);
    out[4 * i + 3] = static_cast<std::uint8_t>((bits >> 24) & 0xff);
  }
  return out;
}

std::vector<double> unpack_f32(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() % 4 != 0) throw ParseError("f32 payload: size not a multiple of 4");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    out[i] = static_cast<double>(f);
  }
  return out;
}

namespace {

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": " + e.what(), static_cast<std::ptrdiff_t>(e.byte));
  } catch (const json::exception& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

// header line + payload line
std::pair<std::string, std::string> split_two_lines(const std::string& text, const char* what) {
  const auto nl = text.find('\n');
  if (nl == std::string::npos) throw ParseError(std::string(what) + ": missing payload line");
  std::string payload = text.substr(nl + 1);
  while (!payload.empty() && (payload.back() == '\n' || payload.back() == '\r')) payload.pop_back();
  return {text.substr(0, nl), payload};
}

}  // namespace

std::string distogram_to_string(const distogram::Distogram& d) {
  json header;
  header["n_tokens"] = d.n_tokens;
  header["n_bins"] = d.bins.n_bins;
  header["bin_config"] = {{"lower", d.bins.lower},
                          {"upper", d.bins.upper},
                          {"c1", d.bins.covalent_center},
                          {"c64", d.bins.longrange_center}};
  json kinds = json::array();
  for (const auto k : d.kinds) kinds.push_back(k == TokenKind::Ligand ? "ligand" : "protein");
  header["token_kinds"] = std::move(kinds);
  header["dtype"] = "f32";
  header["layout"] = "row-major i,j,b";
  return header.dump() + "\n" + base64_encode(pack_f32(d.probs)) + "\n";
}

distogram::Distogram distogram_from_string(const std::string& text) {
  const auto [header_line, payload] = split_two_lines(text, "distogram");
  const json h = parse_json(header_line, "distogram header");
  try {
    distogram::Distogram d;
    d.n_tokens = h.at("n_tokens").get<std::size_t>();
    if (h.at("n_bins").get<int>() != d.bins.n_bins)
      throw ParseError("distogram: unsupported n_bins");
    if (h.at("dtype").get<std::string>() != "f32") throw ParseError("distogram: unsupported dtype");
    const json& bc = h.at("bin_config");
    d.bins.lower = bc.at("lower").get<double>();
    d.bins.upper = bc.at("upper").get<double>();
    d.bins.covalent_center = bc.at("c1").get<double>();
    d.bins.longrange_center = bc.at("c64").get<double>();
    for (const auto& k : h.at("token_kinds")) {
      const std::string s = k.get<std::string>();
      if (s == "ligand")
        d.kinds.push_back(TokenKind::Ligand);
      else if (s == "protein")
        d.kinds.push_back(TokenKind::Protein);
      else
        throw ParseError("distogram: bad token kind '" + s + "'");
    }
    if (d.kinds.size() != d.n_tokens) throw ParseError("distogram: token_kinds length mismatch");
    d.probs = unpack_f32(base64_decode(payload));
    const std::size_t expect = d.n_tokens * d.n_tokens * static_cast<std::size_t>(d.bins.n_bins);
    if (d.probs.size() != expect)
      throw ParseError("distogram: payload holds " + std::to_string(d.probs.size()) +
                       " values, expected " + std::to_string(expect));
    return d;
  } catch (const ParseError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError(std::string("distogram: ") + e.what());
  }
}

std::string posterior_to_string(const Mat& samples, const std::vector<std::string>& ids) {
  if (ids.size() != samples.cols) throw InputError("posterior_to_string: id count mismatch");
  json header;
  header["K"] = samples.rows;
  header["N"] = samples.cols;
  header["ids"] = ids;
  return header.dump() + "\n" + base64_encode(pack_f32(samples.v)) + "\n";
}

PosteriorFile posterior_from_string(const std::string& text) {
  const auto [header_line, payload] = split_two_lines(text, "posterior");
  const json h = parse_json(header_line, "posterior header");
  try {
    PosteriorFile out;
    const auto k = h.at("K").get<std::size_t>();
    const auto n = h.at("N").get<std::size_t>();
    out.ids = h.at("ids").get<std::vector<std::string>>();
    if (out.ids.size() != n) throw ParseError("posterior: ids length mismatch");
    out.samples = Mat(k, n);
    out.samples.v = unpack_f32(base64_decode(payload));
    if (out.samples.v.size() != k * n) throw ParseError("posterior: payload size mismatch");
    return out;
  } catch (const ParseError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError(std::string("posterior: ") + e.what());
  }
}

std::string checkpoint_to_string(const ParamStore& params, const std::string& config_json,
                                 std::uint64_t seed) {
  json doc;
  doc["config"] = parse_json(config_json, "checkpoint config");
  doc["seed"] = seed;
  json tensors = json::object();
  for (const auto& e : params.entries()) {
    json t;
    t["shape"] = e.tensor.shape;
    t["data"] = base64_encode(pack_f32(e.tensor.data));
    tensors[e.name] = std::move(t);
  }
  doc["params"] = std::move(tensors);
  return doc.dump();
}

Checkpoint checkpoint_from_string(const std::string& text) {
  const json doc = parse_json(text, "checkpoint");
  try {
    Checkpoint out;
    out.config_json = doc.at("config").dump();
    out.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& [name, t] : doc.at("params").items()) {
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      Tensor& tensor = out.params.add(name, shape);
      tensor.data = unpack_f32(base64_decode(t.at("data").get<std::string>()));
      if (tensor.data.size() != Tensor::numel(shape))
        throw ParseError("checkpoint: tensor '" + name + "' payload does not match its shape");
    }
    return out;
  } catch (const ParseError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

std::string assay_record_to_line(const affinity::AssayRecord& r) {
  json j;
  j["assay_id"] = r.assay_id;
  j["complex_id"] = r.complex_id;
  j["label_kind"] = r.label_kind == affinity::LabelKind::Continuous ? "continuous" : "binary";
  j["value"] = r.value;
  if (r.h_lp)
    j["h_lp"] = *r.h_lp;
  else
    j["h_lp"] = nullptr;
  return j.dump();
}

affinity::AssayRecord assay_record_from_line(const std::string& line) {
  const json j = parse_json(line, "assay record");
  try {
    affinity::AssayRecord r;
    r.assay_id = j.at("assay_id").get<std::string>();
    r.complex_id = j.at("complex_id").get<std::string>();
    const std::string kind = j.at("label_kind").get<std::string>();
    if (kind == "continuous")
      r.label_kind = affinity::LabelKind::Continuous;
    else if (kind == "binary")
      r.label_kind = affinity::LabelKind::Binary;
    else
      throw ParseError("assay record: bad label_kind '" + kind + "'");
    r.value = j.at("value").get<double>();
    if (j.contains("h_lp") && !j.at("h_lp").is_null()) r.h_lp = j.at("h_lp").get<double>();
    return r;
  } catch (const ParseError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError(std::string("assay record: ") + e.what());
  }
}

std::string pool_item_to_line(const select::PoolItem& item) {
  json j;
  j["id"] = item.id;
  j["g"] = item.latent;
  j["y_pred"] = item.y_pred;
  j["y_true"] = item.y_true;
  return j.dump();
}

select::PoolItem pool_item_from_line(const std::string& line) {
  const json j = parse_json(line, "pool item");
  try {
    select::PoolItem item;
    item.id = j.at("id").get<std::string>();
    item.latent = j.at("g").get<std::vector<double>>();
    item.y_pred = j.at("y_pred").get<double>();
    item.y_true = j.at("y_true").get<double>();
    return item;
  } catch (const ParseError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError(std::string("pool item: ") + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write file: " + path);
  f << content;
}

void write_run_meta(const std::string& out_path, const std::string& config_json,
                    std::uint64_t seed) {
  // FNV-1a hash of the canonical config dump
  const std::string canon = parse_json(config_json, "run config").dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (const char c : canon) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ULL;
  }
  json meta;
  meta["config_hash"] = h;
  meta["seed"] = seed;
  meta["format_version"] = 1;
  write_file(out_path + ".meta.json", meta.dump() + "\n");
}

}  // namespace coarsebind::io
