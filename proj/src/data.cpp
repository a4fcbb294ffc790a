#include "coinnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include "byte_io.hpp"
#include "coinnet/error.hpp"
#include "coinnet/rng.hpp"

namespace coinnet::data {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::int64_t parse_int(const std::string& s, std::size_t line, const char* field) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorKind::Format, "manifest line " + std::to_string(line) + ": " + field + " '" + s + "' is not an integer");
  }
  return v;
}

std::string shape_str(const FeatureMap& m) {
  return std::to_string(m.height) + "x" + std::to_string(m.width) + "x" + std::to_string(m.channels);
}

FeatureMap gaussian_map(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  FeatureMap m(h, w, c);
  for (auto& v : m.values) v = rng.normal();
  return m;
}

// Float32 storage precision, as the reader returns it.
void round_to_storage(FeatureMap& m) {
  for (auto& v : m.values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

// --- feature files -----------------------------------------------------------

std::vector<unsigned char> encode_feature(const FeatureMap& map) {
  require(map.height >= 1 && map.width >= 1 && map.channels >= 1, ErrorKind::InvalidArgument,
          "feature map dimensions must be positive");
  require(map.values.size() == map.height * map.width * map.channels, ErrorKind::ShapeMismatch,
          "feature map buffer does not match its declared shape");
  detail::ByteWriter w;
  w.bytes(kFeatureMagic, 4);
  w.uint<std::uint16_t>(kFeatureVersion);
  w.uint<std::uint16_t>(0);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(map.height));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(map.width));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(map.channels));
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const float f = static_cast<float>(map.values[i]);
    require(std::isfinite(f), ErrorKind::InvalidArgument,
            "feature value at index " + std::to_string(i) + " is not finite in float32");
    w.f32(f);
  }
  return std::move(w.buffer());
}

FeatureMap decode_feature(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes, "feature file");
  r.need(kFeatureHeaderBytes, "header");
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::string(magic, 4) != std::string(kFeatureMagic, 4)) r.reject(0, "bad magic (expected CNFM)");
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kFeatureVersion) r.reject(4, "unsupported version " + std::to_string(version));
  const auto reserved = r.uint<std::uint16_t>("reserved");
  if (reserved != 0) r.reject(6, "reserved field is " + std::to_string(reserved) + ", expected 0");
  const std::uint64_t h = r.uint<std::uint32_t>("height");
  const std::uint64_t w = r.uint<std::uint32_t>("width");
  const std::uint64_t c = r.uint<std::uint32_t>("channels");
  if (h == 0) r.reject(8, "zero height");
  if (w == 0) r.reject(12, "zero width");
  if (c == 0) r.reject(16, "zero channels");
  // H*W*C*4 can exceed 64 bits for hostile headers.
  const std::uint64_t hw = h * w;
  const bool overflow = hw != 0 && c > (UINT64_MAX / 4) / hw;
  const std::uint64_t expected = overflow ? 0 : hw * c * 4;
  if (overflow || expected != r.remaining()) {
    fail(ErrorKind::Format, "feature file: payload size mismatch after header at byte offset 20: expected " +
                                (overflow ? std::string("an impossibly large payload") : std::to_string(expected)) +
                                " bytes for " + std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c) +
                                ", found " + std::to_string(r.remaining()));
  }
  FeatureMap map(h, w, c);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const std::size_t at = r.offset();
    const float f = r.f32("payload");
    if (!std::isfinite(f)) r.reject(at, "non-finite payload value (element " + std::to_string(i) + ")");
    map.values[i] = f;
  }
  return map;
}

void write_feature(const std::filesystem::path& path, const FeatureMap& map) {
  detail::write_file_atomic(path, encode_feature(map));
}

FeatureMap read_feature(const std::filesystem::path& path) {
  try {
    return decode_feature(detail::read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

// --- manifest ----------------------------------------------------------------

bool Manifest::has_groups() const {
  return std::any_of(records.begin(), records.end(), [](const ManifestRecord& r) { return r.group >= 0; });
}

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::map<std::string, std::size_t> first_line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != kManifestHeader) {
        fail(ErrorKind::Format, "manifest line " + std::to_string(line_no) +
                                    ": expected header 'sample_id<TAB>alpha_path<TAB>beta_path<TAB>class_label<TAB>group_id'");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 5) {
      fail(ErrorKind::Format, "manifest line " + std::to_string(line_no) + ": expected 5 tab-separated fields, found " +
                                  std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      fail(ErrorKind::Format, "manifest line " + std::to_string(line_no) + ": empty sample id or path");
    }
    const auto [it, inserted] = first_line.emplace(fields[0], line_no);
    if (!inserted) {
      fail(ErrorKind::Format, "manifest: duplicate sample_id '" + fields[0] + "' on lines " +
                                  std::to_string(it->second) + " and " + std::to_string(line_no));
    }
    ManifestRecord rec;
    rec.sample_id = fields[0];
    rec.alpha_path = base_dir / std::filesystem::path(fields[1]);
    rec.beta_path = base_dir / std::filesystem::path(fields[2]);
    rec.raw_label = parse_int(fields[3], line_no, "class_label");
    rec.group = parse_int(fields[4], line_no, "group_id");
    if (rec.group < -1) {
      fail(ErrorKind::Format, "manifest line " + std::to_string(line_no) + ": group_id must be -1 or nonnegative");
    }
    rec.line = line_no;
    m.records.push_back(std::move(rec));
  }
  if (!header_seen) fail(ErrorKind::Format, "manifest: missing header line");
  if (m.records.empty()) fail(ErrorKind::Format, "manifest: no records");

  for (const auto& r : m.records) m.label_values.push_back(r.raw_label);
  std::sort(m.label_values.begin(), m.label_values.end());
  m.label_values.erase(std::unique(m.label_values.begin(), m.label_values.end()), m.label_values.end());
  for (auto& r : m.records) {
    r.label = static_cast<std::size_t>(
        std::lower_bound(m.label_values.begin(), m.label_values.end(), r.raw_label) - m.label_values.begin());
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

std::string format_manifest(const Manifest& manifest, const std::filesystem::path& base_dir) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& r : manifest.records) {
    out += r.sample_id + "\t" + r.alpha_path.lexically_relative(base_dir).generic_string() + "\t" +
           r.beta_path.lexically_relative(base_dir).generic_string() + "\t" + std::to_string(r.raw_label) + "\t" +
           std::to_string(r.group) + "\n";
  }
  return out;
}

// --- dataset -----------------------------------------------------------------

Dataset load_dataset(const Manifest& manifest) {
  Dataset ds;
  ds.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    Sample s{r.sample_id, read_feature(r.alpha_path), read_feature(r.beta_path), r.label, r.group};
    if (s.alpha.height != s.beta.height || s.alpha.width != s.beta.width) {
      fail(ErrorKind::ShapeMismatch, "sample '" + r.sample_id + "': alpha " + shape_str(s.alpha) + " and beta " +
                                         shape_str(s.beta) + " grids differ");
    }
    if (!ds.empty() && (!s.alpha.same_shape(ds.front().alpha) || !s.beta.same_shape(ds.front().beta))) {
      fail(ErrorKind::ShapeMismatch, "sample '" + r.sample_id + "' has shapes " + shape_str(s.alpha) + " / " +
                                         shape_str(s.beta) + ", first sample has " + shape_str(ds.front().alpha) +
                                         " / " + shape_str(ds.front().beta));
    }
    ds.push_back(std::move(s));
  }
  return ds;
}

// --- synthetic generator -------------------------------------------------------

void SynthConfig::validate() const {
  require(classes >= 2 && samples_per_class >= 1 && height >= 1 && width >= 1 && channels >= 1,
          ErrorKind::InvalidArgument, "synthetic config: dimensions and counts must be positive (classes >= 2)");
  require(noise >= 0.0 && std::isfinite(noise), ErrorKind::InvalidArgument, "synthetic config: noise must be >= 0");
  require(styles_per_group >= 1 && classes % styles_per_group == 0, ErrorKind::InvalidArgument,
          "synthetic config: styles_per_group must divide the class count");
}

FeatureMap circular_shift(const FeatureMap& map, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  FeatureMap out(map.height, map.width, map.channels);
  const auto H = static_cast<std::ptrdiff_t>(map.height), W = static_cast<std::ptrdiff_t>(map.width);
  for (std::ptrdiff_t h = 0; h < H; ++h) {
    for (std::ptrdiff_t w = 0; w < W; ++w) {
      const auto src = map.pixel(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
      const auto y = static_cast<std::size_t>(((h + dy) % H + H) % H);
      const auto x = static_cast<std::size_t>(((w + dx) % W + W) % W);
      std::copy(src.begin(), src.end(), out.pixel(y, x).begin());
    }
  }
  return out;
}

Dataset synthesize(const SynthConfig& config) {
  config.validate();
  const std::size_t groups = config.classes / config.styles_per_group;
  std::vector<FeatureMap> alpha_templates, beta_templates;
  for (std::size_t g = 0; g < groups; ++g) {
    Rng rng(derive_seed(config.seed, g));
    alpha_templates.push_back(gaussian_map(config.height, config.width, config.channels, rng));
    beta_templates.push_back(gaussian_map(config.height, config.width, config.channels, rng));
  }
  const bool grouped = config.styles_per_group > 1;
  const std::size_t style_stride = std::max<std::size_t>(1, config.width / config.styles_per_group);
  const auto jitter_span = static_cast<std::uint64_t>(2 * config.max_shift + 1);

  Dataset ds;
  ds.reserve(config.classes * config.samples_per_class);
  for (std::size_t k = 0; k < config.classes; ++k) {
    const std::size_t group = k / config.styles_per_group;
    const std::size_t style = k % config.styles_per_group;
    for (std::size_t i = 0; i < config.samples_per_class; ++i) {
      const std::size_t index = k * config.samples_per_class + i;
      Rng rng(derive_seed(config.seed, 1'000'000 + index));
      const auto dy = static_cast<std::ptrdiff_t>(rng.uniform_index(jitter_span)) -
                      static_cast<std::ptrdiff_t>(config.max_shift);
      const auto dx = static_cast<std::ptrdiff_t>(rng.uniform_index(jitter_span)) -
                      static_cast<std::ptrdiff_t>(config.max_shift) + static_cast<std::ptrdiff_t>(style * style_stride);
      Sample s;
      s.id = "c" + std::to_string(k) + "_s" + std::to_string(i);
      s.label = k;
      s.group = grouped ? static_cast<std::int64_t>(group) : -1;
      s.alpha = circular_shift(alpha_templates[group], dy, dx);
      s.beta = circular_shift(beta_templates[group], dy, dx);
      for (FeatureMap* m : {&s.alpha, &s.beta}) {
        for (auto& v : m->values) v = std::max(0.0, v + config.noise * rng.normal());
        round_to_storage(*m);
      }
      ds.push_back(std::move(s));
    }
  }
  return ds;
}

Manifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir) {
  const Dataset ds = synthesize(config);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "alpha", ec);
  std::filesystem::create_directories(out_dir / "beta", ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());

  Manifest m;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds[i];
    ManifestRecord r;
    r.sample_id = s.id;
    r.alpha_path = out_dir / "alpha" / (s.id + ".cnfm");
    r.beta_path = out_dir / "beta" / (s.id + ".cnfm");
    r.raw_label = static_cast<std::int64_t>(s.label);
    r.group = s.group;
    write_feature(r.alpha_path, s.alpha);
    write_feature(r.beta_path, s.beta);
    m.records.push_back(std::move(r));
  }
  const auto manifest_path = out_dir / "manifest.tsv";
  detail::write_text_atomic(manifest_path, format_manifest(m, out_dir));
  return load_manifest(manifest_path);
}

}  // namespace coinnet::data
