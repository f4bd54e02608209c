#include "nmsr/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "nmsr/error.hpp"

namespace nmsr {

namespace detail {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace detail

namespace {

// Netpbm header: magic, then whitespace-separated integers with '#' comments.
struct NetpbmHeader {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int maxval = 0;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_netpbm_header(const std::vector<char>& data, const std::string& magic,
                                 const std::string& what) {
  if (data.size() < 2 || std::string(data.data(), 2) != magic) {
    throw ParseError(what + ": expected magic '" + magic + "'", 0);
  }
  std::size_t pos = 2;
  auto skip_space = [&]() {
    while (pos < data.size()) {
      const char c = data[pos];
      if (c == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* field) -> std::int64_t {
    const std::size_t before = pos;
    skip_space();
    if (pos == before) throw ParseError(what + ": missing whitespace before " + field, pos);
    if (pos >= data.size() || !std::isdigit(static_cast<unsigned char>(data[pos]))) {
      throw ParseError(what + ": expected integer " + field, pos);
    }
    std::int64_t v = 0;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) {
      v = v * 10 + (data[pos] - '0');
      if (v > (std::int64_t{1} << 31)) throw ParseError(what + ": " + field + " too large", pos);
      ++pos;
    }
    return v;
  };
  NetpbmHeader h;
  h.width = read_int("width");
  h.height = read_int("height");
  const auto maxval_pos = pos;
  h.maxval = static_cast<int>(read_int("maxval"));
  if (h.width <= 0 || h.height <= 0) throw ParseError(what + ": zero image dimension", maxval_pos);
  if (h.maxval != 255 && h.maxval != 65535) {
    throw ParseError(what + ": maxval must be 255 or 65535, got " + std::to_string(h.maxval),
                     maxval_pos);
  }
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
    throw ParseError(what + ": expected single whitespace after maxval", pos);
  }
  h.data_offset = pos + 1;
  return h;
}

std::vector<std::uint16_t> read_netpbm_samples(const std::vector<char>& data,
                                               const NetpbmHeader& h, std::int64_t channels,
                                               const std::string& what) {
  const std::size_t bytes_per = h.maxval == 255 ? 1 : 2;
  const std::size_t count = static_cast<std::size_t>(h.width * h.height * channels);
  const std::size_t expected = h.data_offset + count * bytes_per;
  if (data.size() < expected) throw ParseError(what + ": pixel data truncated", data.size());
  if (data.size() > expected) {
    throw ParseError(what + ": " + std::to_string(data.size() - expected) +
                         " trailing bytes after pixel data",
                     expected);
  }
  std::vector<std::uint16_t> samples(count);
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data() + h.data_offset);
  for (std::size_t i = 0; i < count; ++i) {
    samples[i] = bytes_per == 1 ? bytes[i]
                                : static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
    if (samples[i] > h.maxval) {
      throw ParseError(what + ": sample exceeds maxval", h.data_offset + i * bytes_per);
    }
  }
  return samples;
}

std::vector<char> netpbm_header(const std::string& magic, std::int64_t w, std::int64_t h,
                                int maxval) {
  const std::string s =
      magic + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n" + std::to_string(maxval) + "\n";
  return std::vector<char>(s.begin(), s.end());
}

std::uint16_t quantize(double v, int maxval) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint16_t>(std::floor(c * maxval + 0.5));
}

std::string indexed_name(const char* prefix, std::size_t index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.%s", prefix, index, ext);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Middlebury colour wheel: relative lengths of the six hue transitions.
struct ColorWheel {
  std::vector<std::array<double, 3>> colors;

  ColorWheel() {
    constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    for (int i = 0; i < RY; ++i) colors.push_back({255.0, 255.0 * i / RY, 0.0});
    for (int i = 0; i < YG; ++i) colors.push_back({255.0 - 255.0 * i / YG, 255.0, 0.0});
    for (int i = 0; i < GC; ++i) colors.push_back({0.0, 255.0, 255.0 * i / GC});
    for (int i = 0; i < CB; ++i) colors.push_back({0.0, 255.0 - 255.0 * i / CB, 255.0});
    for (int i = 0; i < BM; ++i) colors.push_back({255.0 * i / BM, 0.0, 255.0});
    for (int i = 0; i < MR; ++i) colors.push_back({255.0, 0.0, 255.0 - 255.0 * i / MR});
  }
};

const ColorWheel& color_wheel() {
  static const ColorWheel wheel;
  return wheel;
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  const auto data = detail::read_file(path.string());
  const std::string what = "PGM " + path.string();
  const auto h = parse_netpbm_header(data, "P5", what);
  const auto samples = read_netpbm_samples(data, h, 1, what);
  std::vector<double> pixels(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    pixels[i] = static_cast<double>(samples[i]) / h.maxval;
  }
  return Image(h.width, h.height, std::move(pixels));
}

void write_pgm(const std::filesystem::path& path, const Image& img, int maxval) {
  if (maxval != 255 && maxval != 65535) throw ContractError("write_pgm: maxval must be 255 or 65535");
  auto out = netpbm_header("P5", img.width(), img.height(), maxval);
  for (double v : img.pixels()) {
    const auto q = quantize(v, maxval);
    if (maxval == 255) {
      out.push_back(static_cast<char>(q));
    } else {
      out.push_back(static_cast<char>(q >> 8));
      out.push_back(static_cast<char>(q & 0xff));
    }
  }
  detail::write_file(path.string(), out);
}

Mask read_mask_pgm(const std::filesystem::path& path) {
  const auto img = read_pgm(path);
  Mask m(img.width(), img.height(), false);
  for (std::int64_t y = 0; y < img.height(); ++y) {
    for (std::int64_t x = 0; x < img.width(); ++x) m.set(x, y, img.at(x, y) > 0.0);
  }
  return m;
}

void write_mask_pgm(const std::filesystem::path& path, const Mask& mask) {
  Image img(mask.width(), mask.height());
  for (std::int64_t y = 0; y < mask.height(); ++y) {
    for (std::int64_t x = 0; x < mask.width(); ++x) img.at(x, y) = mask.at(x, y) ? 1.0 : 0.0;
  }
  write_pgm(path, img, 255);
}

void write_ppm(const std::filesystem::path& path, const ColorImage& img) {
  if (static_cast<std::int64_t>(img.rgb.size()) != img.width * img.height * 3) {
    throw ContractError("write_ppm: buffer size does not match dimensions");
  }
  auto out = netpbm_header("P6", img.width, img.height, 255);
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  detail::write_file(path.string(), out);
}

ColorImage read_ppm(const std::filesystem::path& path) {
  const auto data = detail::read_file(path.string());
  const std::string what = "PPM " + path.string();
  const auto h = parse_netpbm_header(data, "P6", what);
  if (h.maxval != 255) throw ParseError(what + ": only maxval 255 is supported", h.data_offset);
  const auto samples = read_netpbm_samples(data, h, 3, what);
  ColorImage img{h.width, h.height, {}};
  img.rgb.assign(samples.begin(), samples.end());
  return img;
}

FlowField read_flo(const std::filesystem::path& path) {
  const auto data = detail::read_file(path.string());
  detail::ByteReader r(data, "flo " + path.string());
  if (r.bytes(4) != "PIEH") r.fail_at(0, "bad magic, expected PIEH");
  const auto w = r.i32();
  const auto h = r.i32();
  if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) {
    r.fail_at(4, "invalid dimensions " + std::to_string(w) + "x" + std::to_string(h));
  }
  const auto need = static_cast<std::uint64_t>(w) * static_cast<std::uint64_t>(h) * 8;
  if (r.remaining() < need) r.fail("flow data truncated");
  FlowField f(w, h);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      f.dx(x, y) = r.f32();
      f.dy(x, y) = r.f32();
    }
  }
  r.expect_end();
  return f;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  detail::ByteWriter w;
  w.bytes("PIEH");
  w.i32(static_cast<std::int32_t>(flow.width()));
  w.i32(static_cast<std::int32_t>(flow.height()));
  for (std::int64_t y = 0; y < flow.height(); ++y) {
    for (std::int64_t x = 0; x < flow.width(); ++x) {
      w.f32(static_cast<float>(flow.dx(x, y)));
      w.f32(static_cast<float>(flow.dy(x, y)));
    }
  }
  detail::write_file(path.string(), w.buffer());
}

std::array<double, 3> wheel_color(double dx, double dy) {
  const auto& wheel = color_wheel().colors;
  const auto ncols = static_cast<double>(wheel.size());
  const double rad = std::min(1.0, std::hypot(dx, dy));
  const double a = std::atan2(-dy, -dx) / std::numbers::pi;
  const double fk = (a + 1.0) / 2.0 * ncols;
  const double fl = std::floor(fk);
  const auto k0 = static_cast<std::size_t>(static_cast<std::int64_t>(fl) % wheel.size());
  const auto k1 = (k0 + 1) % wheel.size();
  const double f = fk - fl;
  std::array<double, 3> rgb{};
  for (int b = 0; b < 3; ++b) {
    const double col = ((1.0 - f) * wheel[k0][b] + f * wheel[k1][b]) / 255.0;
    rgb[b] = 1.0 - rad * (1.0 - col);
  }
  return rgb;
}

ColorImage flow_to_color(const FlowField& flow, std::optional<double> max_magnitude) {
  if (!flow.all_finite()) throw ContractError("flow_to_color: field has non-finite entries");
  double scale = 0.0;
  if (max_magnitude) {
    if (!(*max_magnitude > 0.0)) throw ContractError("flow_to_color: max magnitude must be > 0");
    scale = *max_magnitude;
  } else {
    std::vector<double> mags(static_cast<std::size_t>(flow.size()));
    for (std::size_t i = 0; i < mags.size(); ++i) {
      mags[i] = std::hypot(flow.dx_plane()[i], flow.dy_plane()[i]);
    }
    const auto k = static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(mags.size() - 1)));
    std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
    scale = mags[k];
  }
  ColorImage out{flow.width(), flow.height(),
                 std::vector<std::uint8_t>(static_cast<std::size_t>(flow.size() * 3), 255)};
  if (scale <= 0.0) return out;
  for (std::int64_t y = 0; y < flow.height(); ++y) {
    for (std::int64_t x = 0; x < flow.width(); ++x) {
      const auto rgb = wheel_color(flow.dx(x, y) / scale, flow.dy(x, y) / scale);
      for (int c = 0; c < 3; ++c) {
        out.rgb[static_cast<std::size_t>((y * flow.width() + x) * 3 + c)] =
            static_cast<std::uint8_t>(std::floor(255.0 * rgb[c] + 0.5));
      }
    }
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  KeyValues kv;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const auto line_offset = offset;
    offset += line.size() + 1;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError("metadata " + path.string() + ": line without '='", line_offset);
    }
    kv.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::string s;
  for (const auto& [k, v] : kv) s += k + " = " + v + "\n";
  detail::write_file(path.string(), std::vector<char>(s.begin(), s.end()));
}

std::optional<std::string> find_value(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string frame_name(std::size_t index) { return indexed_name("frame", index, "pgm"); }
std::string mask_name(std::size_t index) { return indexed_name("mask", index, "pgm"); }
std::string flow_name(std::size_t index) { return indexed_name("flow", index, "flo"); }

std::vector<FlowField> read_flow_dir(const std::filesystem::path& dir) {
  std::vector<FlowField> flows;
  for (std::size_t i = 1; std::filesystem::exists(dir / flow_name(i)); ++i) {
    flows.push_back(read_flo(dir / flow_name(i)));
  }
  return flows;
}

SequenceDir read_sequence_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("'" + dir.string() + "' is not a directory");
  }
  SequenceDir out;
  out.sequence.id = dir.filename().string();
  if (out.sequence.id.empty()) out.sequence.id = dir.parent_path().filename().string();
  std::size_t frame_files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("frame_", 0) == 0 && entry.path().extension() == ".pgm") ++frame_files;
  }
  for (std::size_t i = 1; std::filesystem::exists(dir / frame_name(i)); ++i) {
    out.sequence.frames.push_back(read_pgm(dir / frame_name(i)));
  }
  if (out.sequence.frames.size() != frame_files) {
    throw IoError("'" + dir.string() + "': frame numbering is not contiguous from 1");
  }
  if (std::filesystem::exists(dir / mask_name(1))) {
    for (std::size_t i = 1; i <= out.sequence.frames.size(); ++i) {
      if (!std::filesystem::exists(dir / mask_name(i))) {
        throw IoError("'" + dir.string() + "': missing " + mask_name(i));
      }
      out.sequence.masks.push_back(read_mask_pgm(dir / mask_name(i)));
    }
  }
  out.flows = read_flow_dir(dir);
  if (!out.flows.empty() && out.flows.size() + 1 != out.sequence.frames.size()) {
    throw IoError("'" + dir.string() + "': expected " +
                  std::to_string(out.sequence.frames.size() - 1) + " flow files, found " +
                  std::to_string(out.flows.size()));
  }
  if (std::filesystem::exists(dir / "metadata.txt")) {
    out.metadata = read_key_values(dir / "metadata.txt");
    if (auto id = find_value(out.metadata, "sequence_id")) out.sequence.id = *id;
  }
  out.sequence.validate();
  return out;
}

void write_sequence_dir(const std::filesystem::path& dir, const SequenceDir& seq,
                        int frame_maxval) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  const auto& frames = seq.sequence.frames;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    write_pgm(dir / frame_name(i + 1), frames[i], frame_maxval);
  }
  for (std::size_t i = 0; i < seq.sequence.masks.size(); ++i) {
    write_mask_pgm(dir / mask_name(i + 1), seq.sequence.masks[i]);
  }
  for (std::size_t i = 0; i < seq.flows.size(); ++i) write_flo(dir / flow_name(i + 1), seq.flows[i]);
  if (!seq.metadata.empty()) write_key_values(dir / "metadata.txt", seq.metadata);
}

}  // namespace nmsr
