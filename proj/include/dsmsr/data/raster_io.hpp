#pragma once

// Raster containers: GeoTIFF (libtiff + GeoTIFF tags), 8-bit PNG (libpng) and
// the raw heightmap format
//
//   "NDSM" | u32 height | u32 width | u32 reserved | float32[height*width]
//
// all little-endian. Integer samples are scaled to [0, 1] (8-bit by 1/255,
// 16-bit by 1/65535); float samples are taken as physical values.

#include <png.h>
#include <tiffio.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "dsmsr/data/raster.hpp"
#include "dsmsr/error.hpp"
#include "dsmsr/kv.hpp"

namespace dsmsr {

enum class SampleEncoding { uint8, float32 };

namespace detail {

constexpr ttag_t kTagModelPixelScale = 33550;
constexpr ttag_t kTagModelTiepoint = 33922;
constexpr ttag_t kTagGeoKeyDirectory = 34735;
constexpr ttag_t kTagGdalNodata = 42113;
constexpr std::uint16_t kGeoKeyGeographicType = 2048;
constexpr std::uint16_t kGeoKeyProjectedCsType = 3072;
constexpr std::uint16_t kGeoKeyModelType = 1024;
constexpr std::uint16_t kGeoKeyRasterType = 1025;

inline TIFFExtendProc& parent_extender() {
  static TIFFExtendProc parent = nullptr;
  return parent;
}

inline void geotiff_tag_extender(TIFF* tif) {
  static const TIFFFieldInfo fields[] = {
      {kTagModelPixelScale, TIFF_VARIABLE2, TIFF_VARIABLE2, TIFF_DOUBLE, FIELD_CUSTOM, 1, 1, const_cast<char*>("ModelPixelScaleTag")},
      {kTagModelTiepoint, TIFF_VARIABLE2, TIFF_VARIABLE2, TIFF_DOUBLE, FIELD_CUSTOM, 1, 1, const_cast<char*>("ModelTiepointTag")},
      {kTagGeoKeyDirectory, TIFF_VARIABLE2, TIFF_VARIABLE2, TIFF_SHORT, FIELD_CUSTOM, 1, 1, const_cast<char*>("GeoKeyDirectoryTag")},
      {kTagGdalNodata, -1, -1, TIFF_ASCII, FIELD_CUSTOM, 1, 0, const_cast<char*>("GDALNoDataValue")},
  };
  TIFFMergeFieldInfo(tif, fields, sizeof(fields) / sizeof(fields[0]));
  if (parent_extender()) parent_extender()(tif);
}

inline void register_geotiff_tags() {
  static std::once_flag once;
  std::call_once(once, [] {
    parent_extender() = TIFFSetTagExtender(geotiff_tag_extender);
    TIFFSetWarningHandler(nullptr);
  });
}

struct TiffCloser {
  void operator()(TIFF* t) const {
    if (t) TIFFClose(t);
  }
};
using TiffHandle = std::unique_ptr<TIFF, TiffCloser>;

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_u32le(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open raster '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Applies the nodata value (if any) and rejects non-finite unmasked values.
inline void finalize_mask(RasterGrid& g, std::optional<double> nodata, const std::string& path) {
  std::vector<std::uint8_t> mask(g.pixels(), 0);
  for (int c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.pixels(); ++i) {
      const float v = g.values[static_cast<std::size_t>(c) * g.pixels() + i];
      bool masked = false;
      if (nodata) masked = std::isnan(*nodata) ? std::isnan(v) : v == static_cast<float>(*nodata);
      if (!masked && !std::isfinite(v)) {
        throw DataError("raster '" + path + "' holds non-finite values without a nodata declaration");
      }
      if (masked) mask[i] = 1;
    }
  if (nodata) {
    for (int c = 0; c < g.channels; ++c)
      for (std::size_t i = 0; i < g.pixels(); ++i)
        if (mask[i]) g.values[static_cast<std::size_t>(c) * g.pixels() + i] = 0.0f;
    g.nodata_mask = std::move(mask);
  }
}

inline void check_channels(int channels, const std::string& path) {
  if (channels != 1 && channels != 3) {
    throw DataError("unsupported channel count " + std::to_string(channels) + " in '" + path + "'");
  }
}

inline RasterGrid load_raw_ndsm(const std::vector<unsigned char>& bytes, const std::string& path) {
  if (bytes.size() < 16) throw DataError("truncated heightmap '" + path + "'");
  const std::uint32_t h = read_u32le(bytes.data() + 4);
  const std::uint32_t w = read_u32le(bytes.data() + 8);
  const std::size_t need = 16 + static_cast<std::size_t>(h) * w * 4;
  if (h == 0 || w == 0 || bytes.size() != need) throw DataError("heightmap '" + path + "' has inconsistent size");
  RasterGrid g(static_cast<int>(h), static_cast<int>(w), 1);
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    g.values[i] = std::bit_cast<float>(read_u32le(bytes.data() + 16 + 4 * i));
  }
  finalize_mask(g, std::nullopt, path);
  return g;
}

inline RasterGrid load_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot read PNG '" + path + "': " + img.message);
  }
  const int channels = PNG_IMAGE_SAMPLE_CHANNELS(img.format);
  if (channels != 1 && channels != 3) {
    png_image_free(&img);
    check_channels(channels, path);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    throw DataError("cannot decode PNG '" + path + "': " + img.message);
  }
  RasterGrid g(static_cast<int>(img.height), static_cast<int>(img.width), channels);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c)
      for (int k = 0; k < channels; ++k)
        g.at(k, r, c) = static_cast<float>(buf[(static_cast<std::size_t>(r) * g.width + c) * channels + k]) / 255.0f;
  return g;
}

template <typename Sample>
float sample_to_float(const unsigned char* p) {
  Sample s;
  std::memcpy(&s, p, sizeof(Sample));
  if constexpr (std::is_same_v<Sample, std::uint8_t>) return static_cast<float>(s) / 255.0f;
  else if constexpr (std::is_same_v<Sample, std::uint16_t>) return static_cast<float>(s) / 65535.0f;
  else return static_cast<float>(s);
}

inline std::optional<GeoInfo> read_geo(TIFF* tif) {
  std::uint32_t count = 0;
  double* scale = nullptr;
  double* tie = nullptr;
  if (!TIFFGetField(tif, kTagModelPixelScale, &count, &scale) || count < 2) return std::nullopt;
  std::uint32_t tcount = 0;
  if (!TIFFGetField(tif, kTagModelTiepoint, &tcount, &tie) || tcount < 6) return std::nullopt;
  GeoInfo g;
  g.pixel_w = scale[0];
  g.pixel_h = -scale[1];
  g.origin_x = tie[3] - tie[0] * scale[0];
  g.origin_y = tie[4] + tie[1] * scale[1];
  std::uint32_t kcount = 0;
  std::uint16_t* keys = nullptr;
  if (TIFFGetField(tif, kTagGeoKeyDirectory, &kcount, &keys) && kcount >= 4) {
    const std::uint32_t n = keys[3];
    for (std::uint32_t i = 0; i < n && 4 + 4 * i + 3 < kcount; ++i) {
      const std::uint16_t* e = keys + 4 + 4 * i;
      if ((e[0] == kGeoKeyProjectedCsType || e[0] == kGeoKeyGeographicType) && e[1] == 0) {
        if (g.crs.empty() || e[0] == kGeoKeyProjectedCsType) g.crs = "EPSG:" + std::to_string(e[3]);
      }
    }
  }
  return g;
}

inline RasterGrid load_tiff(const std::string& path) {
  register_geotiff_tags();
  TiffHandle tif(TIFFOpen(path.c_str(), "r"));
  if (!tif) throw DataError("cannot open TIFF '" + path + "'");
  std::uint32_t width = 0, height = 0;
  std::uint16_t spp = 1, bps = 8, format = SAMPLEFORMAT_UINT, planar = PLANARCONFIG_CONTIG;
  TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &width);
  TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &height);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &bps);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLEFORMAT, &format);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_PLANARCONFIG, &planar);
  check_channels(spp, path);
  if (width == 0 || height == 0) throw DataError("TIFF '" + path + "' is empty");

  float (*convert)(const unsigned char*) = nullptr;
  if (format == SAMPLEFORMAT_UINT && bps == 8) convert = &sample_to_float<std::uint8_t>;
  else if (format == SAMPLEFORMAT_UINT && bps == 16) convert = &sample_to_float<std::uint16_t>;
  else if (format == SAMPLEFORMAT_IEEEFP && bps == 32) convert = &sample_to_float<float>;
  else if (format == SAMPLEFORMAT_IEEEFP && bps == 64) convert = &sample_to_float<double>;
  else throw DataError("unsupported TIFF sample type in '" + path + "'");
  const std::size_t bytes = bps / 8;

  RasterGrid g(static_cast<int>(height), static_cast<int>(width), spp);
  if (TIFFIsTiled(tif.get())) {
    std::uint32_t tw = 0, th = 0;
    TIFFGetField(tif.get(), TIFFTAG_TILEWIDTH, &tw);
    TIFFGetField(tif.get(), TIFFTAG_TILELENGTH, &th);
    std::vector<unsigned char> tile(TIFFTileSize(tif.get()));
    const int planes = planar == PLANARCONFIG_SEPARATE ? spp : 1;
    const int per_px = planar == PLANARCONFIG_SEPARATE ? 1 : spp;
    for (int p = 0; p < planes; ++p)
      for (std::uint32_t y0 = 0; y0 < height; y0 += th)
        for (std::uint32_t x0 = 0; x0 < width; x0 += tw) {
          if (TIFFReadTile(tif.get(), tile.data(), x0, y0, 0, static_cast<tsample_t>(p)) < 0) {
            throw DataError("cannot read tile of '" + path + "'");
          }
          for (std::uint32_t y = 0; y < th && y0 + y < height; ++y)
            for (std::uint32_t x = 0; x < tw && x0 + x < width; ++x)
              for (int k = 0; k < per_px; ++k) {
                const unsigned char* src = tile.data() + ((static_cast<std::size_t>(y) * tw + x) * per_px + k) * bytes;
                g.at(planes > 1 ? p : k, static_cast<int>(y0 + y), static_cast<int>(x0 + x)) = convert(src);
              }
        }
  } else {
    std::vector<unsigned char> line(TIFFScanlineSize(tif.get()));
    const int planes = planar == PLANARCONFIG_SEPARATE ? spp : 1;
    const int per_px = planar == PLANARCONFIG_SEPARATE ? 1 : spp;
    for (int p = 0; p < planes; ++p)
      for (std::uint32_t y = 0; y < height; ++y) {
        if (TIFFReadScanline(tif.get(), line.data(), y, static_cast<std::uint16_t>(p)) < 0) {
          throw DataError("cannot read scanline of '" + path + "'");
        }
        for (std::uint32_t x = 0; x < width; ++x)
          for (int k = 0; k < per_px; ++k) {
            g.at(planes > 1 ? p : k, static_cast<int>(y), static_cast<int>(x)) =
                convert(line.data() + (static_cast<std::size_t>(x) * per_px + k) * bytes);
          }
      }
  }
  g.geo = read_geo(tif.get());
  std::optional<double> nodata;
  char* nd = nullptr;
  if (TIFFGetField(tif.get(), kTagGdalNodata, &nd) && nd) {
    const std::string s = detail::trim(nd);
    nodata = (s == "nan" || s == "NaN") ? std::numeric_limits<double>::quiet_NaN() : parse_double("nodata", s);
  }
  finalize_mask(g, nodata, path);
  return g;
}

}  // namespace detail

inline RasterGrid load_raster(const std::filesystem::path& path) {
  const auto bytes = detail::slurp(path);
  const std::string p = path.string();
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "NDSM", 4) == 0) return detail::load_raw_ndsm(bytes, p);
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') {
    return detail::load_png(p);
  }
  if (bytes.size() >= 4 && ((bytes[0] == 'I' && bytes[1] == 'I') || (bytes[0] == 'M' && bytes[1] == 'M'))) {
    return detail::load_tiff(p);
  }
  throw DataError("unsupported raster container '" + p + "'");
}

inline void save_raw_ndsm(const RasterGrid& g, const std::filesystem::path& path) {
  g.check_invariants();
  if (g.channels != 1) throw DataError("raw heightmaps hold exactly one channel");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os.write("NDSM", 4);
  detail::write_u32le(os, static_cast<std::uint32_t>(g.height));
  detail::write_u32le(os, static_cast<std::uint32_t>(g.width));
  detail::write_u32le(os, 0);
  for (float v : g.values) detail::write_u32le(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

inline void save_png(const RasterGrid& g, const std::filesystem::path& path) {
  g.check_invariants();
  detail::check_channels(g.channels, path.string());
  std::vector<png_byte> buf(g.pixels() * g.channels);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c)
      for (int k = 0; k < g.channels; ++k)
        buf[(static_cast<std::size_t>(r) * g.width + c) * g.channels + k] =
            static_cast<png_byte>(std::lround(std::clamp(g.at(k, r, c), 0.0f, 1.0f) * 255.0f));
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(g.width);
  img.height = static_cast<png_uint_32>(g.height);
  img.format = g.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw DataError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

constexpr float kDefaultNodata = -9999.0f;

// Writes a strip GeoTIFF. Masked cells are written as -9999 with a matching
// GDAL nodata tag (float32 only).
inline void save_geotiff(const RasterGrid& g, const std::filesystem::path& path, SampleEncoding enc) {
  g.check_invariants();
  detail::check_channels(g.channels, path.string());
  detail::register_geotiff_tags();
  detail::TiffHandle tif(TIFFOpen(path.string().c_str(), "w"));
  if (!tif) throw DataError("cannot create TIFF '" + path.string() + "'");
  TIFF* t = tif.get();
  TIFFSetField(t, TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(g.width));
  TIFFSetField(t, TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(g.height));
  TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(g.channels));
  TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
  TIFFSetField(t, TIFFTAG_PHOTOMETRIC, g.channels == 3 ? PHOTOMETRIC_RGB : PHOTOMETRIC_MINISBLACK);
  TIFFSetField(t, TIFFTAG_COMPRESSION, COMPRESSION_NONE);
  TIFFSetField(t, TIFFTAG_ROWSPERSTRIP, static_cast<std::uint32_t>(std::max(1, 8192 / std::max(1, g.width))));
  const bool f32 = enc == SampleEncoding::float32;
  TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, static_cast<std::uint16_t>(f32 ? 32 : 8));
  TIFFSetField(t, TIFFTAG_SAMPLEFORMAT, static_cast<std::uint16_t>(f32 ? SAMPLEFORMAT_IEEEFP : SAMPLEFORMAT_UINT));
  if (g.geo) {
    const GeoInfo& geo = *g.geo;
    double scale[3] = {geo.pixel_w, -geo.pixel_h, 0.0};
    double tie[6] = {0, 0, 0, geo.origin_x, geo.origin_y, 0};
    TIFFSetField(t, detail::kTagModelPixelScale, std::uint32_t{3}, scale);
    TIFFSetField(t, detail::kTagModelTiepoint, std::uint32_t{6}, tie);
    std::vector<std::uint16_t> keys{1, 1, 0, 0};
    auto add_key = [&keys](std::uint16_t id, std::uint16_t v) { keys.insert(keys.end(), {id, 0, 1, v}); };
    std::uint16_t code = 0;
    const bool has_epsg = geo.crs.rfind("EPSG:", 0) == 0;
    if (has_epsg) code = static_cast<std::uint16_t>(parse_int("crs", geo.crs.substr(5)));
    const bool geographic = code == 4326;
    add_key(detail::kGeoKeyModelType, geographic ? 2 : 1);
    add_key(detail::kGeoKeyRasterType, 1);
    if (has_epsg) add_key(geographic ? detail::kGeoKeyGeographicType : detail::kGeoKeyProjectedCsType, code);
    keys[3] = static_cast<std::uint16_t>((keys.size() - 4) / 4);
    TIFFSetField(t, detail::kTagGeoKeyDirectory, static_cast<std::uint32_t>(keys.size()), keys.data());
  }
  const bool masked = g.nodata_mask.has_value();
  if (masked) {
    if (!f32) throw DataError("nodata masks can only be written to float32 GeoTIFFs");
    TIFFSetField(t, detail::kTagGdalNodata, "-9999");
  }
  const std::size_t bytes = f32 ? 4 : 1;
  std::vector<unsigned char> line(static_cast<std::size_t>(g.width) * g.channels * bytes);
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c)
      for (int k = 0; k < g.channels; ++k) {
        unsigned char* dst = line.data() + (static_cast<std::size_t>(c) * g.channels + k) * bytes;
        float v = g.at(k, r, c);
        if (masked && g.is_nodata(r, c)) v = kDefaultNodata;
        if (f32) {
          std::memcpy(dst, &v, 4);
        } else {
          *dst = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
      }
    if (TIFFWriteScanline(t, line.data(), static_cast<std::uint32_t>(r), 0) < 0) {
      throw DataError("failed writing '" + path.string() + "'");
    }
  }
}

// Picks the container from the extension: .tif/.tiff, .png or .ndsm.
inline void save_raster(const RasterGrid& g, const std::filesystem::path& path,
                        SampleEncoding enc = SampleEncoding::float32) {
  auto ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".png") return save_png(g, path);
  if (ext == ".ndsm") return save_raw_ndsm(g, path);
  if (ext == ".tif" || ext == ".tiff") return save_geotiff(g, path, enc);
  throw UsageError("unsupported raster extension '" + ext + "' for '" + path.string() + "'");
}

}  // namespace dsmsr
