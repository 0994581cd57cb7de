#include "degrad/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <vector>

namespace degrad {

namespace binary {

// All multi-byte values are stored little-endian regardless of the host.
void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("unexpected end of binary data");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("unexpected end of binary data");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

} // namespace binary

namespace {

constexpr char tensor_magic[8] = {'D', 'G', 'T', 'N', 'S', 'R', '0', '1'};

std::string extension(const std::string& path) {
    std::string ext = std::filesystem::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return ext;
}

ImageTensor convert_channels(const ImageTensor& img, int channels) {
    if (channels == 0 || channels == img.channels()) return img;
    if (channels == 1 && img.channels() == 3) {
        ImageTensor gray(1, img.height(), img.width());
        gray.plane(0) = 0.299 * img.plane(0) + 0.587 * img.plane(1) + 0.114 * img.plane(2);
        return gray;
    }
    if (channels == 3 && img.channels() == 1) {
        ImageTensor rgb(3, img.height(), img.width());
        for (int c = 0; c < 3; ++c) rgb.plane(c) = img.plane(0);
        return rgb;
    }
    throw std::invalid_argument("unsupported channel conversion");
}

// Next whitespace-separated header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(char(c));
    }
    if (tok.empty()) throw IoError("truncated PGM header");
    return tok;
}

int pnm_int(std::istream& in) {
    const std::string tok = pnm_token(in);
    try {
        return std::stoi(tok);
    } catch (const std::exception&) {
        throw IoError("malformed PGM header field: " + tok);
    }
}

ImageTensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const std::string magic = pnm_token(in);
    if (magic != "P5" && magic != "P2") throw IoError(path + ": not a PGM file");
    const int width = pnm_int(in), height = pnm_int(in), maxval = pnm_int(in);
    if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) throw IoError(path + ": bad PGM header");
    ImageTensor img(1, height, width);
    const Eigen::Index n = img.size();
    if (magic == "P2") {
        for (Eigen::Index i = 0; i < n; ++i) img.vec()[i] = double(pnm_int(in)) / maxval;
        return img;
    }
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(std::size_t(n) * bytes);
    if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size())))
        throw IoError(path + ": truncated PGM data");
    for (Eigen::Index i = 0; i < n; ++i) {
        const unsigned v = bytes == 1 ? raw[i] : (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1];
        img.vec()[i] = double(v) / maxval;
    }
    return img;
}

unsigned quantize(double v, unsigned maxval) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    return unsigned(std::lround(c * maxval));
}

void write_pgm(const std::string& path, const ImageTensor& img, int bits) {
    if (img.channels() != 1) throw std::invalid_argument("PGM output needs a single-channel image");
    const unsigned maxval = bits == 16 ? 65535 : 255;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << img.width() << ' ' << img.height() << '\n' << maxval << '\n';
    std::vector<unsigned char> raw;
    for (Eigen::Index i = 0; i < img.size(); ++i) {
        const unsigned v = quantize(img.vec()[i], maxval);
        if (bits == 16) raw.push_back(static_cast<unsigned char>(v >> 8));
        raw.push_back(static_cast<unsigned char>(v & 0xff));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    if (!out) throw IoError("failed writing " + path);
}

// The classic libpng interface stores sample values as given, with no
// colour-space conversion, at 8 or 16 bits. Errors arrive by longjmp, so the
// setjmp frames below hold only trivially destructible locals; buffers live in
// the caller.
struct PngPixels {
    png_uint_32 width = 0, height = 0;
    int channels = 0;
    int bits = 0;
    std::vector<unsigned char> bytes;
    std::vector<png_bytep> rows;
};

void png_fail(png_structp png, png_const_charp message) {
    auto* err = static_cast<char*>(png_get_error_ptr(png));
    std::snprintf(err, 256, "%s", message);
    png_longjmp(png, 1);
}

void png_quiet(png_structp, png_const_charp) {}

bool png_read_raw(std::FILE* fp, PngPixels* px, char* err) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, png_fail, png_quiet);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int type = png_get_color_type(png, info);
    if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    px->width = png_get_image_width(png, info);
    px->height = png_get_image_height(png, info);
    px->channels = png_get_channels(png, info);
    px->bits = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    px->bytes.resize(stride * px->height);
    px->rows.resize(px->height);
    for (png_uint_32 i = 0; i < px->height; ++i) px->rows[i] = px->bytes.data() + i * stride;
    png_read_image(png, px->rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

bool png_write_raw(std::FILE* fp, PngPixels* px, char* err) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, png_fail, png_quiet);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, info ? &info : nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, px->width, px->height, px->bits,
                 px->channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, px->rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};

ImageTensor read_png(const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);
    PngPixels px;
    char err[256] = "unreadable PNG";
    if (!png_read_raw(fp.get(), &px, err)) throw IoError(path + ": " + err);
    if (px.channels != 1 && px.channels != 3) throw IoError(path + ": unsupported PNG channel layout");
    const int c = px.channels, h = int(px.height), w = int(px.width);
    const bool wide = px.bits == 16;
    const double maxval = wide ? 65535.0 : 255.0;
    ImageTensor img(c, h, w);
    for (int i = 0; i < h; ++i) {
        const unsigned char* row = px.rows[i];
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < c; ++k) {
                const std::size_t at = std::size_t(j) * c + k;
                const unsigned v = wide ? (unsigned(row[2 * at]) << 8) | row[2 * at + 1] : row[at];
                img(k, i, j) = v / maxval;
            }
    }
    return img;
}

void write_png(const std::string& path, const ImageTensor& img, int bits) {
    if (img.channels() != 1 && img.channels() != 3)
        throw std::invalid_argument("PNG output needs one or three channels");
    const int c = img.channels(), h = img.height(), w = img.width();
    PngPixels px;
    px.width = png_uint_32(w);
    px.height = png_uint_32(h);
    px.channels = c;
    px.bits = bits;
    const unsigned maxval = bits == 16 ? 65535u : 255u;
    const std::size_t stride = std::size_t(w) * c * (bits / 8);
    px.bytes.resize(stride * h);
    px.rows.resize(h);
    for (int i = 0; i < h; ++i) {
        unsigned char* row = px.bytes.data() + i * stride;
        px.rows[i] = row;
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < c; ++k) {
                const std::size_t at = std::size_t(j) * c + k;
                const unsigned v = quantize(img(k, i, j), maxval);
                if (bits == 16) {
                    row[2 * at] = static_cast<unsigned char>(v >> 8);
                    row[2 * at + 1] = static_cast<unsigned char>(v & 0xff);
                } else {
                    row[at] = static_cast<unsigned char>(v);
                }
            }
    }
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path);
    char err[256] = "PNG encoding failed";
    if (!png_write_raw(fp.get(), &px, err)) throw IoError(path + ": " + err);
}

} // namespace

ImageTensor read_image(const std::string& path, int channels) {
    if (channels != 0 && channels != 1 && channels != 3) throw std::invalid_argument("channels must be 0, 1 or 3");
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open " + path);
    char head[8] = {};
    probe.read(head, 8);
    probe.close();
    if (head[0] == 'P' && (head[1] == '5' || head[1] == '2')) return convert_channels(read_pgm(path), channels);
    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (std::memcmp(head, png_sig, 8) == 0) return convert_channels(read_png(path), channels);
    throw IoError(path + ": unsupported image format (expected PGM or PNG)");
}

void write_image(const std::string& path, const ImageTensor& img, int bits) {
    if (bits != 8 && bits != 16) throw std::invalid_argument("bit depth must be 8 or 16");
    const std::string ext = extension(path);
    if (ext == ".pgm") return write_pgm(path, img, bits);
    if (ext == ".png") return write_png(path, img, bits);
    throw std::invalid_argument("unsupported image extension: " + path);
}

void write_tensor(std::ostream& out, const ImageTensor& img) {
    out.write(tensor_magic, 8);
    binary::write_u32(out, std::uint32_t(img.channels()));
    binary::write_u32(out, std::uint32_t(img.height()));
    binary::write_u32(out, std::uint32_t(img.width()));
    for (Eigen::Index i = 0; i < img.size(); ++i) binary::write_f64(out, img.vec()[i]);
}

ImageTensor read_tensor(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, tensor_magic, 8) != 0) throw IoError("not a tensor file");
    const std::uint32_t c = binary::read_u32(in), h = binary::read_u32(in), w = binary::read_u32(in);
    if (c == 0 || h == 0 || w == 0 || c > 64 || h > 1u << 15 || w > 1u << 15) throw IoError("bad tensor shape");
    ImageTensor img(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    for (Eigen::Index i = 0; i < img.size(); ++i) img.vec()[i] = binary::read_f64(in);
    return img;
}

void write_tensor(const std::string& path, const ImageTensor& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_tensor(out, img);
    if (!out) throw IoError("failed writing " + path);
}

ImageTensor read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return read_tensor(in);
}

} // namespace degrad
