#pragma once

#include "degrad/image.hpp"

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>

namespace degrad {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reads a PGM (P2 or P5, 8 or 16 bit) or PNG file into [0,1] intensities.
/// `channels` = 0 keeps the file's layout (1 for gray, 3 for colour); 1 or 3
/// converts (colour to gray by Rec. 601 luma, gray to colour by replication).
ImageTensor read_image(const std::string& path, int channels = 0);

/// Writes by extension: .pgm (binary, gray only) or .png (gray or RGB).
/// Values are clamped to [0,1] and quantized; `bits` is 8 or 16.
void write_image(const std::string& path, const ImageTensor& img, int bits = 8);

/// Exact binary container for a tensor: magic, shape, little-endian doubles.
void write_tensor(std::ostream& out, const ImageTensor& img);
ImageTensor read_tensor(std::istream& in);
void write_tensor(const std::string& path, const ImageTensor& img);
ImageTensor read_tensor(const std::string& path);

namespace binary {

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);

} // namespace binary

} // namespace degrad
