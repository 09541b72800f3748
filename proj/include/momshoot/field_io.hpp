#pragma once

#include <fstream>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "momshoot/field.hpp"

namespace momshoot {

// Native format: one text header line
//   MOMSHOOT-FIELD v1 dtype=f32 dims=<d1,d2[,d3]> channels=<1|d> boundary=<periodic|clamp>\n
// followed by little-endian f32 values, channel-major, last axis fastest.
struct RawField {
    GridGeometry geometry;
    int channels;
    std::vector<double> values;
};

void write_field(std::ostream &os, const GridGeometry &geometry, int channels, std::span<const double> values);
RawField read_raw_field(std::istream &is);

void write_field(const std::string &path, const ScalarField &field);
void write_field(const std::string &path, const VectorField &field);
void write_field(const std::string &path, const DeformationMap &map);
RawField read_raw_field(const std::string &path);
ScalarField read_scalar_field(const std::string &path);
VectorField read_vector_field(const std::string &path);
DeformationMap read_deformation_map(const std::string &path);

// Little-endian f32 block helpers shared by the batch and weight formats.
void write_f32(std::ostream &os, std::span<const double> values);
void read_f32(std::istream &is, std::span<double> values);

// 8-bit binary PGM (P5). Import scales to [0,1] with a clamp boundary.
ScalarField read_pgm(const std::string &path);
// Linear rendering of [lo, hi] onto 0..255; 2D only.
void write_pgm(const std::string &path, const ScalarField &field, double lo, double hi);

// Key=value tokens of a "<MAGIC> v1 k=v ..." header line.
using HeaderTokens = std::map<std::string, std::string>;
HeaderTokens parse_header_tokens(const std::string &line, const std::string &magic);
const std::string &header_value(const HeaderTokens &tokens, const std::string &key);

std::ofstream open_output(const std::string &path);
std::ifstream open_input(const std::string &path);

std::string join_ints(const std::vector<int> &v);
std::vector<int> parse_ints(const std::string &s);

} // namespace momshoot
