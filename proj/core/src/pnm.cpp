#include "ccgan/pnm.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "ccgan/error.hpp"

namespace ccgan {

void write_pnm(const std::filesystem::path& path, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) {
    throw ContractError("write_pnm: only 1 or 3 channels are supported");
  }
  if (raster.pixels.size() != raster.width * raster.height * raster.channels) {
    throw ContractError("write_pnm: pixel buffer does not match raster size");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << (raster.channels == 1 ? "P5" : "P6") << '\n'
      << raster.width << ' ' << raster.height << '\n'
      << "255\n";
  out.write(reinterpret_cast<const char*>(raster.pixels.data()),
            static_cast<std::streamsize>(raster.pixels.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Raster read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string magic = next_token(in);
  Raster r;
  if (magic == "P5") {
    r.channels = 1;
  } else if (magic == "P6") {
    r.channels = 3;
  } else {
    throw DataError("'" + path.string() + "' is not a binary PGM/PPM file");
  }
  try {
    r.width = std::stoul(next_token(in));
    r.height = std::stoul(next_token(in));
    if (std::stoul(next_token(in)) != 255) throw DataError("only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw DataError("malformed header in '" + path.string() + "'");
  }
  r.pixels.resize(r.width * r.height * r.channels);
  in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.pixels.size())) {
    throw DataError("truncated pixel data in '" + path.string() + "'");
  }
  return r;
}

}  // namespace ccgan
