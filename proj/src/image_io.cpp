#include "pns/image_io.hpp"

#include <cctype>
#include <fstream>

namespace pns {

namespace {

int read_pnm_token(std::istream& is, const std::string& path) {
    // Whitespace and '#' comments separate header tokens.
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = is.get();
    }
    if (c == EOF) throw Error(ErrorCode::io, "truncated pnm header: " + path);
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = is.get();
    }
    is.unget();
    return value;
}

} // namespace

ImageU8 read_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::io, "cannot open image: " + path);
    char p = 0, kind = 0;
    is.get(p);
    is.get(kind);
    if (p != 'P' || (kind != '5' && kind != '6'))
        throw Error(ErrorCode::io, "unsupported image format (want binary PGM/PPM): " + path);
    ImageU8 img;
    img.channels = kind == '5' ? 1 : 3;
    img.width = read_pnm_token(is, path);
    img.height = read_pnm_token(is, path);
    const int maxval = read_pnm_token(is, path);
    if (maxval != 255) throw Error(ErrorCode::io, "pnm maxval must be 255: " + path);
    is.get(); // single whitespace byte before raster
    if (img.width < 1 || img.height < 1)
        throw Error(ErrorCode::io, "empty image: " + path);
    img.pixels.resize(static_cast<size_t>(img.size()));
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw Error(ErrorCode::io, "truncated image data: " + path);
    return img;
}

void write_pnm(const std::string& path, const ImageU8& image) {
    if (image.channels != 1 && image.channels != 3)
        throw Error(ErrorCode::invalid_argument, "pnm supports 1 or 3 channels");
    if (image.size() != static_cast<int64_t>(image.pixels.size()))
        throw Error(ErrorCode::invalid_argument, "image pixel buffer size mismatch");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::io, "cannot open image for writing: " + path);
    os << (image.channels == 1 ? "P5" : "P6") << "\n"
       << image.width << " " << image.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(image.pixels.data()),
             static_cast<std::streamsize>(image.pixels.size()));
    if (!os) throw Error(ErrorCode::io, "image write failed: " + path);
}

} // namespace pns
