#include "elm/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace elm {

void write_image(const std::string& path, const Image& img) {
    if (img.C != 1 && img.C != 3)
        throw ConfigError("image IO supports C=1 (PGM) or C=3 (PPM), got C=" +
                          std::to_string(img.C));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f << (img.C == 1 ? "P5" : "P6") << "\n" << img.W << " " << img.H << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.W) * img.C);
    for (int r = 0; r < img.H; ++r) {
        for (int c = 0; c < img.W; ++c)
            for (int ch = 0; ch < img.C; ++ch) {
                const real v = std::clamp(img.at(r, c, ch), static_cast<real>(0),
                                          static_cast<real>(1));
                row[static_cast<std::size_t>(c) * img.C + ch] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw DataError("short write to " + path);
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::ifstream& f, const std::string& path) {
    std::string tok;
    int ch;
    while ((ch = f.get()) != EOF) {
        if (ch == '#') {
            while ((ch = f.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty())
        throw DataError("unexpected end of header in " + path + " at byte " +
                        std::to_string(static_cast<long>(f.tellg())));
    return tok;
}

int parse_int(const std::string& tok, std::ifstream& f, const std::string& path) {
    try {
        return std::stoi(tok);
    } catch (const std::exception&) {
        throw DataError("malformed header token \"" + tok + "\" in " + path + " at byte " +
                        std::to_string(static_cast<long>(f.tellg())));
    }
}

}  // namespace

Image read_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    const std::string magic = next_token(f, path);
    int C;
    if (magic == "P5")
        C = 1;
    else if (magic == "P6")
        C = 3;
    else
        throw DataError("bad magic \"" + magic + "\" in " + path + " at byte 0");
    const int W = parse_int(next_token(f, path), f, path);
    const int H = parse_int(next_token(f, path), f, path);
    const int maxval = parse_int(next_token(f, path), f, path);
    if (W <= 0 || H <= 0)
        throw DataError("bad dimensions " + std::to_string(W) + "x" + std::to_string(H) + " in " +
                        path);
    if (maxval != 255)
        throw DataError("unsupported maxval " + std::to_string(maxval) + " in " + path +
                        " at byte " + std::to_string(static_cast<long>(f.tellg())));
    // exactly one whitespace byte separates header and raster
    Image img(H, W, C);
    std::vector<unsigned char> raw(static_cast<std::size_t>(H) * W * C);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(f.gcount()) != raw.size())
        throw DataError("truncated raster in " + path + " at byte " +
                        std::to_string(static_cast<long>(f.tellg())) + " (expected " +
                        std::to_string(raw.size()) + " bytes)");
    for (std::size_t i = 0; i < raw.size(); ++i)
        img.pixels[i] = static_cast<real>(raw[i]) / static_cast<real>(255);
    return img;
}

}  // namespace elm
