#include "qrtls/io.hpp"

#include "qrtls/params_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace qrtls {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_number(const std::string& s) {
    if (s == "nan" || s == "NaN") return std::nan("");
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) {
        throw std::runtime_error("malformed number '" + s + "'");
    }
    return v;
}

int parse_photons(const std::string& s) {
    const double v = parse_number(s);
    if (!(v >= 1.0) || v != std::floor(v)) throw std::runtime_error("malformed photon number '" + s + "'");
    return static_cast<int>(v);
}

bool parse_metadata_line(const std::string& line, Metadata& md) {
    if (line.empty() || line[0] != '#') return false;
    std::string body = line.substr(1);
    if (!body.empty() && body[0] == ' ') body.erase(0, 1);
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
        md.emplace_back(body, "");
    } else {
        md.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    }
    return true;
}

void write_metadata(std::ostream& os, const Metadata& md) {
    for (const auto& [k, v] : md) os << "# " << k << '=' << v << '\n';
}

}  // namespace

Index SpectroscopyGrid::nan_count() const {
    Index n = 0;
    for (Index i = 0; i < values.size(); ++i) n += std::isnan(values.data()[i]) ? 1 : 0;
    return n;
}

Metadata params_metadata(const SystemParams& p, const std::string& prefix) {
    Metadata md;
    for (const auto& key : param_keys()) {
        if (!has_param(p, key.name)) continue;
        md.emplace_back(prefix + std::string(key.name), format_double(get_param(p, key.name)));
    }
    return md;
}

SystemParams params_from_metadata(const Metadata& md, const std::string& prefix) {
    SystemParams p;
    for (const auto& [k, v] : md) {
        if (k.rfind(prefix, 0) != 0) continue;
        const std::string key = k.substr(prefix.size());
        if (!is_param_key(key)) continue;
        set_param(p, key, parse_number(v));
    }
    return p;
}

std::string metadata_value(const Metadata& md, const std::string& key,
                           const std::string& fallback) {
    for (const auto& [k, v] : md) {
        if (k == key) return v;
    }
    return fallback;
}

void write_grid_csv(std::ostream& os, const SpectroscopyGrid& g) {
    if (g.values.rows() != static_cast<Index>(g.sweep.size()) ||
        g.values.cols() != static_cast<Index>(g.freq.size())) {
        throw std::invalid_argument("write_grid_csv: axis sizes do not match the value matrix");
    }
    write_metadata(os, g.metadata);
    os << g.sweep_name;
    for (double f : g.freq) os << ',' << format_double(f);
    os << '\n';
    for (Index r = 0; r < g.values.rows(); ++r) {
        os << format_double(g.sweep[static_cast<std::size_t>(r)]);
        for (Index c = 0; c < g.values.cols(); ++c) os << ',' << format_double(g.values(r, c));
        os << '\n';
    }
}

void write_grid_csv(const std::filesystem::path& path, const SpectroscopyGrid& grid) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    write_grid_csv(os, grid);
}

SpectroscopyGrid read_grid_csv(std::istream& is) {
    SpectroscopyGrid g;
    std::string line;
    bool have_header = false;
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!have_header && parse_metadata_line(line, g.metadata)) continue;
        const auto cells = split_csv(line);
        if (!have_header) {
            g.sweep_name = cells.at(0);
            for (std::size_t k = 1; k < cells.size(); ++k) g.freq.push_back(parse_number(cells[k]));
            have_header = true;
            continue;
        }
        if (cells.size() != g.freq.size() + 1) {
            throw std::runtime_error("read_grid_csv: row has " + std::to_string(cells.size() - 1) +
                                     " cells, expected " + std::to_string(g.freq.size()));
        }
        g.sweep.push_back(parse_number(cells[0]));
        std::vector<double> r;
        for (std::size_t k = 1; k < cells.size(); ++k) r.push_back(parse_number(cells[k]));
        rows.push_back(std::move(r));
    }
    if (!have_header) throw std::runtime_error("read_grid_csv: missing header row");
    g.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(g.freq.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < g.freq.size(); ++c) {
            g.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
        }
    }
    return g;
}

SpectroscopyGrid read_grid_csv(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
    return read_grid_csv(is);
}

namespace {

constexpr char grid_magic[8] = {'Q', 'R', 'T', 'L', 'S', 'G', 'R', 'D'};

static_assert(std::endian::native == std::endian::little,
              "binary grid format assumes a little-endian host");

void put_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
void put_doubles(std::ostream& os, const double* d, std::size_t n) {
    os.write(reinterpret_cast<const char*>(d), static_cast<std::streamsize>(n * sizeof(double)));
}
void get_doubles(std::istream& is, double* d, std::size_t n) {
    is.read(reinterpret_cast<char*>(d), static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace

void write_grid_binary(const std::filesystem::path& path, const SpectroscopyGrid& g) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    os.write(grid_magic, sizeof grid_magic);
    std::ostringstream md;
    write_metadata(md, g.metadata);
    const std::string text = md.str();
    put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    put_u64(os, g.sweep.size());
    put_u64(os, g.freq.size());
    put_doubles(os, g.sweep.data(), g.sweep.size());
    put_doubles(os, g.freq.data(), g.freq.size());
    for (Index r = 0; r < g.values.rows(); ++r) {
        const Eigen::RowVectorXd row = g.values.row(r);
        put_doubles(os, row.data(), static_cast<std::size_t>(row.size()));
    }
}

SpectroscopyGrid read_grid_binary(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, grid_magic, sizeof magic) != 0) {
        throw std::runtime_error("read_grid_binary: bad magic in '" + path.string() + "'");
    }
    SpectroscopyGrid g;
    const auto md_len = get_u64(is);
    if (!is || md_len > (std::uint64_t{1} << 32)) {
        throw std::runtime_error("read_grid_binary: bad metadata block in '" + path.string() + "'");
    }
    std::string text(md_len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(md_len));
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) parse_metadata_line(line, g.metadata);
    const auto rows = get_u64(is);
    const auto cols = get_u64(is);
    if (!is || rows * cols > (std::uint64_t{1} << 34)) {
        throw std::runtime_error("read_grid_binary: bad dimensions in '" + path.string() + "'");
    }
    g.sweep.resize(rows);
    g.freq.resize(cols);
    get_doubles(is, g.sweep.data(), rows);
    get_doubles(is, g.freq.data(), cols);
    g.values.resize(static_cast<Index>(rows), static_cast<Index>(cols));
    Eigen::RowVectorXd row(static_cast<Index>(cols));
    for (std::uint64_t r = 0; r < rows; ++r) {
        get_doubles(is, row.data(), cols);
        g.values.row(static_cast<Index>(r)) = row;
    }
    if (!is) throw std::runtime_error("read_grid_binary: truncated file '" + path.string() + "'");
    return g;
}

void write_catalog_csv(std::ostream& os, const std::vector<TransitionCatalog>& catalogs,
                       const Metadata& metadata) {
    write_metadata(os, metadata);
    os << "sweep_value,freq_GHz,n_photons,weight,from_label,to_label\n";
    for (const auto& cat : catalogs) {
        for (const auto& t : cat.transitions) {
            os << format_double(cat.sweep_value) << ',' << format_double(t.freq_ghz) << ','
               << t.n_photons << ',' << format_double(t.weight) << ',' << t.from_label << ','
               << t.to_label << '\n';
        }
    }
}

std::vector<TransitionCatalog> read_catalog_csv(std::istream& is, Metadata* metadata) {
    Metadata md;
    std::vector<TransitionCatalog> out;
    std::string line;
    bool have_header = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!have_header && parse_metadata_line(line, md)) continue;
        if (!have_header) {
            have_header = true;
            continue;
        }
        const auto c = split_csv(line);
        if (c.size() != 6) throw std::runtime_error("read_catalog_csv: expected 6 columns");
        const double s = parse_number(c[0]);
        if (out.empty() || out.back().sweep_value != s) {
            out.push_back(TransitionCatalog{s, {}});
        }
        out.back().transitions.push_back(
            {-1, -1, parse_number(c[1]), parse_photons(c[2]), parse_number(c[3]), c[4], c[5]});
    }
    if (metadata) *metadata = std::move(md);
    return out;
}

// ------------------------------------------------------------------ PNG

namespace {

// Piecewise-linear approximation of a perceptual dark-to-bright map.
void colormap(double t, png_byte* rgb) {
    static const double stops[5][3] = {
        {0.05, 0.03, 0.20}, {0.35, 0.10, 0.50}, {0.75, 0.20, 0.40}, {0.98, 0.55, 0.20},
        {0.99, 0.98, 0.60}};
    t = std::clamp(t, 0.0, 1.0) * 4.0;
    const int i = std::min(3, static_cast<int>(t));
    const double f = t - i;
    for (int c = 0; c < 3; ++c) {
        rgb[c] = static_cast<png_byte>(255.0 * ((1 - f) * stops[i][c] + f * stops[i + 1][c]));
    }
}

}  // namespace

void write_grid_png(const std::filesystem::path& path, const SpectroscopyGrid& g, int scale) {
    if (g.values.size() == 0) throw std::invalid_argument("write_grid_png: empty grid");
    const int s = std::max(1, scale);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (Index i = 0; i < g.values.size(); ++i) {
        const double v = g.values.data()[i];
        if (std::isnan(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) hi = lo + 1.0;

    const auto width = static_cast<png_uint_32>(g.values.rows() * s);
    const auto height = static_cast<png_uint_32>(g.values.cols() * s);

    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
    if (!fp) throw std::runtime_error("cannot write '" + path.string() + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_grid_png: libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_grid_png: libpng error");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // metadata as tEXt chunks; libpng keys are limited to 79 bytes
    std::vector<png_text> text(g.metadata.size());
    for (std::size_t i = 0; i < g.metadata.size(); ++i) {
        text[i].compression = PNG_TEXT_COMPRESSION_NONE;
        text[i].key = const_cast<char*>(g.metadata[i].first.c_str());
        text[i].text = const_cast<char*>(g.metadata[i].second.c_str());
        text[i].text_length = g.metadata[i].second.size();
    }
    if (!text.empty()) png_set_text(png, info, text.data(), static_cast<int>(text.size()));
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(width) * 3);
    for (png_uint_32 y = 0; y < height; ++y) {
        const Index c = g.values.cols() - 1 - static_cast<Index>(y) / s;  // high freq on top
        for (png_uint_32 x = 0; x < width; ++x) {
            const Index r = static_cast<Index>(x) / s;
            const double v = g.values(r, c);
            png_byte* px = &row[static_cast<std::size_t>(x) * 3];
            if (std::isnan(v)) {
                px[0] = px[1] = px[2] = 0;
            } else {
                colormap((v - lo) / (hi - lo), px);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace qrtls
