// io.hpp: spectroscopy grids and artifact files
//
// Grid CSV layout:
//   # key=value            metadata lines
//   <sweep_name>,f0,f1,... header row: frequency axis (GHz)
//   s0,v00,v01,...         one row per sweep value; NaN spelled `nan`
//
// Catalog CSV: `#` metadata, then
//   sweep_value,freq_GHz,n_photons,weight,from_label,to_label

#pragma once

#include "qrtls/spectrum.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace qrtls {

using Metadata = std::vector<std::pair<std::string, std::string>>;

struct SpectroscopyGrid {
    std::string sweep_name{"piezo_v"};
    std::vector<double> sweep;   // rows
    std::vector<double> freq;    // columns, GHz
    Eigen::MatrixXd values;      // sweep.size() x freq.size()
    Metadata metadata;

    Index rows() const noexcept { return values.rows(); }
    Index cols() const noexcept { return values.cols(); }
    Index nan_count() const;
};

// Metadata for a full parameter set, one entry per key in canonical order.
Metadata params_metadata(const SystemParams& p, const std::string& prefix = "param.");
// Reassemble parameters from `param.*` metadata entries; missing keys keep defaults.
SystemParams params_from_metadata(const Metadata& md, const std::string& prefix = "param.");
std::string metadata_value(const Metadata& md, const std::string& key,
                           const std::string& fallback = {});

void write_grid_csv(std::ostream& os, const SpectroscopyGrid& grid);
void write_grid_csv(const std::filesystem::path& path, const SpectroscopyGrid& grid);
SpectroscopyGrid read_grid_csv(std::istream& is);
SpectroscopyGrid read_grid_csv(const std::filesystem::path& path);

// Little-endian float64 matrix: magic "QRTLSGRD", u64 n, n bytes of metadata lines
// ("# key=value"), u64 rows, u64 cols, sweep[rows], freq[cols], values row-major.
void write_grid_binary(const std::filesystem::path& path, const SpectroscopyGrid& grid);
SpectroscopyGrid read_grid_binary(const std::filesystem::path& path);

void write_catalog_csv(std::ostream& os, const std::vector<TransitionCatalog>& catalogs,
                       const Metadata& metadata);
std::vector<TransitionCatalog> read_catalog_csv(std::istream& is, Metadata* metadata = nullptr);

// 8-bit colour heatmap (rows = sweep, bottom-to-top frequency), NaN drawn black.
// Metadata goes into tEXt chunks.
void write_grid_png(const std::filesystem::path& path, const SpectroscopyGrid& grid,
                    int scale = 4);

}  // namespace qrtls
