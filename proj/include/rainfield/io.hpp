#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rainfield/forward.hpp"
#include "rainfield/grid.hpp"

namespace rainfield {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One row of a topology CSV (`link_id,x0,y0,x1,y1,a,b,sigma`).
/// Coordinates are in grid units.
struct TopologyEntry {
    std::string link_id;
    LinkSegment segment;
    PowerLawParams params;
    double sigma = 0.0;
};

std::vector<TopologyEntry> load_topology_csv(const std::filesystem::path& path);
void save_topology_csv(const std::filesystem::path& path,
                       const std::vector<TopologyEntry>& topology);

/// Binary field format: magic "RFLD", u32 H, u32 W, f64 row-major values.
void save_field(const std::filesystem::path& path, const RainField& field);
RainField load_field(const std::filesystem::path& path, const GridSpec& grid);

/// CSV debug format, one row of the field per line.
void save_field_csv(const std::filesystem::path& path, const RainField& field);

/// Observation CSV (`link_id,y`).
void save_observation_csv(const std::filesystem::path& path,
                          const std::vector<std::string>& link_ids,
                          const Eigen::VectorXd& y);
Eigen::VectorXd load_observation_csv(const std::filesystem::path& path,
                                     std::vector<std::string>* link_ids = nullptr);

/// Dense matrix as raw doubles with a small header, used for oracle dumps.
void save_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_matrix(const std::filesystem::path& path);

}  // namespace rainfield
