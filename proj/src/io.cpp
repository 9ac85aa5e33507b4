#include "rainfield/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace rainfield {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
}

double parse_double(const std::string& s, const std::string& ctx) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        return v;
    } catch (const std::exception&) {
        throw IoError("failed to parse number '" + s + "' in " + ctx);
    }
}

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
    std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    return f;
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    return f;
}

}  // namespace

std::vector<TopologyEntry> load_topology_csv(const std::filesystem::path& path) {
    auto f = open_in(path, false);
    std::string line;
    if (!std::getline(f, line)) throw IoError("empty topology file: " + path.string());
    if (line.rfind("link_id", 0) != 0)
        throw IoError("topology file missing header: " + path.string());
    std::vector<TopologyEntry> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cols = split_csv_line(line);
        if (cols.size() != 8)
            throw IoError("topology row needs 8 columns: " + line);
        TopologyEntry e;
        e.link_id = cols[0];
        e.segment.start = {parse_double(cols[1], "x0"), parse_double(cols[2], "y0")};
        e.segment.end = {parse_double(cols[3], "x1"), parse_double(cols[4], "y1")};
        e.params.a = parse_double(cols[5], "a");
        e.params.b = parse_double(cols[6], "b");
        e.sigma = parse_double(cols[7], "sigma");
        out.push_back(std::move(e));
    }
    return out;
}

void save_topology_csv(const std::filesystem::path& path,
                       const std::vector<TopologyEntry>& topology) {
    auto f = open_out(path, false);
    f << "link_id,x0,y0,x1,y1,a,b,sigma\n";
    f << std::setprecision(17);
    for (const auto& e : topology) {
        f << e.link_id << ',' << e.segment.start.x() << ',' << e.segment.start.y() << ','
          << e.segment.end.x() << ',' << e.segment.end.y() << ',' << e.params.a << ','
          << e.params.b << ',' << e.sigma << '\n';
    }
}

void save_field(const std::filesystem::path& path, const RainField& field) {
    auto f = open_out(path, true);
    f.write("RFLD", 4);
    const std::uint32_t h = field.grid.height, w = field.grid.width;
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    for (int r = 0; r < field.values.rows(); ++r)
        for (int c = 0; c < field.values.cols(); ++c) {
            const double v = field.values(r, c);
            f.write(reinterpret_cast<const char*>(&v), 8);
        }
}

RainField load_field(const std::filesystem::path& path, const GridSpec& grid) {
    auto f = open_in(path, true);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "RFLD", 4) != 0)
        throw IoError("bad field magic in " + path.string());
    std::uint32_t h = 0, w = 0;
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    if (!f || static_cast<int>(h) != grid.height || static_cast<int>(w) != grid.width)
        throw IoError("field shape mismatch in " + path.string());
    Eigen::MatrixXd m(h, w);
    for (std::uint32_t r = 0; r < h; ++r)
        for (std::uint32_t c = 0; c < w; ++c) {
            double v;
            f.read(reinterpret_cast<char*>(&v), 8);
            if (!f) throw IoError("truncated field file: " + path.string());
            m(r, c) = v;
        }
    return RainField(grid, std::move(m));
}

void save_field_csv(const std::filesystem::path& path, const RainField& field) {
    auto f = open_out(path, false);
    f << std::setprecision(17);
    for (int r = 0; r < field.values.rows(); ++r) {
        for (int c = 0; c < field.values.cols(); ++c) {
            if (c) f << ',';
            f << field.values(r, c);
        }
        f << '\n';
    }
}

void save_observation_csv(const std::filesystem::path& path,
                          const std::vector<std::string>& link_ids,
                          const Eigen::VectorXd& y) {
    if (static_cast<Eigen::Index>(link_ids.size()) != y.size())
        throw IoError("save_observation_csv: id/value length mismatch");
    auto f = open_out(path, false);
    f << "link_id,y\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < y.size(); ++i) f << link_ids[i] << ',' << y(i) << '\n';
}

Eigen::VectorXd load_observation_csv(const std::filesystem::path& path,
                                     std::vector<std::string>* link_ids) {
    auto f = open_in(path, false);
    std::string line;
    if (!std::getline(f, line) || line.rfind("link_id", 0) != 0)
        throw IoError("observation file missing header: " + path.string());
    std::vector<double> ys;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cols = split_csv_line(line);
        if (cols.size() != 2) throw IoError("observation row needs 2 columns: " + line);
        if (link_ids) link_ids->push_back(cols[0]);
        ys.push_back(parse_double(cols[1], "y"));
    }
    return Eigen::Map<Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
}

void save_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
    auto f = open_out(path, true);
    f.write("RMAT", 4);
    const std::uint32_t r = static_cast<std::uint32_t>(m.rows());
    const std::uint32_t c = static_cast<std::uint32_t>(m.cols());
    f.write(reinterpret_cast<const char*>(&r), 4);
    f.write(reinterpret_cast<const char*>(&c), 4);
    for (std::uint32_t i = 0; i < r; ++i)
        for (std::uint32_t j = 0; j < c; ++j) {
            const double v = m(i, j);
            f.write(reinterpret_cast<const char*>(&v), 8);
        }
}

Eigen::MatrixXd load_matrix(const std::filesystem::path& path) {
    auto f = open_in(path, true);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "RMAT", 4) != 0)
        throw IoError("bad matrix magic in " + path.string());
    std::uint32_t r = 0, c = 0;
    f.read(reinterpret_cast<char*>(&r), 4);
    f.read(reinterpret_cast<char*>(&c), 4);
    Eigen::MatrixXd m(r, c);
    for (std::uint32_t i = 0; i < r; ++i)
        for (std::uint32_t j = 0; j < c; ++j) {
            double v;
            f.read(reinterpret_cast<char*>(&v), 8);
            if (!f) throw IoError("truncated matrix file: " + path.string());
            m(i, j) = v;
        }
    return m;
}

}  // namespace rainfield
