#include "neurodec/tensorio.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>
#include <numeric>
#include <sstream>

namespace neurodec::io {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

std::string dtype_tag(Dtype d) { return d == Dtype::F32 ? "f32" : "f64"; }

Dtype parse_dtype(const std::string& tag) {
    if (tag == "f32") return Dtype::F32;
    if (tag == "f64") return Dtype::F64;
    throw std::invalid_argument("unknown dtype tag: " + tag);
}

std::size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

std::int64_t Tensor::numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                           [](std::int64_t a, std::int64_t b) { return a * b; });
}

Tensor Tensor::from_matrix(const Matrix& m, Dtype d) {
    Tensor t;
    t.dtype = d;
    t.shape = {m.rows(), m.cols()};
    t.values.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            t.values[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
        }
    }
    return t;
}

Matrix Tensor::as_matrix() const {
    if (shape.size() != 2) throw std::invalid_argument("tensor is not 2-D");
    Matrix m(shape[0], shape[1]);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = values[static_cast<std::size_t>(r * m.cols() + c)];
        }
    }
    return m;
}

namespace {

std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& c : out) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '_' || c == '-' || c == '.';
        if (!ok) c = '_';
    }
    return out;
}

}  // namespace

void TensorContainer::write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["endianness"] = "LE";
    manifest["tensors"] = json::array();
    for (const auto& [name, t] : tensors) {
        const std::string file = sanitize(name) + ".bin";
        const std::size_t nbytes = static_cast<std::size_t>(t.numel()) * dtype_size(t.dtype);
        std::ofstream out(dir / file, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for write: " + (dir / file).string());
        if (t.dtype == Dtype::F64) {
            out.write(reinterpret_cast<const char*>(t.values.data()),
                      static_cast<std::streamsize>(nbytes));
        } else {
            std::vector<float> f(t.values.begin(), t.values.end());
            out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(nbytes));
        }
        json entry;
        entry["name"] = name;
        entry["file"] = file;
        entry["dtype"] = dtype_tag(t.dtype);
        entry["shape"] = t.shape;
        entry["byte_offset"] = 0;
        entry["byte_length"] = nbytes;
        manifest["tensors"].push_back(entry);
    }
    std::ofstream mf(dir / "manifest.json");
    mf << manifest.dump(2) << "\n";
}

TensorContainer TensorContainer::read(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("missing manifest.json in " + dir.string());
    json manifest = json::parse(mf);
    if (manifest.value("endianness", "LE") != "LE") {
        throw std::runtime_error("container endianness is not LE");
    }
    TensorContainer c;
    for (const auto& entry : manifest.at("tensors")) {
        Tensor t;
        t.dtype = parse_dtype(entry.at("dtype").get<std::string>());
        t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
        const std::size_t nbytes = entry.at("byte_length").get<std::size_t>();
        const std::size_t offset = entry.value("byte_offset", std::size_t{0});
        if (nbytes != static_cast<std::size_t>(t.numel()) * dtype_size(t.dtype)) {
            throw std::runtime_error("manifest byte length does not match shape for tensor " +
                                     entry.at("name").get<std::string>());
        }
        std::ifstream in(dir / entry.at("file").get<std::string>(), std::ios::binary);
        if (!in) throw std::runtime_error("missing tensor file for " + entry.at("name").get<std::string>());
        in.seekg(static_cast<std::streamoff>(offset));
        t.values.resize(static_cast<std::size_t>(t.numel()));
        if (t.dtype == Dtype::F64) {
            in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(nbytes));
        } else {
            std::vector<float> f(static_cast<std::size_t>(t.numel()));
            in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(nbytes));
            std::copy(f.begin(), f.end(), t.values.begin());
        }
        if (!in) throw std::runtime_error("short read for tensor " + entry.at("name").get<std::string>());
        c.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
    return c;
}

const Tensor& TensorContainer::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("tensor not found: " + name);
    return it->second;
}

void RunManifest::write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config_hash"] = config_hash;
    j["seeds"] = seeds;
    j["input_paths"] = input_paths;
    j["version"] = version;
    j["wall_time_s"] = wall_time_s;
    std::ofstream out(dir / "run_manifest.json");
    out << j.dump(2) << "\n";
}

std::uint64_t fnv1a_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string build_version() {
#ifdef NEURODEC_GIT_DESCRIBE
    return NEURODEC_GIT_DESCRIBE;
#else
    return "unknown";
#endif
}

void write_csv(const std::filesystem::path& file, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot open for write: " + file.string());
    for (std::size_t i = 0; i < header.size(); ++i) {
        out << header[i] << (i + 1 < header.size() ? "," : "\n");
    }
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            out << row[i] << (i + 1 < row.size() ? "," : "\n");
        }
    }
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& file,
                                               std::vector<std::string>* header) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open: " + file.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (first && header != nullptr) {
            *header = cells;
        } else {
            rows.push_back(std::move(cells));
        }
        first = false;
    }
    return rows;
}

}  // namespace neurodec::io
