#include "dfreg/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dfreg/bridge.hpp"
#include "dfreg/config.hpp"

namespace dfreg {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'T', '1'};

void put_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_f32_le(std::ostream& os, float f) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(f);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

float get_f32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return std::bit_cast<float>(u);
}

}  // namespace

void write_tensor_file(const std::string& path, const ad::Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_tensor_file: cannot open " + path);
    os.write(kMagic, 4);
    os.put(0);  // dtype 0 = float32 LE
    os.put(static_cast<char>(t.rank()));
    for (int e : t.shape) put_u64_le(os, static_cast<std::uint64_t>(e));
    for (double v : t.data) put_f32_le(os, static_cast<float>(v));
    if (!os) throw std::runtime_error("write_tensor_file: write failed for " + path);
}

ad::Tensor read_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_tensor_file: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("read_tensor_file: bad magic in " + path);
    int dtype = is.get();
    if (dtype != 0) throw std::runtime_error("read_tensor_file: unsupported dtype in " + path);
    int ndim = is.get();
    if (ndim < 1 || ndim > 8) throw std::runtime_error("read_tensor_file: bad rank in " + path);
    std::vector<int> shape(static_cast<std::size_t>(ndim));
    for (int i = 0; i < ndim; ++i) shape[static_cast<std::size_t>(i)] = static_cast<int>(get_u64_le(is));
    ad::Tensor t(shape);
    for (double& v : t.data) v = static_cast<double>(get_f32_le(is));
    if (!is) throw std::runtime_error("read_tensor_file: truncated file " + path);
    return t;
}

void write_scalar_field(const std::string& path, const ScalarField& f) {
    ad::Tensor t(f.shape().dims, f.data());
    write_tensor_file(path, t);
}

ScalarField read_scalar_field(const std::string& path) {
    ad::Tensor t = read_tensor_file(path);
    return ScalarField(GridShape(t.shape), std::move(t.data));
}

void write_vector_field(const std::string& path, const VectorField& v) {
    write_tensor_file(path, tensor_from_vector(v));
}

VectorField read_vector_field(const std::string& path) {
    return vector_from_tensor(read_tensor_file(path));
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace fs = std::filesystem;

void save_checkpoint(const std::string& dir, const RegistrationModel& model, const std::string& config_text) {
    fs::create_directories(dir);
    {
        std::ofstream cfg(fs::path(dir) / "config.txt");
        if (!cfg) throw std::runtime_error("save_checkpoint: cannot write config in " + dir);
        cfg << config_text;
    }
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw std::runtime_error("save_checkpoint: cannot write manifest in " + dir);
    for (std::size_t i = 0; i < model.names.size(); ++i) {
        const std::string file = model.names[i] + ".dft";
        const ad::Tensor& t = model.values[i]->data;
        manifest << model.names[i] << '\t' << file << '\t';
        for (int a = 0; a < t.rank(); ++a) manifest << (a ? "x" : "") << t.shape[static_cast<std::size_t>(a)];
        manifest << '\n';
        write_tensor_file((fs::path(dir) / file).string(), t);
    }
}

std::string checkpoint_config_text(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "config.txt");
    if (!in) throw std::runtime_error("checkpoint: missing config.txt in " + dir);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

RegistrationModel load_checkpoint(const std::string& dir) {
    RunConfig cfg = parse_config_text(checkpoint_config_text(dir));
    RegistrationModel model = RegistrationModel::init(cfg.model, cfg.seed);

    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw std::runtime_error("checkpoint: missing manifest.txt in " + dir);
    std::size_t loaded = 0;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name, file, shape;
        if (!std::getline(ls, name, '\t') || !std::getline(ls, file, '\t') || !std::getline(ls, shape))
            throw std::runtime_error("checkpoint: malformed manifest row: " + line);
        ad::Value p = model.param(name);
        ad::Tensor t = read_tensor_file((fs::path(dir) / file).string());
        if (t.shape != p->data.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " + t.shape_str() +
                                     " vs model " + p->data.shape_str());
        p->data = std::move(t);
        ++loaded;
    }
    if (loaded != model.values.size())
        throw std::runtime_error("checkpoint: manifest lists " + std::to_string(loaded) + " parameters, model has " +
                                 std::to_string(model.values.size()));
    return model;
}

}  // namespace dfreg
