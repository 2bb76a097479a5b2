#include "dfreg/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dfreg {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

GridShape to_shape(const std::string& key, const std::string& v) {
    std::vector<int> dims;
    for (const auto& part : split(v, 'x')) dims.push_back(to_int(key, part));
    return GridShape(dims);
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& part : split(v, ',')) out.push_back(to_double(key, part));
    return out;
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& part : split(v, ',')) out.push_back(to_int(key, part));
    return out;
}

}  // namespace

void RunConfig::finalize() {
    model.dims = shape.rank();
    if (static_cast<int>(weights.lambda1.size()) == 1)
        weights.lambda1.assign(static_cast<std::size_t>(model.scales), weights.lambda1[0]);
    model.validate();
    weights.validate(model.scales);
    if (!(lr > 0)) throw std::invalid_argument("config: lr must be positive");
    if (iterations < 0) throw std::invalid_argument("config: iterations must be >= 0");
    if (ncc_window % 2 == 0 || ncc_window < 3)
        throw std::invalid_argument("config: ncc_window must be odd and >= 3");
    if (eval_pairs < 1) throw std::invalid_argument("config: eval_pairs must be >= 1");
    if (dataset != "blob" && dataset != "c-shape" && dataset != "multi-organ")
        throw std::invalid_argument("config: unknown dataset '" + dataset + "'");
    if (velocity != "linear" && velocity != "radial" && velocity != "vortex")
        throw std::invalid_argument("config: unknown velocity '" + velocity + "'");
    if (ss_steps < 1 || integration_steps < 1)
        throw std::invalid_argument("config: integrator step counts must be >= 1");
    const int div = 1 << (model.scales - 1);
    for (int e : shape.dims)
        if (e % div != 0)
            throw std::invalid_argument("config: shape " + shape.str() + " not divisible by 2^(scales-1)");
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
    RunConfig cfg = std::move(base);
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));

        if (key == "shape") cfg.shape = to_shape(key, val);
        else if (key == "scales") cfg.model.scales = to_int(key, val);
        else if (key == "cascades") cfg.model.cascades = to_int(key, val);
        else if (key == "channels") cfg.model.channels = to_int_list(key, val);
        else if (key == "sigma_h") cfg.model.sigma_h = to_double(key, val);
        else if (key == "h_min") cfg.model.h_min = to_double(key, val);
        else if (key == "prealign") cfg.model.prealign = to_bool(key, val);
        else if (key == "lambda1") cfg.weights.lambda1 = to_list(key, val);
        else if (key == "lambda2") cfg.weights.lambda2 = to_double(key, val);
        else if (key == "lambda3") cfg.weights.lambda3 = to_double(key, val);
        else if (key == "lambda4") cfg.weights.lambda4 = to_double(key, val);
        else if (key == "lambda5") cfg.weights.lambda5 = to_double(key, val);
        else if (key == "lr") cfg.lr = to_double(key, val);
        else if (key == "iterations") cfg.iterations = to_int(key, val);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(val));
        else if (key == "ncc_window") cfg.ncc_window = to_int(key, val);
        else if (key == "log_every") cfg.log_every = to_int(key, val);
        else if (key == "dataset") cfg.dataset = val;
        else if (key == "eval_pairs") cfg.eval_pairs = to_int(key, val);
        else if (key == "warp_amplitude") cfg.warp_amplitude = to_double(key, val);
        else if (key == "noise_sigma") cfg.noise_sigma = to_double(key, val);
        else if (key == "out") cfg.out_dir = val;
        else if (key == "velocity") cfg.velocity = val;
        else if (key == "ss_steps") cfg.ss_steps = to_int(key, val);
        else if (key == "integration_steps") cfg.integration_steps = to_int(key, val);
        else if (key == "velocity_amplitude") cfg.velocity_amplitude = to_double(key, val);
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    cfg.finalize();
    return cfg;
}

RunConfig load_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), std::move(base));
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "shape = " << cfg.shape.str() << "\n";
    os << "scales = " << cfg.model.scales << "\n";
    os << "cascades = " << cfg.model.cascades << "\n";
    os << "channels = ";
    for (std::size_t i = 0; i < cfg.model.channels.size(); ++i)
        os << (i ? "," : "") << cfg.model.channels[i];
    os << "\n";
    os << "sigma_h = " << cfg.model.sigma_h << "\n";
    os << "h_min = " << cfg.model.h_min << "\n";
    os << "prealign = " << (cfg.model.prealign ? "true" : "false") << "\n";
    os << "lambda1 = ";
    for (std::size_t i = 0; i < cfg.weights.lambda1.size(); ++i)
        os << (i ? "," : "") << cfg.weights.lambda1[i];
    os << "\n";
    os << "lambda2 = " << cfg.weights.lambda2 << "\n";
    os << "lambda3 = " << cfg.weights.lambda3 << "\n";
    os << "lambda4 = " << cfg.weights.lambda4 << "\n";
    os << "lambda5 = " << cfg.weights.lambda5 << "\n";
    os << "lr = " << cfg.lr << "\n";
    os << "iterations = " << cfg.iterations << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "ncc_window = " << cfg.ncc_window << "\n";
    os << "log_every = " << cfg.log_every << "\n";
    os << "dataset = " << cfg.dataset << "\n";
    os << "eval_pairs = " << cfg.eval_pairs << "\n";
    os << "warp_amplitude = " << cfg.warp_amplitude << "\n";
    os << "noise_sigma = " << cfg.noise_sigma << "\n";
    os << "out = " << cfg.out_dir << "\n";
    os << "velocity = " << cfg.velocity << "\n";
    os << "ss_steps = " << cfg.ss_steps << "\n";
    os << "integration_steps = " << cfg.integration_steps << "\n";
    os << "velocity_amplitude = " << cfg.velocity_amplitude << "\n";
    return os.str();
}

}  // namespace dfreg
