// dfreg: training, registration and evaluation for the symmetric
// control-increment registration engine.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dfreg/bridge.hpp"
#include "dfreg/pipeline.hpp"
#include "dfreg/render.hpp"
#include "dfreg/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace dfreg;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool out_set = false;
};

RunConfig resolve_config(const GlobalOpts& g, RunConfig base = RunConfig()) {
    RunConfig cfg = g.config_path.empty() ? std::move(base) : load_config(g.config_path, std::move(base));
    if (g.seed_set) cfg.seed = g.seed;
    if (g.out_set) cfg.out_dir = g.out_dir;
    cfg.finalize();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

int cmd_train(const GlobalOpts& g) {
    RunConfig cfg = resolve_config(g);
    fs::create_directories(cfg.out_dir);
    TrainOutput out = train(cfg, &std::cout);

    std::ostringstream hist;
    hist << "iteration total sim jdet smooth cycle cic\n";
    hist.precision(12);
    for (const auto& row : out.history)
        hist << row.iteration << " " << row.losses.total << " " << row.losses.sim << " " << row.losses.jdet
             << " " << row.losses.smooth << " " << row.losses.cycle << " " << row.losses.cic << "\n";
    write_text(fs::path(cfg.out_dir) / "history.txt", hist.str());

    save_checkpoint((fs::path(cfg.out_dir) / "checkpoint").string(), out.model, serialize_config(cfg));
    std::cout << "checkpoint written to " << (fs::path(cfg.out_dir) / "checkpoint").string() << "\n";
    return 0;
}

int cmd_register(const GlobalOpts& g, const std::string& checkpoint, const std::string& moving,
                 const std::string& fixed, const std::string& moving_mask, const std::string& fixed_mask) {
    RunConfig cfg = parse_config_text(checkpoint_config_text(checkpoint));
    if (g.out_set) cfg.out_dir = g.out_dir;
    RegistrationModel model = load_checkpoint(checkpoint);

    ScalarField x = read_scalar_field(moving);
    ScalarField y = read_scalar_field(fixed);
    if (!(x.shape() == cfg.shape) || !(y.shape() == cfg.shape))
        throw std::runtime_error("register: shape mismatch, expected " + cfg.shape.str() + ", got " +
                                 x.shape().str() + " and " + y.shape().str());

    ScalarField mx, my;
    bool with_masks = !moving_mask.empty() && !fixed_mask.empty();
    if (with_masks) {
        mx = read_scalar_field(moving_mask);
        my = read_scalar_field(fixed_mask);
    }
    RegistrationResult res = register_pair(x, y, model, cfg.weights, cfg.ncc_window,
                                           with_masks ? &mx : nullptr, with_masks ? &my : nullptr);

    fs::create_directories(cfg.out_dir);
    fs::path dir(cfg.out_dir);
    write_scalar_field((dir / "moving.dft").string(), x);
    write_scalar_field((dir / "fixed.dft").string(), y);
    write_vector_field((dir / "phi.dft").string(), res.phi.displacement);
    write_vector_field((dir / "phi_inv.dft").string(), res.phi_inv.displacement);
    write_scalar_field((dir / "warped_forward.dft").string(), res.warped_xy);
    write_scalar_field((dir / "warped_backward.dft").string(), res.warped_yx);

    std::ostringstream ms;
    ms.precision(12);
    ms << "forward  dsc " << res.forward.dsc << "  hd " << res.forward.hd << "  ssim " << res.forward.ssim
       << "  fold_fraction " << res.forward.fold_fraction << "\n";
    ms << "backward dsc " << res.backward.dsc << "  hd " << res.backward.hd << "  ssim " << res.backward.ssim
       << "  fold_fraction " << res.backward.fold_fraction << "\n";
    ms << "losses total " << res.losses.total << " sim " << res.losses.sim << " jdet " << res.losses.jdet
       << " smooth " << res.losses.smooth << " cycle " << res.losses.cycle << " cic " << res.losses.cic
       << "\n";
    ms << "cycle_displacement_error " << cycle_displacement_error(res.phi, res.phi_inv) << "\n";
    write_text(dir / "metrics.txt", ms.str());
    std::cout << ms.str();
    return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& checkpoint) {
    RunConfig cfg = parse_config_text(checkpoint_config_text(checkpoint));
    if (!g.config_path.empty()) cfg = load_config(g.config_path, cfg);
    if (g.seed_set) cfg.seed = g.seed;
    if (g.out_set) cfg.out_dir = g.out_dir;
    cfg.finalize();

    RegistrationModel model = load_checkpoint(checkpoint);
    EvalTable table = evaluate(cfg, model);
    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "evaluation.txt", table.text);
    std::cout << table.text;
    return 0;
}

int cmd_compare(const GlobalOpts& g) {
    RunConfig cfg = resolve_config(g);
    IntegratorReport rep = compare_integrators(cfg);
    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "integrators.txt", rep.text);
    std::cout << rep.text;
    return 0;
}

int cmd_render(const GlobalOpts& g, const std::string& result_dir) {
    fs::path dir(result_dir);
    RegistrationResult res;
    ScalarField moving = read_scalar_field((dir / "moving.dft").string());
    ScalarField fixed = read_scalar_field((dir / "fixed.dft").string());
    VectorField phi = read_vector_field((dir / "phi.dft").string());
    VectorField phi_inv = read_vector_field((dir / "phi_inv.dft").string());
    res.phi = DeformationField(phi.shape(), phi);
    res.phi_inv = DeformationField(phi_inv.shape(), phi_inv);
    res.warped_xy = read_scalar_field((dir / "warped_forward.dft").string());
    res.warped_yx = read_scalar_field((dir / "warped_backward.dft").string());

    std::string out = g.out_set ? g.out_dir : (dir / "render").string();
    render(res, moving, fixed, out);
    std::cout << "renders written to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"symmetric diffeomorphic registration via control-increment learning"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "run configuration file")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", g.seed, "override the run seed");
    auto* out_opt = app.add_option("--out", g.out_dir, "override the output directory");

    auto* train_cmd = app.add_subcommand("train", "train on synthetic pairs, write checkpoint");
    auto* reg_cmd = app.add_subcommand("register", "register a pair of TensorFile images");
    std::string checkpoint, moving, fixed, moving_mask, fixed_mask, result_dir;
    reg_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    reg_cmd->add_option("--moving", moving, "moving image (.dft)")->required()->check(CLI::ExistingFile);
    reg_cmd->add_option("--fixed", fixed, "fixed image (.dft)")->required()->check(CLI::ExistingFile);
    reg_cmd->add_option("--moving-mask", moving_mask, "moving label map (.dft)")->check(CLI::ExistingFile);
    reg_cmd->add_option("--fixed-mask", fixed_mask, "fixed label map (.dft)")->check(CLI::ExistingFile);

    auto* eval_cmd = app.add_subcommand("evaluate", "metric table over the synthetic evaluation set");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();

    auto* cmp_cmd = app.add_subcommand("compare-integrators",
                                       "scaling-and-squaring vs control-increment stepping on an analytic flow");
    auto* render_cmd = app.add_subcommand("render", "write PGM/PPM renders of a registration result");
    render_cmd->add_option("--result", result_dir, "register output directory")->required()
        ->check(CLI::ExistingDirectory);
    auto* selftest_cmd = app.add_subcommand("selftest", "gradcheck and invariant sweep");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;
    g.out_set = out_opt->count() > 0;

    try {
        if (*train_cmd) return cmd_train(g);
        if (*reg_cmd) return cmd_register(g, checkpoint, moving, fixed, moving_mask, fixed_mask);
        if (*eval_cmd) return cmd_evaluate(g, checkpoint);
        if (*cmp_cmd) return cmd_compare(g);
        if (*render_cmd) return cmd_render(g, result_dir);
        if (*selftest_cmd) return selftest(std::cout) ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
