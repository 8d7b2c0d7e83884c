#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "moon/driver.hpp"

using namespace moon;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file (defaults used when omitted)");
    cmd->add_option("--set", args.overrides, "override as dotted key=value (repeatable)");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "override the top-level seed");
}

// resolve = defaults <- file <- --set <- --seed; returns (config, full echo)
std::pair<RunConfig, json> resolve(const CommonArgs& args) {
    json user = json::object();
    if (!args.config_path.empty()) {
        std::ifstream f(args.config_path);
        if (!f) throw std::runtime_error("cannot open config file " + args.config_path);
        user = json::parse(f);
    }
    for (const auto& kv : args.overrides) apply_override(user, kv);
    if (args.seed >= 0) user["seed"] = uint64_t(args.seed);
    RunConfig cfg = config_from_json(user); // strict
    json resolved = config_to_json(cfg);
    return {cfg, resolved};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MOON: multi-organ 3-grade esophageal-varices pipeline"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        int (*run)(const RunConfig&, const json&, const std::string&);
    };
    const Sub subs[] = {
        {"synthesize", "generate a synthetic three-organ phantom dataset", cmd_synthesize},
        {"train", "train one model on a manifest split", cmd_train},
        {"evaluate", "evaluate a checkpoint on a manifest", cmd_evaluate},
        {"crossval", "k-fold cross-validation", cmd_crossval},
        {"compare-fusion", "the fusion-strategy grid (with and without ORI+HFE)", cmd_compare_fusion},
        {"ablate", "the {ORI,HFE,CCA} on/off grid", cmd_ablate},
        {"gradcam", "heat volumes for a trained checkpoint", cmd_gradcam},
    };

    std::vector<std::pair<CommonArgs, const Sub*>> argsets(std::size(subs));
    int exit_code = 0;
    for (size_t i = 0; i < std::size(subs); ++i) {
        CLI::App* cmd = app.add_subcommand(subs[i].name, subs[i].help);
        argsets[i].second = &subs[i];
        add_common(cmd, argsets[i].first);
        cmd->callback([&, i] {
            const auto& [args, sub] = argsets[i];
            auto [cfg, resolved] = resolve(args);
            resolved["command"] = sub->name;
            exit_code = sub->run(cfg, resolved, args.out_dir);
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::cerr << "error: " << msg << "\n";
        bool missing = msg.find("cannot open") != std::string::npos ||
                       msg.find("missing volume file") != std::string::npos ||
                       msg.find("missing lesion mask") != std::string::npos;
        return missing ? 3 : 1;
    }
    return exit_code;
}
