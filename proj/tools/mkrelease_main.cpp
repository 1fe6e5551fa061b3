// Generates a synthetic annotation release in the upstream layout, sized so
// the alignment pipeline reproduces the documented corpus counts.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "comma/errors.hpp"
#include "comma/synth.hpp"
#include "json.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthetic annotation release generator"};
    std::string out;
    comma::synth::SynthConfig config;
    bool force = false;
    app.add_option("--out", out, "release output directory")->required();
    app.add_option("--stories", config.n_stories, "number of stories")
        ->capture_default_str();
    app.add_option("--seed", config.seed, "generation seed")
        ->capture_default_str();
    app.add_flag("--force", force, "overwrite existing output");

    try {
        app.parse(argc, argv);
        namespace fs = std::filesystem;
        if (!force && fs::exists(fs::path(out) / "annotations.json")) {
            throw comma::config_error("output already exists: " + out +
                                      "; pass --force to overwrite");
        }
        comma::synth::write_release(config, out);
        std::cout << "release: " << config.n_stories << " stories -> " << out
                  << "\n";
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const comma::error& e) {
        const nlohmann::json doc = {
            {"error", {{"category", e.category()}, {"message", e.what()}}}};
        std::cerr << doc.dump() << "\n";
        return e.exit_code();
    }
    return 0;
}
