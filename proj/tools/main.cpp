#include <CLI11.hpp>
#include <iostream>

#include "dscene/pipeline.hpp"

using namespace dscene;

namespace {

Difficulty parse_difficulty(const std::string& s) {
    if (s == "easy") return Difficulty::Easy;
    if (s == "medium") return Difficulty::Medium;
    if (s == "hard") return Difficulty::Hard;
    throw CLI::ValidationError("difficulty must be easy, medium, or hard");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"3D scene model recovery from depth images over bundle directories"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path;
    PipelineConfig cfg;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", cfg.seed, "Run seed");
    app.add_option("--threads", cfg.threads, "Worker threads (0 = hardware)");
    app.add_flag("!--no-cache", cfg.use_cache, "Ignore cached stage artifacts");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic scene bundle");
    std::string synth_out, synth_difficulty = "medium";
    double noise_sigma = 0.0, noise_dropout = 0.0, leaky = 0.0;
    int width = 160, height = 120;
    synth->add_option("--out", synth_out, "Output bundle directory")->required();
    synth->add_option("--difficulty", synth_difficulty, "easy | medium | hard");
    synth->add_option("--noise-sigma", noise_sigma, "Relative depth noise");
    synth->add_option("--dropout", noise_dropout, "Missing-pixel probability");
    synth->add_option("--leaky-superpixels", leaky, "Superpixel impurity probability");
    synth->add_option("--width", width, "Image width");
    synth->add_option("--height", height, "Image height");

    // train
    auto* train = app.add_subcommand("train", "Train layout/retrieval models on synthetic scenes");
    std::string train_models_dir, train_difficulty = "medium";
    int train_scenes = 40;
    train->add_option("--models", train_models_dir, "Models output directory")->required();
    train->add_option("--scenes", train_scenes, "Training scene count");
    train->add_option("--difficulty", train_difficulty, "easy | medium | hard");

    // per-stage commands share (bundle, models)
    std::string bundle_dir, models_dir, model_path;
    auto add_bundle = [&](CLI::App* sub, bool needs_models) {
        sub->add_option("bundle", bundle_dir, "Bundle directory")->required();
        if (needs_models) sub->add_option("--models", models_dir, "Models directory")->required();
    };
    auto* layout_cmd = app.add_subcommand("layout", "Detect layout surfaces");
    add_bundle(layout_cmd, true);
    auto* propose_cmd = app.add_subcommand("propose", "Generate object region proposals");
    add_bundle(propose_cmd, false);
    auto* retrieve_cmd = app.add_subcommand("retrieve", "Retrieve exemplars per region");
    add_bundle(retrieve_cmd, true);
    auto* fit_cmd = app.add_subcommand("fit", "Align retrieved exemplars");
    add_bundle(fit_cmd, true);
    auto* compose_cmd = app.add_subcommand("compose", "Select the scene model");
    add_bundle(compose_cmd, true);
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model against ground truth");
    add_bundle(eval_cmd, false);
    eval_cmd->add_option("--model", model_path, "Model file (default bundle/model.json)");
    eval_cmd->add_option("--eps-factor", cfg.eps_factor, "Voxel tolerance factor");
    eval_cmd->add_option("--voxel-spacing", cfg.voxel_spacing, "Voxel grid spacing");
    auto* pipeline_cmd = app.add_subcommand("pipeline", "Run every stage and evaluate");
    add_bundle(pipeline_cmd, true);

    try {
        app.parse(argc, argv);
        // Command-line values take precedence over the config file.
        uint64_t cli_seed = cfg.seed;
        int cli_threads = cfg.threads;
        bool seed_set = app.count("--seed") > 0, threads_set = app.count("--threads") > 0;
        if (!config_path.empty()) cfg.apply_json_file(config_path);
        if (seed_set) cfg.seed = cli_seed;
        if (threads_set) cfg.threads = cli_threads;

        if (synth->parsed()) {
            GenOptions gen;
            gen.width = width;
            gen.height = height;
            gen.leaky_superpixels = leaky;
            NoiseModel noise{noise_sigma, noise_dropout, true};
            GroundTruthBundle bundle =
                generate_scene(cfg.seed, parse_difficulty(synth_difficulty), gen, noise);
            write_bundle(synth_out, bundle);
            std::cout << "wrote bundle " << synth_out << " (" << bundle.spec.objects.size()
                      << " objects, " << bundle.spec.layout.size() << " layout surfaces)\n";
        } else if (train->parsed()) {
            TrainOptions opt;
            opt.scenes = train_scenes;
            opt.difficulty = parse_difficulty(train_difficulty);
            if (cfg.seed != 0) opt.seed = cfg.seed;
            train_models(train_models_dir, cfg, opt);
            std::cout << "wrote models to " << train_models_dir << "\n";
        } else if (layout_cmd->parsed()) {
            Models models = read_models(models_dir);
            LayoutStage stage = stage_layout(bundle_dir, models, cfg);
            std::cout << "detected " << stage.surfaces.size() << " layout surfaces\n";
        } else if (propose_cmd->parsed()) {
            auto proposals = stage_propose(bundle_dir, cfg);
            std::cout << "kept " << proposals.size() << " region proposals\n";
        } else if (retrieve_cmd->parsed()) {
            Models models = read_models(models_dir);
            RetrievalStage stage = stage_retrieve(bundle_dir, models, cfg);
            size_t matched = 0;
            for (const auto& m : stage.matches) matched += !m.empty();
            std::cout << "retrieved exemplars for " << matched << "/" << stage.matches.size()
                      << " regions\n";
        } else if (fit_cmd->parsed()) {
            Models models = read_models(models_dir);
            auto candidates = stage_fit(bundle_dir, models, cfg);
            std::cout << "aligned " << candidates.size() << " candidates\n";
        } else if (compose_cmd->parsed()) {
            Models models = read_models(models_dir);
            SceneModel model = stage_compose(bundle_dir, models, cfg);
            std::cout << "selected " << model.layout.size() << " layout surfaces and "
                      << model.objects.size() << " objects (cost " << model.cost.total() << ")\n";
        } else if (eval_cmd->parsed()) {
            EvalReport report = stage_eval(bundle_dir, cfg, model_path);
            SceneModel empty;
            write_report_kv(fs::path(bundle_dir) / "report.kv", report, empty, cfg);
            write_report_text(fs::path(bundle_dir) / "report.txt", report, empty);
            std::cout << "occupancy eps P/R " << report.occupancy_eps.precision << "/"
                      << report.occupancy_eps.recall << "; reports written\n";
        } else if (pipeline_cmd->parsed()) {
            PipelineResult result = run_pipeline(bundle_dir, models_dir, cfg);
            std::cout << "pipeline done: " << result.model.layout.size() << " surfaces, "
                      << result.model.objects.size() << " objects; occupancy eps P/R "
                      << result.report.occupancy_eps.precision << "/"
                      << result.report.occupancy_eps.recall << "\n";
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const StageError& e) {
        std::cerr << "stage failure " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
