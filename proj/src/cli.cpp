#include "reg/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "reg/eval.hpp"
#include "reg/gradcheck.hpp"
#include "reg/io_util.hpp"
#include "reg/synth.hpp"
#include "reg/training.hpp"
#include "reg/volume_io.hpp"

namespace reg {

namespace fs = std::filesystem;

namespace {

Dims parse_dims(const std::string& text) {
    Dims dims{};
    char extra;
    if (std::sscanf(text.c_str(), "%ld,%ld,%ld%c", &dims[0], &dims[1], &dims[2], &extra) != 3) {
        throw ShapeError("cannot parse dims '" + text + "' (expected D,H,W)");
    }
    return dims;
}

void parse_weights(const std::string& text, LossWeights& weights) {
    char extra;
    float w1, w2, w3;
    if (std::sscanf(text.c_str(), "%f,%f,%f%c", &w1, &w2, &w3, &extra) != 3) {
        throw ShapeError("cannot parse weights '" + text + "' (expected w1,w2,w3)");
    }
    weights.coarse = w1;
    weights.mid = w2;
    weights.fine = w3;
}

std::vector<std::string> sorted_stems_with_suffix(const std::string& dir,
                                                  const std::string& suffix) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.ends_with(suffix + ".vjson")) {
            stems.push_back(name.substr(0, name.size() - suffix.size() - 6));
        }
    }
    std::sort(stems.begin(), stems.end());
    return stems;
}

struct DirectFlags {
    DirectOptions opts;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--iters", opts.iterations, "optimization iterations")
            ->capture_default_str();
        cmd->add_option("--lr", opts.learning_rate, "optimizer step size")->capture_default_str();
        cmd->add_option("--lambda", opts.lambda, "smoothness weight")->capture_default_str();
        cmd->add_flag("--plain-gd", opts.plain_gd, "plain gradient descent instead of Adam");
    }
};

int cmd_synth(const Dims& dims, int count, const SynthParams& base_params, uint64_t seed,
              const std::string& out_dir) {
    fs::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        SynthParams params = base_params;
        params.seed = seed * 1000003ull + static_cast<uint64_t>(i) * 2654435761ull;
        const Volume base = make_base_texture(dims, params.seed ^ 0xb5297a4dull);
        const SyntheticPair pair = make_synthetic_pair(base, params);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "pair%04d", i);
        const std::string prefix = out_dir + "/" + stem;
        write_volume(prefix + "_base", base);
        write_volume(prefix + "_fixed", pair.fixed);
        write_volume(prefix + "_moving", pair.moving);
        write_field(prefix + "_truth", pair.truth);
    }
    std::cout << "wrote " << count << " synthetic pairs to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& arch_name,
              const TrainConfig& config, const std::string& out_path,
              const std::string& log_path) {
    ArchitectureConfig arch;
    arch.variant = variant_from_string(arch_name);

    const auto pair_stems = sorted_stems_with_suffix(data_dir, "_fixed");
    TrainResult result;
    if (!pair_stems.empty()) {
        std::vector<VolumePair> pairs;
        pairs.reserve(pair_stems.size());
        for (const auto& stem : pair_stems) {
            pairs.push_back({read_volume(data_dir + "/" + stem + "_fixed"),
                             read_volume(data_dir + "/" + stem + "_moving")});
        }
        arch.input_dims = pairs.front().fixed.dims;
        std::cout << "training " << arch_name << " on " << pairs.size() << " pairs of "
                  << dims_str(arch.input_dims) << " volumes\n";
        result = train_network_pairs(pairs, arch, config);
    } else {
        std::vector<Volume> images;
        for (const auto& entry : fs::directory_iterator(data_dir)) {
            const std::string name = entry.path().filename().string();
            if (name.ends_with(".vjson") && !name.ends_with("_truth.vjson")) {
                images.push_back(read_volume(entry.path().string()));
            }
        }
        if (images.size() < 2) {
            throw IoError("no *_fixed/*_moving pairs and fewer than 2 volumes in '" + data_dir + "'");
        }
        std::sort(images.begin(), images.end(),
                  [](const Volume& a, const Volume& b) { return a.data < b.data; });
        arch.input_dims = images.front().dims;
        std::cout << "training " << arch_name << " on all ordered pairs of " << images.size()
                  << " images\n";
        result = train_network(images, arch, config);
    }

    result.net.save(out_path);
    if (!log_path.empty()) write_loss_curve_csv(log_path, result.curve);
    std::cout << "final loss " << result.curve.back().total << ", model written to " << out_path
              << "\n";
    return 0;
}

int cmd_register(const std::string& model_path, bool direct, const DirectFlags& direct_flags,
                 const std::string& fixed_path, const std::string& moving_path,
                 const std::string& out_field, const std::string& log_path) {
    const Volume fixed = read_volume(fixed_path);
    const Volume moving = read_volume(moving_path);
    if (fixed.dims != moving.dims) {
        throw ShapeError("fixed is " + dims_str(fixed.dims) + " but moving is " +
                         dims_str(moving.dims));
    }
    DisplacementField field;
    if (direct) {
        auto [result, curve] = register_direct(fixed, moving, direct_flags.opts);
        field = std::move(result);
        if (!log_path.empty()) write_loss_curve_csv(log_path, curve);
    } else {
        Network net = Network::load(model_path);
        field = register_infer(net, fixed, moving);
    }
    write_field(out_field, field);
    const Volume warped = warp_trilinear(moving, field);
    std::cout << "ncc before " << ncc_value(fixed, moving) << ", after "
              << ncc_value(fixed, warped) << "\n";
    return 0;
}

int cmd_warp(const std::string& in_path, const std::string& field_path,
             const std::string& out_path, bool nearest) {
    const Volume input = read_volume(in_path);
    const DisplacementField field = read_field(field_path);
    const Volume warped = nearest ? warp_nearest(input, field) : warp_trilinear(input, field);
    write_volume(out_path, warped);
    return 0;
}

int cmd_eval(const std::string& pairs_dir, const std::string& model_path, bool direct,
             const DirectFlags& direct_flags, const std::string& labels_dir,
             const std::string& truth_dir, const std::string& out_path) {
    const auto stems = sorted_stems_with_suffix(pairs_dir, "_fixed");
    if (stems.empty()) throw IoError("no *_fixed.vjson files in '" + pairs_dir + "'");

    std::vector<EvalPair> pairs;
    for (const auto& stem : stems) {
        EvalPair pair;
        pair.id = stem;
        pair.fixed = read_volume(pairs_dir + "/" + stem + "_fixed");
        pair.moving = read_volume(pairs_dir + "/" + stem + "_moving");
        if (!labels_dir.empty()) {
            pair.fixed_labels = read_volume(labels_dir + "/" + stem + "_fixed_labels");
            pair.moving_labels = read_volume(labels_dir + "/" + stem + "_moving_labels");
        }
        if (!truth_dir.empty()) {
            pair.truth = read_field(truth_dir + "/" + stem + "_truth");
        }
        pairs.push_back(std::move(pair));
    }

    RegisterFn registrar;
    Network net;
    if (direct) {
        registrar = [&direct_flags](const Volume& fixed, const Volume& moving) {
            return register_direct(fixed, moving, direct_flags.opts).first;
        };
    } else {
        net = Network::load(model_path);
        registrar = [&net](const Volume& fixed, const Volume& moving) {
            return register_infer(net, fixed, moving);
        };
    }

    const auto rows = evaluate_pairs(registrar, pairs);
    write_metrics_csv(out_path, rows);
    int failed = 0;
    for (const auto& row : rows) failed += row.ok ? 0 : 1;
    std::cout << "evaluated " << rows.size() << " pairs (" << failed << " failed), metrics in "
              << out_path << "\n";
    return failed == 0 ? 0 : 2;
}

int cmd_gradcheck(uint64_t seed, float tol) {
    const auto results = run_gradcheck_suite(seed, tol);
    bool all_pass = true;
    float suite_max = 0.0f;
    for (const auto& r : results) {
        std::cout << (r.pass ? "pass" : "FAIL") << "  " << r.name << "  max rel err "
                  << r.max_rel_err << "\n";
        all_pass = all_pass && r.pass;
        suite_max = std::max(suite_max, r.max_rel_err);
    }
    std::cout << (all_pass ? "gradcheck passed" : "gradcheck FAILED") << " (suite max "
              << suite_max << ", tol " << tol << ")\n";
    return all_pass ? 0 : 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"unsupervised deformable 3-d image registration"};
    app.require_subcommand(1);

    uint64_t seed = 0;
    bool deterministic = true;
    std::string log_path;
    app.add_option("--seed", seed, "random seed")->capture_default_str();
    app.add_flag("--deterministic,!--no-deterministic", deterministic,
                 "bit-reproducible mode (default on)");
    app.add_option("--log", log_path, "write the loss curve CSV here");

    // synth
    auto* synth = app.add_subcommand("synth", "generate synthetic deformation pairs");
    std::string synth_dims = "32,48,48", synth_out;
    int synth_count = 20;
    SynthParams synth_params;
    synth->add_option("--dims", synth_dims, "volume dims D,H,W")->capture_default_str();
    synth->add_option("--count", synth_count, "number of pairs")->capture_default_str();
    synth->add_option("--max-amp", synth_params.max_amplitude, "max displacement magnitude")
        ->capture_default_str();
    synth->add_option("--blobs", synth_params.num_blobs, "Gaussian bumps per field")
        ->capture_default_str();
    synth->add_option("--sigma-min", synth_params.sigma_min, "min bump width")
        ->capture_default_str();
    synth->add_option("--sigma-max", synth_params.sigma_max, "max bump width")
        ->capture_default_str();
    synth->add_option("--out", synth_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train a registration network");
    std::string train_data, train_arch = "multires", train_preset = "desk", train_out;
    std::string train_weights;
    TrainConfig train_overrides;
    train->add_option("--data", train_data, "directory of pairs or images")->required();
    train->add_option("--arch", train_arch, "multires|nopool|coarse")->capture_default_str();
    train->add_option("--preset", train_preset, "desk|paper")->capture_default_str();
    auto* train_iters = train->add_option("--iters", train_overrides.iterations, "iterations");
    auto* train_batch = train->add_option("--batch", train_overrides.batch_size, "batch size");
    auto* train_lr = train->add_option("--lr", train_overrides.learning_rate, "learning rate");
    auto* train_lambda =
        train->add_option("--lambda", train_overrides.weights.lambda, "smoothness weight");
    train->add_option("--weights", train_weights, "level weights w_coarse,w_mid,w_fine");
    train->add_option("--out", train_out, "model file")->required();

    // register
    auto* reg_cmd = app.add_subcommand("register", "register one pair of volumes");
    std::string reg_model, reg_fixed, reg_moving, reg_out_field;
    bool reg_direct = false;
    DirectFlags reg_direct_flags;
    reg_cmd->add_option("--model", reg_model, "trained model file");
    reg_cmd->add_flag("--direct", reg_direct, "optimize the field directly (no network)");
    reg_cmd->add_option("--fixed", reg_fixed, "fixed volume")->required();
    reg_cmd->add_option("--moving", reg_moving, "moving volume")->required();
    reg_cmd->add_option("--out-field", reg_out_field, "output displacement field")->required();
    reg_direct_flags.add_to(reg_cmd);

    // warp
    auto* warp_cmd = app.add_subcommand("warp", "apply a displacement field");
    std::string warp_in, warp_field, warp_out;
    bool warp_use_nearest = false;
    warp_cmd->add_option("--in", warp_in, "input volume")->required();
    warp_cmd->add_option("--field", warp_field, "displacement field")->required();
    warp_cmd->add_option("--out", warp_out, "output volume")->required();
    warp_cmd->add_flag("--nearest", warp_use_nearest, "nearest-neighbor (label maps)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate registration over a pair directory");
    std::string eval_pairs, eval_model, eval_labels, eval_truth, eval_out;
    bool eval_direct = false;
    DirectFlags eval_direct_flags;
    eval_cmd->add_option("--pairs", eval_pairs, "directory of *_fixed/*_moving volumes")
        ->required();
    eval_cmd->add_option("--model", eval_model, "trained model file");
    eval_cmd->add_flag("--direct", eval_direct, "direct field optimization");
    eval_cmd->add_option("--labels", eval_labels, "directory of *_fixed_labels/*_moving_labels");
    eval_cmd->add_option("--truth", eval_truth, "directory of *_truth fields");
    eval_cmd->add_option("--out", eval_out, "metrics CSV")->required();
    eval_direct_flags.add_to(eval_cmd);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    float gc_tol = 1e-3f;
    gc->add_option("--tol", gc_tol, "max relative error")->capture_default_str();

    std::vector<const char*> argv;
    argv.push_back("reg");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    init_threads_from_env();

    try {
        if (synth->parsed()) {
            synth_params.seed = seed;
            return cmd_synth(parse_dims(synth_dims), synth_count, synth_params, seed, synth_out);
        }
        if (train->parsed()) {
            TrainConfig config =
                train_preset == "paper" ? TrainConfig::paper() : TrainConfig::desk();
            if (train_preset != "paper" && train_preset != "desk") {
                throw ShapeError("unknown preset '" + train_preset + "' (expected desk or paper)");
            }
            if (train_iters->count()) config.iterations = train_overrides.iterations;
            if (train_batch->count()) config.batch_size = train_overrides.batch_size;
            if (train_lr->count()) config.learning_rate = train_overrides.learning_rate;
            if (train_lambda->count()) config.weights.lambda = train_overrides.weights.lambda;
            if (!train_weights.empty()) parse_weights(train_weights, config.weights);
            config.seed = seed;
            return cmd_train(train_data, train_arch, config, train_out, log_path);
        }
        if (reg_cmd->parsed()) {
            if (!reg_direct && reg_model.empty()) {
                throw ShapeError("register needs --model or --direct");
            }
            if (reg_direct && !reg_model.empty()) {
                throw ShapeError("--model and --direct are mutually exclusive");
            }
            return cmd_register(reg_model, reg_direct, reg_direct_flags, reg_fixed, reg_moving,
                                reg_out_field, log_path);
        }
        if (warp_cmd->parsed()) {
            return cmd_warp(warp_in, warp_field, warp_out, warp_use_nearest);
        }
        if (eval_cmd->parsed()) {
            if (!eval_direct && eval_model.empty()) {
                throw ShapeError("eval needs --model or --direct");
            }
            return cmd_eval(eval_pairs, eval_model, eval_direct, eval_direct_flags, eval_labels,
                            eval_truth, eval_out);
        }
        if (gc->parsed()) {
            return cmd_gradcheck(seed, gc_tol);
        }
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericsError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace reg
