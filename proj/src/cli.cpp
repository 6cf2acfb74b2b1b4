#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdml/cli.hpp"
#include "pdml/errors.hpp"
#include "pdml/grad_check.hpp"
#include "pdml/loss.hpp"
#include "pdml/metrics.hpp"
#include "pdml/model.hpp"
#include "pdml/run_config.hpp"
#include "pdml/synth.hpp"
#include "pdml/trainer.hpp"

namespace pdml {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text_file(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open file: " + path);
    std::string text((std::istreambuf_iterator<char>(file)),
                     std::istreambuf_iterator<char>());
    if (file.bad()) throw IoError("read failed: " + path);
    return text;
}

void write_bytes(const std::string& path, const void* data, std::size_t size) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open file for writing: " + path);
    file.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!file) throw IoError("write failed: " + path);
}

void write_text(const std::string& path, const std::string& text) {
    write_bytes(path, text.data(), text.size());
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
    if (text.empty()) throw ArgumentError(what + ": empty number");
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
    if (errno != 0 || end != text.c_str() + text.size()) {
        throw ArgumentError(what + ": bad number '" + text + "'");
    }
    return static_cast<std::uint64_t>(v);
}

/// Seed precedence: command-line flag, then the PDML_SEED environment
/// variable, then whatever the config file (or default) says.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed,
                           std::uint64_t file_seed) {
    if (flag_seed) return *flag_seed;
    if (const char* env = std::getenv("PDML_SEED")) {
        return parse_u64(env, "PDML_SEED");
    }
    return file_seed;
}

std::pair<std::size_t, std::size_t> parse_dims(const std::string& text,
                                               const std::string& what) {
    const std::size_t sep = text.find('x');
    if (sep == std::string::npos || sep == 0 || sep + 1 == text.size()) {
        throw ArgumentError(what + ": expected HxW, got '" + text + "'");
    }
    return {static_cast<std::size_t>(parse_u64(text.substr(0, sep), what)),
            static_cast<std::size_t>(parse_u64(text.substr(sep + 1), what))};
}

json split_to_json(const DatasetSplit& split) {
    auto coords = [](const std::vector<PixelCoord>& part) {
        json arr = json::array();
        for (const auto& [y, x] : part) arr.push_back({y, x});
        return arr;
    };
    json j;
    j["seed"] = split.seed;
    j["ratios"] = split.ratios;
    j["train"] = coords(split.train);
    j["val"] = coords(split.val);
    j["test"] = coords(split.test);
    return j;
}

DatasetSplit split_from_json_file(const std::string& path) {
    const std::string text = read_text_file(path);
    try {
        const json j = json::parse(text);
        auto coords = [](const json& arr) {
            std::vector<PixelCoord> part;
            part.reserve(arr.size());
            for (const auto& c : arr) {
                part.emplace_back(c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>());
            }
            return part;
        };
        DatasetSplit split;
        split.seed = j.at("seed").get<std::uint64_t>();
        split.ratios = j.at("ratios").get<std::array<double, 3>>();
        split.train = coords(j.at("train"));
        split.val = coords(j.at("val"));
        split.test = coords(j.at("test"));
        return split;
    } catch (const json::exception& e) {
        throw IoError(path + ": bad split record: " + e.what());
    }
}

json metrics_to_json(const Metrics& m) {
    json j;
    j["oa"] = m.oa;
    j["aa"] = m.aa;
    j["kappa"] = m.kappa;
    j["per_class"] = m.per_class;  // NaN entries serialize as null
    return j;
}

void print_metrics_table(const ConfusionMatrix& cm, const Metrics& m) {
    std::fprintf(stderr, "%-8s", "truth\\pred");
    for (std::size_t j = 0; j < cm.k; ++j) std::fprintf(stderr, "%8zu", j + 1);
    std::fprintf(stderr, "%10s\n", "recall");
    for (std::size_t i = 0; i < cm.k; ++i) {
        std::fprintf(stderr, "%-8zu", i + 1);
        for (std::size_t j = 0; j < cm.k; ++j) {
            std::fprintf(stderr, "%8llu", static_cast<unsigned long long>(cm.at(i, j)));
        }
        if (std::isnan(m.per_class[i])) {
            std::fprintf(stderr, "%10s\n", "-");
        } else {
            std::fprintf(stderr, "%10.4f\n", m.per_class[i]);
        }
    }
    std::fprintf(stderr, "oa=%.4f aa=%.4f kappa=%.4f\n", m.oa, m.aa, m.kappa);
}

/// Cuts coords into fixed-size chunks and predicts each, labels not needed.
std::vector<std::uint16_t> predict_coords(ParamStore& params, const BackboneConfig& cfg,
                                          const HsiCube& cube,
                                          const std::vector<PixelCoord>& coords) {
    std::vector<std::uint16_t> out;
    out.reserve(coords.size());
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < coords.size(); start += chunk) {
        const std::size_t stop = std::min(start + chunk, coords.size());
        const std::size_t b = stop - start;
        PatchBatch batch;
        batch.s = cfg.s;
        batch.patches = Tensor({b, cfg.s, cfg.s, cube.bands});
        batch.center_labels.assign(b, 0);
        for (std::size_t i = 0; i < b; ++i) {
            const auto [y, x] = coords[start + i];
            const Tensor patch = extract_patch(cube, y, x, cfg.s);
            std::copy(patch.values().begin(), patch.values().end(),
                      batch.patches.data() + i * cfg.s * cfg.s * cube.bands);
        }
        batch.coords.assign(coords.begin() + start, coords.begin() + stop);
        const std::vector<std::uint16_t> pred = predict_batch(params, cfg, batch);
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

struct SynthArgs {
    std::string out_dir;
    SynthConfig cfg;
    std::string size_text = "64x64";
    std::string tiles_text = "2x2";
    std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& args) {
    SynthConfig cfg = args.cfg;
    std::tie(cfg.height, cfg.width) = parse_dims(args.size_text, "--size");
    std::tie(cfg.tiles_y, cfg.tiles_x) = parse_dims(args.tiles_text, "--tiles");
    cfg.seed = resolve_seed(args.seed, 0);

    const auto [cube, labels] = synth_cube(cfg);

    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    if (ec) throw IoError("cannot create directory " + args.out_dir + ": " + ec.message());

    const std::string cube_path = (fs::path(args.out_dir) / "cube.hsc1").string();
    const std::string labels_path = (fs::path(args.out_dir) / "labels.hsl1").string();
    save_cube(cube, cube_path);
    save_labels(labels, labels_path);

    json desc;
    desc["classes"] = cfg.classes;
    desc["height"] = cfg.height;
    desc["width"] = cfg.width;
    desc["bands"] = cfg.bands;
    desc["tiles_y"] = cfg.tiles_y;
    desc["tiles_x"] = cfg.tiles_x;
    desc["seed"] = cfg.seed;
    desc["noise"] = cfg.noise;
    desc["mixing_width"] = cfg.mixing_width;
    desc["cube"] = "cube.hsc1";
    desc["labels"] = "labels.hsl1";
    write_text((fs::path(args.out_dir) / "synth.json").string(), desc.dump(2) + "\n");

    json out;
    out["cube"] = cube_path;
    out["labels"] = labels_path;
    out["classes"] = cfg.classes;
    out["height"] = cfg.height;
    out["width"] = cfg.width;
    out["bands"] = cfg.bands;
    std::printf("%s\n", out.dump().c_str());
    return 0;
}

struct TrainArgs {
    std::string cube_path;
    std::string labels_path;
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    bool resume = false;
};

void append_history(const std::string& path, const std::vector<EpochRecord>& records,
                    bool truncate) {
    std::ofstream file(path, truncate ? std::ios::trunc : std::ios::app);
    if (!file) throw IoError("cannot open file for writing: " + path);
    // Only deterministic fields go in the file; repeated runs with one seed
    // must reproduce it byte for byte. Timing lives in the epoch records for
    // programmatic callers.
    for (const EpochRecord& rec : records) {
        json line;
        line["epoch"] = rec.epoch;
        line["train_loss"] = rec.train_loss;
        if (rec.val_oa < 0) {
            line["val_oa"] = nullptr;
        } else {
            line["val_oa"] = rec.val_oa;
        }
        file << line.dump() << "\n";
    }
    if (!file) throw IoError("write failed: " + path);
}

int cmd_train(const TrainArgs& args) {
    RunConfig run_cfg = parse_run_config(read_text_file(args.config_path));

    HsiCube cube = load_cube(args.cube_path);
    const LabelMap labels = load_labels(args.labels_path);
    if (labels.height != cube.height || labels.width != cube.width) {
        throw ArgumentError("label map is " + std::to_string(labels.height) + "x" +
                            std::to_string(labels.width) + " but the cube is " +
                            std::to_string(cube.height) + "x" + std::to_string(cube.width));
    }
    cube = standardize(cube);

    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    if (ec) throw IoError("cannot create directory " + args.out_dir + ": " + ec.message());

    const std::string best_path = (fs::path(args.out_dir) / "best.pdc1").string();
    const std::string last_path = (fs::path(args.out_dir) / "last.pdc1").string();
    const std::string split_path = (fs::path(args.out_dir) / "split.json").string();
    const std::string history_path = (fs::path(args.out_dir) / "history.jsonl").string();

    TrainResult result;
    DatasetSplit split;
    if (args.resume) {
        // The stored hyperparameters win on resume; only the epoch target is
        // taken from the config file, so a run can be extended.
        const Checkpoint from = load_checkpoint(last_path);
        split = split_from_json_file(split_path);
        TrainConfig cfg = from.cfg;
        cfg.epochs = run_cfg.train.epochs;
        result = resume_train(cube, labels, split, cfg, from);
    } else {
        TrainConfig cfg = run_cfg.train;
        cfg.seed = resolve_seed(args.seed, cfg.seed);
        cfg.backbone.d = cube.bands;
        cfg.backbone.k_cls = labels.num_classes;
        validate(cfg);
        validate(cfg.loss);

        split = stratified_split(labels, run_cfg.ratios, cfg.seed);
        write_text(split_path, split_to_json(split).dump() + "\n");
        write_text((fs::path(args.out_dir) / "run_config.json").string(),
                   train_config_to_json(cfg).dump(2) + "\n");
        result = train(cube, labels, split, cfg);
    }

    save_checkpoint(result.last, last_path);
    if (result.selected_is_fresh) {
        save_checkpoint(result.selected, best_path);
    } else if (fs::exists(best_path)) {
        // The pre-resume best still stands. Its payload is untouched, but the
        // stored epoch target moves to the extended one so a resumed run
        // leaves the directory byte-identical to an uninterrupted run.
        Checkpoint best = load_checkpoint(best_path);
        best.cfg.epochs = result.last.cfg.epochs;
        save_checkpoint(best, best_path);
    }
    append_history(history_path, result.history, !args.resume);

    json out;
    out["out"] = args.out_dir;
    out["epochs_done"] = result.last.epochs_done;
    out["best_epoch"] = result.last.best_epoch;
    out["best_val_oa"] = result.last.best_val_oa < 0
                             ? json(nullptr)
                             : json(result.last.best_val_oa);
    out["train_loss_last"] =
        result.history.empty() ? json(nullptr) : json(result.history.back().train_loss);
    out["checkpoint"] = result.selected_is_fresh ? best_path : last_path;
    std::printf("%s\n", out.dump().c_str());
    return 0;
}

struct EvalArgs {
    std::string checkpoint_path;
    std::string cube_path;
    std::string labels_path;
    std::string split_name;
};

int cmd_eval(const EvalArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.checkpoint_path);
    HsiCube cube = load_cube(args.cube_path);
    const LabelMap labels = load_labels(args.labels_path);
    if (ckpt.cfg.backbone.d != cube.bands) {
        throw ArgumentError("checkpoint expects " + std::to_string(ckpt.cfg.backbone.d) +
                            " bands but the cube has " + std::to_string(cube.bands));
    }
    cube = standardize(cube);

    // Membership comes from the split record written at train time; the
    // evaluator never re-splits.
    const std::string split_path =
        (fs::path(args.checkpoint_path).parent_path() / "split.json").string();
    const DatasetSplit split = split_from_json_file(split_path);
    const std::vector<PixelCoord>* coords = nullptr;
    if (args.split_name == "val") {
        coords = &split.val;
    } else if (args.split_name == "test") {
        coords = &split.test;
    } else {
        throw ArgumentError("--split must be val or test, got '" + args.split_name + "'");
    }
    if (coords->empty()) {
        throw ArgumentError("split '" + args.split_name + "' holds no pixels");
    }

    const auto [cm, metrics] = evaluate(ckpt.params, ckpt.cfg.backbone, cube, labels, *coords);
    print_metrics_table(cm, metrics);
    std::printf("%s\n", metrics_to_json(metrics).dump().c_str());
    return 0;
}

struct PredictMapArgs {
    std::string checkpoint_path;
    std::string cube_path;
    std::string out_path;
};

int cmd_predict_map(const PredictMapArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.checkpoint_path);
    HsiCube cube = load_cube(args.cube_path);
    if (ckpt.cfg.backbone.d != cube.bands) {
        throw ArgumentError("checkpoint expects " + std::to_string(ckpt.cfg.backbone.d) +
                            " bands but the cube has " + std::to_string(cube.bands));
    }
    cube = standardize(cube);
    validate_params(ckpt.params, ckpt.cfg.backbone);

    std::vector<PixelCoord> coords;
    coords.reserve(cube.height * cube.width);
    for (std::size_t y = 0; y < cube.height; ++y) {
        for (std::size_t x = 0; x < cube.width; ++x) coords.emplace_back(y, x);
    }
    const std::vector<std::uint16_t> pred =
        predict_coords(ckpt.params, ckpt.cfg.backbone, cube, coords);

    const std::vector<Rgb> palette = default_palette(ckpt.cfg.backbone.k_cls + 1);
    const std::vector<unsigned char> ppm =
        render_map(pred, cube.height, cube.width, palette);
    write_bytes(args.out_path, ppm.data(), ppm.size());

    json out;
    out["out"] = args.out_path;
    out["height"] = cube.height;
    out["width"] = cube.width;
    out["classes"] = ckpt.cfg.backbone.k_cls;
    std::printf("%s\n", out.dump().c_str());
    return 0;
}

struct GradcheckArgs {
    std::string config_path;
    double eps = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& args) {
    RunConfig run_cfg = parse_run_config(read_text_file(args.config_path));
    TrainConfig cfg = run_cfg.train;
    cfg.seed = resolve_seed(std::nullopt, cfg.seed);
    validate(cfg.loss);

    // A small fixed scene is enough to probe every parameter tag; boundary
    // mixing and a little noise keep the variance head away from its floor.
    SynthConfig scene;
    scene.classes = 3;
    scene.height = 12;
    scene.width = 12;
    scene.bands = 8;
    scene.tiles_y = 2;
    scene.tiles_x = 2;
    scene.seed = cfg.seed;
    scene.noise = 0.05;
    scene.mixing_width = 1;
    auto [cube, labels] = synth_cube(scene);
    cube = standardize(cube);

    cfg.backbone.d = scene.bands;
    cfg.backbone.k_cls = scene.classes;
    validate(cfg);

    // Two patches with different center classes, away from the raster edge.
    const std::vector<PixelCoord> coords{{2, 2}, {2, 8}};
    const PatchBatch batch = gather_batch(cube, labels, coords, cfg.backbone.s);

    ParamStore params;
    Rng init_rng(mix_seed(cfg.seed, 1));
    init_params(params, cfg.backbone, init_rng);

    const LossConfig loss_cfg = cfg.loss;
    const BackboneConfig bb = cfg.backbone;
    const LapIndex lap = lap_index(bb.s);
    const LossProgram program = [loss_cfg, bb, lap](Tape& tape, const PatchBatch& b,
                                                    Rng& rng) {
        return build_batch_loss(tape, bb, b, lap, loss_cfg, rng).total;
    };
    const RngState noise_state = Rng(mix_seed(cfg.seed, 2)).state();

    const FiniteDiffReport report =
        finite_diff_check(program, params, batch, noise_state, args.eps, 200, cfg.seed);

    json out;
    out["max_rel_err"] = report.max_rel_err;
    out["worst_param"] = report.worst_param;
    out["worst_coord"] = report.worst_coord;
    out["worst_tag"] = report.worst_tag();
    out["coords_checked"] = report.coords_checked;
    out["coords_skipped"] = report.coords_skipped;
    out["eps"] = args.eps;
    json per_tag;
    for (const auto& [tag, err] : report.per_tag) per_tag[tag] = err;
    out["per_tag"] = per_tag;
    const bool ok = report.max_rel_err < 1e-4;
    out["pass"] = ok;
    std::printf("%s\n", out.dump().c_str());
    return ok ? 0 : 1;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"Patch-based hyperspectral pixel classification with "
                 "probabilistic embeddings"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic labeled cube");
    synth->add_option("--out", synth_args.out_dir, "Output directory")->required();
    synth->add_option("--classes", synth_args.cfg.classes, "Number of classes");
    synth->add_option("--size", synth_args.size_text, "Raster size HxW");
    synth->add_option("--bands", synth_args.cfg.bands, "Spectral bands");
    synth->add_option("--seed", synth_args.seed, "Generator seed");
    synth->add_option("--mixing", synth_args.cfg.mixing_width,
                      "Boundary mixing radius in pixels");
    synth->add_option("--noise", synth_args.cfg.noise, "White-noise standard deviation");
    synth->add_option("--tiles", synth_args.tiles_text, "Class tile grid TYxTX");

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--cube", train_args.cube_path, "HSC1 cube")->required();
    train_cmd->add_option("--labels", train_args.labels_path, "HSL1 label map")->required();
    train_cmd->add_option("--config", train_args.config_path, "Run config JSON")->required();
    train_cmd->add_option("--out", train_args.out_dir, "Run directory")->required();
    train_cmd->add_option("--seed", train_args.seed, "Seed override");
    train_cmd->add_flag("--resume", train_args.resume,
                        "Continue from the run directory's last checkpoint");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint_path, "PDC1 checkpoint")
        ->required();
    eval_cmd->add_option("--cube", eval_args.cube_path, "HSC1 cube")->required();
    eval_cmd->add_option("--labels", eval_args.labels_path, "HSL1 label map")->required();
    eval_cmd->add_option("--split", eval_args.split_name, "val or test")->required();

    PredictMapArgs map_args;
    CLI::App* map_cmd = app.add_subcommand("predict-map", "Render a classification map");
    map_cmd->add_option("--checkpoint", map_args.checkpoint_path, "PDC1 checkpoint")
        ->required();
    map_cmd->add_option("--cube", map_args.cube_path, "HSC1 cube")->required();
    map_cmd->add_option("--out", map_args.out_path, "Output PPM path")->required();

    GradcheckArgs grad_args;
    CLI::App* grad_cmd =
        app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    grad_cmd->add_option("--config", grad_args.config_path, "Run config JSON")->required();
    grad_cmd->add_option("--eps", grad_args.eps, "Probe step size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_args);
        if (train_cmd->parsed()) return cmd_train(train_args);
        if (eval_cmd->parsed()) return cmd_eval(eval_args);
        if (map_cmd->parsed()) return cmd_predict_map(map_args);
        if (grad_cmd->parsed()) return cmd_gradcheck(grad_args);
        std::fprintf(stderr, "no subcommand\n");
        return 2;
    } catch (const ArgumentError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

}  // namespace pdml
