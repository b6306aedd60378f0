// pointbox: generate synthetic crowds, train point-supervised detectors,
// evaluate them and render reports.
//
// Exit codes: 0 success, 2 usage/config/data errors, 3 numeric failure.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pointbox/error.hpp"
#include "pointbox/evalmetrics.hpp"
#include "pointbox/parallel.hpp"
#include "pointbox/report.hpp"
#include "pointbox/synthcrowd.hpp"
#include "pointbox/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pointbox;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

std::string hash_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        // Translate the byte offset into line/column.
        std::size_t line = 1;
        std::size_t col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw FormatError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
    }
}

void write_manifest(const fs::path& dir, const std::string& command_line, const json& config, std::uint64_t seed,
                    const json& artifacts) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    json m{{"command_line", command_line},
           {"config", config},
           {"config_hash", hash_hex(config.dump())},
           {"seed", seed},
           {"artifacts", artifacts},
           {"created", stamp}};
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

std::vector<TrainingScene> load_training_set(const fs::path& dir) {
    std::vector<TrainingScene> scenes;
    for (const auto& id : list_scene_ids(dir)) {
        scenes.push_back(load_training_scene(dir, id));
    }
    return scenes;
}

double parse_ratio(const std::string& s) {
    if (s == "inf" || s == "infinity") {
        return std::numeric_limits<double>::infinity();
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !(v > 0)) {
            throw ConfigError("");
        }
        return v;
    } catch (const std::exception&) {
        throw ConfigError("--r must be a positive number or \"inf\", got \"" + s + "\"");
    }
}

std::string ratio_label(double r) {
    if (std::isinf(r)) {
        return "inf";
    }
    std::ostringstream os;
    os << r;
    return os.str();
}

// ---------------------------------------------------------------- gen

struct GenArgs {
    std::string spec;
    std::string out;
    std::size_t count = 120;
    std::optional<std::uint64_t> seed;
};

int cmd_gen(const GenArgs& args, const std::string& command_line) {
    SceneSpec spec;
    if (!args.spec.empty()) {
        try {
            from_json(read_json_file(args.spec), spec);
        } catch (const json::exception& e) {
            throw FormatError(args.spec + ": " + e.what());
        }
    }
    if (args.seed) {
        spec.seed = *args.seed;
    }
    spec.validate();
    const fs::path out = args.out;
    fs::create_directories(out);
    std::vector<std::string> ids(args.count);
    std::vector<Scene> scenes(args.count);
    parallel_for(args.count, [&](std::size_t i) { scenes[i] = generate_scene(spec, i); });
    for (std::size_t i = 0; i < args.count; ++i) {
        save_scene(scenes[i], out);
        ids[i] = scenes[i].id;
    }
    json spec_json = spec;
    write_manifest(out, command_line, spec_json, spec.seed, json{{"scenes", ids}});
    std::cout << "wrote " << args.count << " scenes to " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string data;
    std::string config;
    std::string variant;
    std::string out;
    std::optional<int> epochs;
    bool size_diagnostics = false;
};

int cmd_train(const TrainArgs& args, const std::string& command_line) {
    const fs::path data = args.data;
    if (!fs::is_directory(data)) {
        throw ConfigError("dataset directory not found: " + data.string());
    }
    TrainConfig config = TrainConfig::desk_scale();
    if (!args.config.empty()) {
        from_json(read_json_file(args.config), config);
    }
    if (!args.variant.empty()) {
        config.variant = parse_variant(args.variant);
    }
    if (args.epochs) {
        config.epochs = *args.epochs;
    }
    config.validate();

    auto split = split_dataset(load_training_set(data), config.val_fraction);
    if (split.train.empty()) {
        throw ConfigError("no training scenes in " + data.string());
    }
    std::cout << "train " << to_string(config.variant) << ": " << split.train.size() << " train / "
              << split.val.size() << " val scenes, " << NetParams<float>::zeros().parameter_count()
              << " parameters\n";

    EpochObserver observer;
    TruthBoxes truth;
    double height = static_cast<double>(split.train.front().image.rows());
    if (args.size_diagnostics) {
        // Evaluation-side read; the trainer only ever sees the observer's result.
        for (const auto& s : split.train) {
            truth[s.id] = load_scene_annotations(data, s.id).true_boxes;
        }
        observer = [&](int, const PseudoStore& pseudo) -> std::optional<double> {
            return pseudo_size_error(pseudo, truth, height).median_all;
        };
    }

    const RunResult result = run(config, split, observer);

    const fs::path out = args.out;
    fs::create_directories(out);
    save_model(out / "checkpoint.bin", result.best_model);
    save_model(out / "final.bin", result.final_model);
    write_text(out / "history.csv", history_csv(result.history));
    write_text(out / "loss_log.csv", loss_log_csv(result.loss_rows));
    json pseudo = history_json(result.pseudo);
    write_text(out / "pseudo_gt.json", pseudo.dump() + "\n");
    write_text(out / "folds.json", folds_json(result.folds, result.scores).dump(2) + "\n");
    write_text(out / "anchors.json", json(result.best_model.specs).dump(2) + "\n");
    json config_json = config;
    write_text(out / "config.json", config_json.dump(2) + "\n");

    json val_ids = json::array();
    for (const auto& s : split.val) {
        val_ids.push_back(s.id);
    }
    json run_info{{"data", fs::absolute(data).string()},
                  {"best_epoch", result.best_epoch},
                  {"best_val_mae", result.best_val_mae},
                  {"val_ids", val_ids}};
    write_text(out / "run.json", run_info.dump(2) + "\n");
    write_manifest(out, command_line, config_json, config.seed,
                   json{{"checkpoint", "checkpoint.bin"},
                        {"final", "final.bin"},
                        {"history", "history.csv"},
                        {"loss_log", "loss_log.csv"},
                        {"pseudo_gt", "pseudo_gt.json"},
                        {"folds", "folds.json"},
                        {"anchors", "anchors.json"},
                        {"run", "run.json"}});
    std::cout << "best epoch " << result.best_epoch << " (val MAE " << result.best_val_mae << ")\n";
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string data;
    std::string checkpoint;
    double c = 20.0;
    std::string r = "1.0";
    std::string out;
    std::string split = "val";
    double val_fraction = 0.2;
    double confidence = 0.8;
    double min_score = 0.05;
    bool per_scale_nms = false;
};

int cmd_eval(const EvalArgs& args, const std::string& command_line) {
    const fs::path data = args.data;
    if (!fs::is_directory(data)) {
        throw ConfigError("dataset directory not found: " + data.string());
    }
    if (!(args.c > 0)) {
        throw ConfigError("--c must be positive");
    }
    const double r = parse_ratio(args.r);
    const Model model = load_model(args.checkpoint);

    std::vector<TrainingScene> scenes;
    bool includes_train = false;
    for (const auto& id : list_scene_ids(data)) {
        const bool val = is_validation_id(id, args.val_fraction);
        if (args.split == "all" || (args.split == "val" && val) || (args.split == "train" && !val)) {
            scenes.push_back(load_training_scene(data, id));
            includes_train = includes_train || !val;
        }
    }
    if (args.split != "val" && args.split != "train" && args.split != "all") {
        throw ConfigError("--split must be val, train or all");
    }
    if (includes_train) {
        std::cerr << "warning: evaluating on training images; metrics are optimistic (leakage)\n";
    }

    EvalProtocol protocol;
    protocol.c = args.c;
    protocol.r = r;
    protocol.confidence = args.confidence;
    PredictOptions options;
    options.min_score = std::min(args.min_score, args.confidence);
    options.per_scale_nms = args.per_scale_nms;

    const Evaluation ev = evaluate(model, scenes, protocol, options);

    const fs::path out = args.out;
    fs::create_directories(out);
    std::vector<MetricRow> rows;
    for (double ratio : {r, std::numeric_limits<double>::infinity()}) {
        EvalProtocol p = protocol;
        p.r = ratio;
        const PrCurve curve = average_precision(ev.images, p);
        std::ostringstream label;
        label << "c" << args.c << "_r" << ratio_label(ratio);
        rows.push_back({label.str(), "AP", curve.ap});
        rows.push_back({label.str(), "good", static_cast<double>(curve.good)});
        rows.push_back({label.str(), "good_disjunctive", static_cast<double>(curve.good_disjunctive)});
        std::ostringstream pr;
        pr << "recall,precision\n";
        for (std::size_t i = 0; i < curve.recall.size(); ++i) {
            pr << curve.recall[i] << ',' << curve.precision[i] << '\n';
        }
        write_text(out / ("pr_" + label.str() + ".csv"), pr.str());
        if (std::isinf(r)) {
            break;
        }
    }
    rows.push_back({"count", "MAE", ev.count_errors.mae});
    rows.push_back({"count", "MSE", ev.count_errors.mse});
    for (std::size_t level = 0; level < ev.game.size(); ++level) {
        rows.push_back({"count", "GAME" + std::to_string(level), ev.game[level]});
    }
    write_text(out / "results.csv", results_csv(rows));
    json cfg{{"c", args.c},         {"r", ratio_label(r)},        {"confidence", args.confidence},
             {"split", args.split}, {"val_fraction", args.val_fraction}, {"checkpoint", args.checkpoint},
             {"data", fs::absolute(data).string()}};
    write_manifest(out, command_line, cfg, 0, json{{"results", "results.csv"}});
    for (const auto& row : rows) {
        std::cout << row.protocol << ' ' << row.metric << ' ' << row.value << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------- report

std::vector<double> to_doubles(const std::vector<std::string>& cells) {
    std::vector<double> out;
    for (const auto& c : cells) {
        out.push_back(c.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(c));
    }
    return out;
}

// Median pseudo-GT size error per epoch, replayed from the per-head trails.
Series size_error_series(const fs::path& run_dir, const std::string& label) {
    const json info = read_json_file(run_dir / "run.json");
    const fs::path data = info.at("data").get<std::string>();
    const json trails = read_json_file(run_dir / "pseudo_gt.json");
    const auto history = read_csv_columns(run_dir / "history.csv");
    const int epochs = static_cast<int>(history.at("epoch").size());

    TruthBoxes truth;
    PseudoStore store;
    double height = 0;
    for (const auto& [id, heads] : trails.items()) {
        const Scene annotated = load_scene_annotations(data, id);
        truth[id] = annotated.true_boxes;
        std::vector<PseudoGT> entries;
        for (const auto& h : heads) {
            PseudoGT e;
            e.point = {h.at("point").at(0).get<double>(), h.at("point").at(1).get<double>()};
            e.cap = h.at("cap").get<double>();
            for (const auto& rec : h.at("history")) {
                e.history.push_back({rec.at(0).get<int>(), rec.at(1).get<double>(), rec.at(2).get<double>()});
            }
            entries.push_back(std::move(e));
        }
        store.insert(id, std::move(entries));
        if (height == 0) {
            height = static_cast<double>(read_pgm(data / (id + ".pgm")).rows());
        }
    }
    Series s{label, {}, {}};
    for (int epoch = 0; epoch <= epochs; ++epoch) {
        PseudoStore at = store;
        for (const auto& [id, entries] : store.all()) {
            auto& dst = at.at(id);
            for (std::size_t i = 0; i < entries.size(); ++i) {
                SizeRecord last = entries[i].history.front();
                for (const auto& rec : entries[i].history) {
                    if (rec.epoch <= epoch) {
                        last = rec;
                    }
                }
                dst[i].box = {entries[i].point.x, entries[i].point.y, last.w, last.h};
            }
        }
        s.x.push_back(epoch);
        s.y.push_back(pseudo_size_error(at, truth, height).median_all);
    }
    return s;
}

int cmd_report(const std::string& run_arg, const std::string& out_arg, const std::string& command_line) {
    const fs::path run_dir = run_arg;
    std::vector<fs::path> runs;
    if (fs::exists(run_dir / "history.csv")) {
        runs.push_back(run_dir);
    }
    if (fs::is_directory(run_dir)) {
        for (const auto& e : fs::directory_iterator(run_dir)) {
            if (e.is_directory() && fs::exists(e.path() / "history.csv")) {
                runs.push_back(e.path());
            }
        }
    }
    std::sort(runs.begin(), runs.end());
    if (runs.empty()) {
        throw ConfigError("no history.csv found under " + run_dir.string());
    }
    const fs::path out = out_arg;
    fs::create_directories(out);

    VariantTable table;
    std::vector<Series> loss_series;
    std::vector<Series> mae_series;
    std::vector<Series> pr_series;
    std::vector<Series> size_series;
    for (const auto& dir : runs) {
        const auto h = read_csv_columns(dir / "history.csv");
        const std::string variant = h.at("variant").empty() ? dir.filename().string() : h.at("variant").front();
        const std::string label = runs.size() > 1 ? variant + " (" + dir.filename().string() + ")" : variant;
        const auto epochs = to_doubles(h.at("epoch"));
        auto cls = to_doubles(h.at("cls"));
        const auto reg = to_doubles(h.at("reg"));
        std::vector<double> total(cls.size());
        for (std::size_t i = 0; i < cls.size(); ++i) {
            total[i] = cls[i] + reg[i];
        }
        loss_series.push_back({label + " total", epochs, total});
        const auto mae = to_doubles(h.at("val_mae"));
        mae_series.push_back({label, epochs, mae});

        auto& row = table[label];
        row["epochs"] = static_cast<double>(epochs.size());
        if (!mae.empty()) {
            row["best_val_mae"] = *std::min_element(mae.begin(), mae.end());
        }
        const fs::path results = dir / "eval" / "results.csv";
        if (fs::exists(results)) {
            for (const auto& m : read_results_csv(results)) {
                row[m.protocol == "count" ? m.metric : m.metric + "@" + m.protocol] = m.value;
            }
            for (const auto& e : fs::directory_iterator(dir / "eval")) {
                const auto name = e.path().filename().string();
                if (name.starts_with("pr_") && e.path().extension() == ".csv") {
                    const auto pr = read_csv_columns(e.path());
                    pr_series.push_back({label + " " + e.path().stem().string().substr(3),
                                         to_doubles(pr.at("recall")), to_doubles(pr.at("precision"))});
                }
            }
        }
        if (fs::exists(dir / "run.json") && fs::exists(dir / "pseudo_gt.json")) {
            try {
                auto s = size_error_series(dir, label);
                row["pseudo_size_err_initial"] = s.y.front();
                row["pseudo_size_err_final"] = s.y.back();
                size_series.push_back(std::move(s));
            } catch (const Error& e) {
                std::cerr << "warning: no size-error curve for " << dir << ": " << e.what() << "\n";
            }
        }
    }

    write_text(out / "loss_curves.svg", svg_plot("Training loss", "epoch", "cls + reg", loss_series));
    write_text(out / "val_mae.svg", svg_plot("Validation MAE", "epoch", "MAE", mae_series));
    write_text(out / "pr_curves.svg", svg_plot("Precision-recall", "recall", "precision", pr_series));
    write_text(out / "pseudo_size_error.svg",
               svg_plot("Pseudo box size error", "epoch", "median relative error", size_series));
    write_text(out / "variants.csv", variant_table_csv(table));
    write_text(out / "variants.md", variant_table_markdown(table));
    write_manifest(out, command_line, json{{"run", fs::absolute(run_dir).string()}}, 0,
                   json{{"loss_curves", "loss_curves.svg"},
                        {"val_mae", "val_mae.svg"},
                        {"pr_curves", "pr_curves.svg"},
                        {"pseudo_size_error", "pseudo_size_error.svg"},
                        {"variants_csv", "variants.csv"},
                        {"variants_md", "variants.md"}});
    std::cout << variant_table_markdown(table);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    std::string command_line;
    for (int i = 0; i < argc; ++i) {
        command_line += (i ? " " : "") + std::string(argv[i]);
    }

    CLI::App app{"pointbox: point-supervised crowd detection"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic crowd dataset");
    gen_cmd->add_option("--spec", gen.spec, "Scene spec JSON (defaults when omitted)");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--count", gen.count, "Number of scenes");
    gen_cmd->add_option("--seed", gen.seed, "Override the spec seed");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train a detector on point annotations");
    train_cmd->add_option("--data", train.data, "Dataset directory")->required();
    train_cmd->add_option("--config", train.config, "Training config JSON");
    train_cmd->add_option("--variant", train.variant, "Pv0, Pv1, Pv2 or Pv3");
    train_cmd->add_option("--out", train.out, "Run output directory")->required();
    train_cmd->add_option("--epochs", train.epochs, "Override the configured epoch count");
    train_cmd->add_flag("--size-diagnostics", train.size_diagnostics,
                        "Fill the history's pseudo_size_err column from the dataset's true boxes");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--data", eval.data, "Dataset directory")->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--c", eval.c, "Center-distance threshold (pixels)");
    eval_cmd->add_option("--r", eval.r, "Size ratio, or \"inf\" for localization only");
    eval_cmd->add_option("--out", eval.out, "Output directory")->required();
    eval_cmd->add_option("--split", eval.split, "val, train or all");
    eval_cmd->add_option("--val-fraction", eval.val_fraction, "Validation fraction used at training time");
    eval_cmd->add_option("--confidence", eval.confidence, "Counting confidence threshold");
    eval_cmd->add_option("--min-score", eval.min_score, "Lowest score kept for PR curves");
    eval_cmd->add_flag("--per-scale-nms", eval.per_scale_nms, "Suppress within each scale before pooling");

    std::string report_run;
    std::string report_out;
    auto* report_cmd = app.add_subcommand("report", "Render plots and tables for finished runs");
    report_cmd->add_option("--run", report_run, "Run directory (or a directory of runs)")->required();
    report_cmd->add_option("--out", report_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*gen_cmd) return cmd_gen(gen, command_line);
        if (*train_cmd) return cmd_train(train, command_line);
        if (*eval_cmd) return cmd_eval(eval, command_line);
        if (*report_cmd) return cmd_report(report_run, report_out, command_line);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
