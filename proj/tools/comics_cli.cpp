#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "comics/trainer.hpp"

namespace fs = std::filesystem;
using namespace comics;

namespace {

struct ConfigArgs {
    std::string file;
    std::vector<std::string> overrides;

    void add_to(CLI::App* app) {
        app->add_option("-c,--config", file, "flat key = value config file")->check(CLI::ExistingFile);
        app->add_option("--set", overrides, "key=value override (repeatable)");
    }

    TrainConfig load() const {
        KeyValueConfig kv = file.empty() ? KeyValueConfig{} : KeyValueConfig::load(file);
        for (const auto& o : overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + o + "'");
            kv.set(o.substr(0, eq), o.substr(eq + 1));
        }
        return train_config_from(kv);
    }
};

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    CLI::App app{"multi-face forgery detection toolkit"};
    app.require_subcommand(1);

    // gen-data
    ConfigArgs gen_cfg;
    int gen_count = 100, gen_first = 0;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-face dataset");
    gen_cfg.add_to(gen);
    gen->add_option("-n,--count", gen_count, "number of images")->check(CLI::PositiveNumber);
    gen->add_option("--first-id", gen_first, "id of the first image");
    gen->add_option("-o,--out", gen_out, "output directory")->required();

    // train
    ConfigArgs train_cfg;
    std::string train_data, train_out, train_resume;
    auto* tr = app.add_subcommand("train", "train a detector");
    train_cfg.add_to(tr);
    tr->add_option("-d,--data", train_data, "dataset directory or annotations json")->required();
    tr->add_option("-o,--out", train_out, "run directory (default: $COMICS_OUTPUT_DIR or runs/train)");
    tr->add_option("--resume", train_resume, "checkpoint to resume from")->check(CLI::ExistingFile);

    // eval
    ConfigArgs eval_cfg;
    std::string eval_data, eval_ckpt, eval_preds, eval_out, eval_dump;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or a predictions file");
    eval_cfg.add_to(ev);
    ev->add_option("-d,--data", eval_data, "dataset directory or annotations json")->required();
    auto* ck = ev->add_option("--checkpoint", eval_ckpt, "model checkpoint")->check(CLI::ExistingFile);
    auto* pr = ev->add_option("--predictions", eval_preds, "COCO results json instead of a model")
                   ->check(CLI::ExistingFile);
    ck->excludes(pr);
    ev->add_option("-o,--out", eval_out, "report path (default: <output dir>/report.json)");
    ev->add_option("--dump-predictions", eval_dump, "also write model predictions as COCO results json");

    // plot
    std::vector<std::string> plot_reports;
    std::string plot_out, plot_kind = "segmentation", plot_title;
    auto* pl = app.add_subcommand("plot", "AP vs oLRP scatter from report files");
    pl->add_option("reports", plot_reports, "label=report.json entries")->required();
    pl->add_option("-o,--out", plot_out, "output PNG")->required();
    pl->add_option("--kind", plot_kind, "segmentation or detection")
        ->check(CLI::IsMember({"segmentation", "detection"}));
    pl->add_option("--title", plot_title, "plot title");

    // ablate
    ConfigArgs abl_cfg;
    std::string abl_train, abl_test, abl_out;
    auto* ab = app.add_subcommand("ablate", "train and evaluate the 8-configuration toggle grid");
    abl_cfg.add_to(ab);
    ab->add_option("--train", abl_train, "training dataset")->required();
    ab->add_option("--test", abl_test, "test dataset")->required();
    ab->add_option("-o,--out", abl_out, "output directory (default: $COMICS_OUTPUT_DIR or runs/ablation)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const auto cfg = gen_cfg.load();
            const auto ds = generate_toy_dataset(cfg.data, gen_count, gen_first);
            save_manifest(ds, gen_out);
            std::cout << "wrote " << ds.size() << " images, " << ds.face_count() << " faces (" << ds.fake_count()
                      << " fake) to " << gen_out << "\n";
        } else if (*tr) {
            const auto cfg = train_cfg.load();
            const auto ds = load_manifest(train_data);
            const fs::path out = train_out.empty() ? output_directory("runs/train") : fs::path(train_out);
            TrainOptions opts{out, std::nullopt, [](const StepLog& s) {
                                  if (s.step % 10 == 0)
                                      std::cout << "step " << s.step << " epoch " << s.epoch << " lr " << s.lr
                                                << " total " << s.total << "\n";
                              }};
            if (!train_resume.empty()) opts.resume = fs::path(train_resume);
            fs::create_directories(out);
            std::ofstream(out / "config.cfg") << to_key_values(cfg).serialize();
            const auto result = train(cfg, ds, opts);
            if (result.halted) {
                std::cerr << "halted: " << result.halt_reason << "\n";
                return 2;
            }
            std::cout << "checkpoint: " << result.final_checkpoint.string() << "\n";
        } else if (*ev) {
            const auto cfg = eval_cfg.load();
            const auto ds = load_manifest(eval_data);
            std::vector<Detection> dets;
            if (!eval_preds.empty()) {
                dets = detections_from_json(read_json(eval_preds));
            } else if (!eval_ckpt.empty()) {
                auto model = load_detector(eval_ckpt, cfg);
                torch::NoGradGuard no_grad;
                dets = predict_dataset(model, ds, cfg.batch_size);
                if (!eval_dump.empty()) write_json(eval_dump, detections_to_json(dets));
            } else {
                throw std::invalid_argument("eval needs --checkpoint or --predictions");
            }
            const auto report = report_to_json(evaluate_predictions(dets, ground_truth_of(ds)));
            const fs::path out = eval_out.empty() ? output_directory("runs") / "report.json" : fs::path(eval_out);
            write_json(out, report);
            std::cout << report.dump(2) << "\n";
        } else if (*pl) {
            std::vector<ScatterPoint> points;
            for (const auto& entry : plot_reports) {
                const auto eq = entry.find('=');
                const std::string label = eq == std::string::npos ? fs::path(entry).stem().string() : entry.substr(0, eq);
                const fs::path file = eq == std::string::npos ? fs::path(entry) : fs::path(entry.substr(eq + 1));
                const auto j = read_json(file);
                const auto& block = j.at(plot_kind);
                points.push_back({label, block.at("AP").get<double>(), block.at("oLRP").get<double>()});
            }
            plot_scatter(points, plot_out, plot_title.empty() ? plot_kind + " AP vs oLRP" : plot_title);
            std::cout << "wrote " << plot_out << "\n";
        } else if (*ab) {
            const auto cfg = abl_cfg.load();
            const auto train_set = load_manifest(abl_train);
            const auto test_set = load_manifest(abl_test);
            const fs::path out = abl_out.empty() ? output_directory("runs/ablation") : fs::path(abl_out);
            const auto rows = run_ablation(cfg, train_set, test_set, out);
            for (const auto& r : rows)
                std::cout << r.name << ": seg AP " << report_round(r.report.segmentation.ap) << " oLRP "
                          << report_round(r.report.segmentation.olrp) << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
