// Batch driver: simulate -> optimize -> train -> eval -> report.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <thread>

#include "multishot/multishot.hpp"

using namespace multishot;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    }
};

nlohmann::json toml_snapshot(const TomlTable& t) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : t.entries()) j[k] = v;
    return j;
}

// Deterministic parallel map over [0, n): results land by index, so the
// output is identical for any job count.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
    for (int w = 0; w < jobs; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::vector<double> parse_alphas(const std::string& csv) {
    std::vector<double> alphas;
    std::stringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        char* end = nullptr;
        const double a = std::strtod(cell.c_str(), &end);
        if (end == cell.c_str() || *end != '\0' || a <= 0.0)
            throw DataError("bad --alphas value: " + cell);
        alphas.push_back(a);
    }
    if (alphas.empty()) throw DataError("--alphas must name at least one threshold");
    return alphas;
}

BodyModel load_model(const std::string& model_path) {
    if (model_path.empty()) return default_body_model();
    std::ifstream in(model_path);
    if (!in) throw DataError("cannot open model file: " + model_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model json: ") + e.what());
    }
    return body_model_from_json(j);
}

int run_simulate(const std::string& config_path, const std::string& out,
                 std::uint64_t seed, int sequences_override, int jobs,
                 const std::string& model_path) {
    Timer timer;
    const TomlTable toml =
        config_path.empty() ? TomlTable::parse_string("") : TomlTable::parse_file(config_path);
    SimConfig cfg = sim_config_from_toml(toml);
    if (sequences_override > 0) cfg.sequences = sequences_override;
    const BodyModel model = load_model(model_path);

    SequenceDataset d;
    d.generator_config = sim_config_to_json(cfg, seed);
    d.sequences.resize(static_cast<size_t>(cfg.sequences));
    parallel_for(cfg.sequences, jobs,
                 [&](int i) { d.sequences[static_cast<size_t>(i)] =
                                  generate_sequence(model, cfg, seed, i); });
    write_dataset(d, out);

    RunManifest m;
    m.command = "simulate";
    m.config = d.generator_config;
    m.seed = seed;
    if (!config_path.empty()) m.inputs.push_back(config_path);
    m.outputs.push_back(out);
    m.wall_seconds = timer.seconds();
    write_manifest(out, m);
    std::cout << "wrote " << cfg.sequences << " sequences to " << out << "\n";
    return 0;
}

int run_optimize(const std::string& data_path, const std::string& mode_str,
                 const std::string& config_path, const std::string& out,
                 std::uint64_t seed, int jobs, const std::string& model_path) {
    Timer timer;
    const TomlTable toml =
        config_path.empty() ? TomlTable::parse_string("") : TomlTable::parse_file(config_path);
    SolverConfig cfg = solver_config_from_toml(toml);
    cfg.mode = fit_mode_from_string(mode_str);
    const BodyModel model = load_model(model_path);
    const SequenceDataset data = read_dataset(data_path);
    if (data.sequences.empty()) throw DataError("dataset is empty: " + data_path);

    std::vector<SequenceEstimate> estimates(data.sequences.size());
    parallel_for(static_cast<int>(data.sequences.size()), jobs, [&](int i) {
        const auto& seq = data.sequences[static_cast<size_t>(i)];
        const SequenceEstimate init = initialize_sequence(
            model, seq, cfg, substream(seed, static_cast<std::uint64_t>(i)));
        estimates[static_cast<size_t>(i)] = optimize_sequence(model, seq, cfg, init);
    });
    write_estimates(model, estimates, out);

    RunManifest m;
    m.command = "optimize";
    m.config = toml_snapshot(toml);
    m.config["mode"] = to_string(cfg.mode);
    m.seed = seed;
    m.inputs.push_back(data_path);
    if (!config_path.empty()) m.inputs.push_back(config_path);
    m.outputs.push_back(out);
    m.wall_seconds = timer.seconds();
    write_manifest(out, m);
    std::cout << "optimized " << estimates.size() << " sequences (" << to_string(cfg.mode)
              << ") to " << out << "\n";
    return 0;
}

int run_train(const std::string& data_path, const std::string& pseudo_path,
              const std::string& model_str, const std::string& config_path,
              const std::string& out, const std::string& curve_path,
              const std::string& init_weights_path, std::uint64_t seed, bool seed_set,
              const std::string& model_path) {
    Timer timer;
    const TomlTable toml =
        config_path.empty() ? TomlTable::parse_string("") : TomlTable::parse_file(config_path);
    TrainConfig cfg = train_config_from_toml(toml);
    if (seed_set) cfg.seed = seed;
    const ModelKind kind = model_kind_from_string(model_str);
    // The freeze contract is about the temporal stage; a single-frame run
    // must train its encoder unless explicitly told otherwise.
    if (kind == ModelKind::single_frame && !toml.has("train.freeze_encoder"))
        cfg.freeze_encoder = false;

    const BodyModel model = load_model(model_path);
    const SequenceDataset data = read_dataset(data_path);
    const auto pseudo = read_estimates(pseudo_path, model.joint_count - 1);
    if (pseudo.size() != data.sequences.size())
        throw DataError("pseudo ground truth covers " + std::to_string(pseudo.size()) +
                        " sequences, dataset has " + std::to_string(data.sequences.size()));

    TemporalModelWeights start;
    const TemporalModelWeights* start_ptr = nullptr;
    if (!init_weights_path.empty()) {
        start = read_weights(init_weights_path);
        start_ptr = &start;
    }
    const TrainResult result = train(model, data, pseudo, kind, cfg, start_ptr);
    write_weights(result.weights, out);
    if (!curve_path.empty()) write_loss_curve(result.curve, curve_path);

    RunManifest m;
    m.command = "train";
    m.config = toml_snapshot(toml);
    m.config["model"] = to_string(kind);
    m.seed = cfg.seed;
    m.inputs = {data_path, pseudo_path};
    if (!config_path.empty()) m.inputs.push_back(config_path);
    if (!init_weights_path.empty()) m.inputs.push_back(init_weights_path);
    m.outputs.push_back(out);
    if (!curve_path.empty()) m.outputs.push_back(curve_path);
    m.wall_seconds = timer.seconds();
    write_manifest(out, m);
    std::cout << "trained " << to_string(kind) << " for " << cfg.epochs << " epochs; final loss "
              << (result.curve.empty() ? 0.0 : result.curve.back().total) << "\n";
    return 0;
}

Eigen::Matrix3Xd estimate_joints(const BodyModel& model, const SequenceEstimate& est,
                                 size_t t) {
    return pose_joints(forward_kinematics(model, est.frames[t].theta_b, est.beta),
                       est.frames[t].r_gl, est.frames[t].t_gl);
}

int run_eval(const std::string& data_path, const std::string& estimates_path,
             const std::string& metric, const std::string& alphas_csv,
             const std::string& out, const std::string& model_path) {
    Timer timer;
    const BodyModel model = load_model(model_path);
    const SequenceDataset data = read_dataset(data_path);
    const auto estimates = read_estimates(estimates_path, model.joint_count - 1);
    if (estimates.size() != data.sequences.size())
        throw DataError("estimates cover " + std::to_string(estimates.size()) +
                        " sequences, dataset has " + std::to_string(data.sequences.size()));

    std::string csv;
    if (metric == "cross-shot-pck") {
        const std::vector<double> alphas = parse_alphas(alphas_csv);
        Eigen::MatrixXd hits;
        long pairs = 0;
        PckReport agg;
        agg.alphas = alphas;
        bool any = false;
        for (size_t s = 0; s < data.sequences.size(); ++s) {
            PckReport r;
            try {
                r = cross_shot_pck(model, estimates[s], data.sequences[s], alphas);
            } catch (const DataError&) {
                continue;  // sequence without usable boundaries
            }
            if (!any) {
                hits = r.per_joint * static_cast<double>(r.pairs) / 100.0;
                any = true;
            } else {
                hits += r.per_joint * static_cast<double>(r.pairs) / 100.0;
            }
            pairs += r.pairs;
        }
        if (!any) throw DataError("no shot boundaries with valid frames in " + data_path);
        agg.pairs = pairs;
        agg.per_joint = 100.0 * hits / static_cast<double>(pairs);
        agg.joints_evaluated = pairs * model.joint_count;
        agg.pck.resize(alphas.size());
        for (size_t a = 0; a < alphas.size(); ++a)
            agg.pck[a] = hits.row(static_cast<Eigen::Index>(a)).sum() /
                         static_cast<double>(pairs * model.joint_count) * 100.0;
        csv = pck_report_csv(agg);
    } else if (metric == "pck") {
        const std::vector<double> alphas = parse_alphas(alphas_csv);
        std::vector<long> hit(alphas.size(), 0);
        long total = 0, frames = 0;
        for (size_t s = 0; s < data.sequences.size(); ++s) {
            const auto& seq = data.sequences[s];
            for (size_t t = 0; t < seq.frames.size(); ++t) {
                if (!seq.frames[t].valid || !seq.frames[t].gt) continue;
                Eigen::Matrix2Xd gt2(2, model.joint_count);
                for (int j = 0; j < model.joint_count; ++j)
                    gt2.col(j) =
                        project_point(seq.frames[t].gt->joints_3d.col(j), seq.frames[t].camera);
                const Eigen::Matrix3Xd pred3 = estimate_joints(model, estimates[s], t);
                Eigen::Matrix2Xd pred2(2, model.joint_count);
                for (int j = 0; j < model.joint_count; ++j)
                    pred2.col(j) = pred3(2, j) > 1e-9
                                       ? project_point(pred3.col(j), seq.frames[t].camera)
                                       : Eigen::Vector2d(1e9, 1e9);
                const Eigen::Vector2d lo = gt2.rowwise().minCoeff();
                const Eigen::Vector2d hi = gt2.rowwise().maxCoeff();
                const double norm = std::max(hi.x() - lo.x(), hi.y() - lo.y());
                for (int j = 0; j < model.joint_count; ++j) {
                    const double err = (pred2.col(j) - gt2.col(j)).norm();
                    for (size_t a = 0; a < alphas.size(); ++a)
                        if (err <= alphas[a] * norm) ++hit[a];
                }
                total += model.joint_count;
                ++frames;
            }
        }
        if (total == 0) throw DataError("no valid frames with ground truth in " + data_path);
        std::ostringstream os;
        os << "alpha,pck,pairs\n";
        for (size_t a = 0; a < alphas.size(); ++a)
            os << format_double(alphas[a]) << ","
               << format_double(100.0 * hit[a] / static_cast<double>(total)) << "," << frames
               << "\n";
        csv = os.str();
    } else if (metric == "mpjpe" || metric == "pa-mpjpe") {
        double total = 0.0;
        long n = 0;
        for (size_t s = 0; s < data.sequences.size(); ++s) {
            const auto& seq = data.sequences[s];
            for (size_t t = 0; t < seq.frames.size(); ++t) {
                if (!seq.frames[t].valid || !seq.frames[t].gt) continue;
                const Eigen::Matrix3Xd pred = estimate_joints(model, estimates[s], t);
                total += metric == "mpjpe" ? mpjpe(pred, seq.frames[t].gt->joints_3d)
                                           : pa_mpjpe(pred, seq.frames[t].gt->joints_3d);
                ++n;
            }
        }
        if (n == 0) throw DataError("no valid frames with ground truth in " + data_path);
        csv = scalar_metric_csv(metric, total / static_cast<double>(n), n);
    } else {
        throw CLI::ValidationError("--metric", "unknown metric: " + metric);
    }

    write_file_atomic(out, csv);
    RunManifest m;
    m.command = "eval";
    m.config = {{"metric", metric}, {"alphas", alphas_csv}};
    m.inputs = {data_path, estimates_path};
    m.outputs.push_back(out);
    m.wall_seconds = timer.seconds();
    write_manifest(out, m);
    std::cout << csv;
    return 0;
}

int run_stats(const std::string& data_path, const std::string& mode_str,
              const std::string& out) {
    Timer timer;
    const SequenceDataset data = read_dataset(data_path);
    const TrackletMode mode = tracklet_mode_from_string(mode_str);
    const TrackletSet set = assemble_tracklets(data, mode);
    std::ostringstream os;
    os << "mode,tracklets_all,tracklets_long,frames_all,frames_long\n";
    os << mode_str << "," << set.stats.count_all << "," << set.stats.count_long << ","
       << set.stats.frames_all << "," << set.stats.frames_long << "\n";
    std::cout << os.str();
    if (!out.empty()) {
        write_file_atomic(out, os.str());
        RunManifest m;
        m.command = "stats";
        m.config = {{"mode", mode_str}};
        m.inputs = {data_path};
        m.outputs = {out};
        m.wall_seconds = timer.seconds();
        write_manifest(out, m);
    }
    return 0;
}

int run_compare(const std::string& report_a, const std::string& report_b,
                const std::string& label_a, const std::string& label_b,
                const std::string& out) {
    Timer timer;
    const CsvReport a = read_csv_report(report_a);
    const CsvReport b = read_csv_report(report_b);
    const std::string text = compare_reports(a, b, label_a, label_b);
    std::cout << text;
    if (!out.empty()) {
        write_file_atomic(out, text);
        RunManifest m;
        m.command = "compare";
        m.config = {{"label_a", label_a}, {"label_b", label_b}};
        m.inputs = {report_a, report_b};
        m.outputs = {out};
        m.wall_seconds = timer.seconds();
        write_manifest(out, m);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-shot 3D body recovery on synthetic data"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_path, mode, metric = "cross-shot-pck";
    std::string pseudo_path, estimates_path, model_kind, curve_path, init_weights_path;
    std::string report_a, report_b, label_a = "a", label_b = "b";
    std::string alphas = "0.05,0.1,0.2";
    std::string body_model_path;
    std::uint64_t seed = 0;
    int jobs = 1, sequences = 0;

    auto* sim = app.add_subcommand("simulate", "synthesize a multi-shot dataset");
    sim->add_option("--config", config_path, "TOML config ([motion], [shots], [sim])");
    sim->add_option("--out", out_path, "output dataset (json lines)")->required();
    sim->add_option("--seed", seed, "master seed");
    sim->add_option("--sequences", sequences, "override [sim].sequences");
    sim->add_option("--jobs", jobs, "parallel sequence generation");
    sim->add_option("--body-model", body_model_path, "body model json (default: built-in)");

    auto* opt = app.add_subcommand("optimize", "fit sequences by energy minimization");
    opt->add_option("--data", data_path, "dataset (json lines)")->required();
    opt->add_option("--mode", mode, "single-frame | single-shot | multi-shot")->required();
    opt->add_option("--config", config_path, "TOML config ([solver], [weights])");
    opt->add_option("--out", out_path, "output estimates json")->required();
    opt->add_option("--seed", seed, "seed for perturbed initialization");
    opt->add_option("--jobs", jobs, "parallel sequence fitting");
    opt->add_option("--body-model", body_model_path, "body model json");

    auto* tr = app.add_subcommand("train", "train a regressor on pseudo ground truth");
    tr->add_option("--data", data_path, "dataset (json lines)")->required();
    tr->add_option("--pseudo-gt", pseudo_path, "estimates json used as labels")->required();
    tr->add_option("--model", model_kind, "single-frame | transformer | conv")->required();
    tr->add_option("--config", config_path, "TOML config ([train])");
    tr->add_option("--out", out_path, "output weights json")->required();
    tr->add_option("--curve", curve_path, "loss curve csv");
    tr->add_option("--init-weights", init_weights_path, "warm start weights json");
    auto* seed_opt = tr->add_option("--seed", seed, "training seed");
    tr->add_option("--body-model", body_model_path, "body model json");

    auto* ev = app.add_subcommand("eval", "score estimates against a dataset");
    ev->add_option("--data", data_path, "dataset (json lines)")->required();
    ev->add_option("--estimates", estimates_path, "estimates json")->required();
    ev->add_option("--metric", metric, "pck | cross-shot-pck | mpjpe | pa-mpjpe");
    ev->add_option("--alphas", alphas, "comma-separated PCK thresholds");
    ev->add_option("--out", out_path, "output csv")->required();
    ev->add_option("--body-model", body_model_path, "body model json");

    auto* st = app.add_subcommand("stats", "tracklet statistics per assembly mode");
    st->add_option("--data", data_path, "dataset (json lines)")->required();
    st->add_option("--mode", mode, "single-shot | continuous-identity | multi-shot")
        ->required();
    st->add_option("--out", out_path, "optional output csv");

    auto* cmp = app.add_subcommand("compare", "paired comparison of two report csvs");
    cmp->add_option("--report-a", report_a, "first report csv")->required();
    cmp->add_option("--report-b", report_b, "second report csv")->required();
    cmp->add_option("--label-a", label_a, "name for the first report");
    cmp->add_option("--label-b", label_b, "name for the second report");
    cmp->add_option("--out", out_path, "optional output text file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (sim->parsed())
            return run_simulate(config_path, out_path, seed, sequences, jobs,
                                body_model_path);
        if (opt->parsed())
            return run_optimize(data_path, mode, config_path, out_path, seed, jobs,
                                body_model_path);
        if (tr->parsed())
            return run_train(data_path, pseudo_path, model_kind, config_path, out_path,
                             curve_path, init_weights_path, seed, seed_opt->count() > 0,
                             body_model_path);
        if (ev->parsed())
            return run_eval(data_path, estimates_path, metric, alphas, out_path,
                            body_model_path);
        if (st->parsed()) return run_stats(data_path, mode, out_path);
        if (cmp->parsed())
            return run_compare(report_a, report_b, label_a, label_b, out_path);
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
