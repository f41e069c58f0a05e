#include "gradselect/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "gradselect/model_io.hpp"
#include "gradselect/rng.hpp"

namespace gradselect {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 0xA1;       // full-run initialization
constexpr std::uint64_t kRetrainInitStream = 0xA2;
constexpr std::uint64_t kLimitStream = 0x11;

std::string fmt_fraction(double f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", f);
    return buf;
}

// Incremental stage manifest, rewritten after every stage so a failed run
// leaves a record of what completed.
class Manifest {
public:
    explicit Manifest(std::string path) : path_(std::move(path)) {}

    template <typename Fn>
    void run_stage(const std::string& name, Fn&& fn) {
        auto t0 = std::chrono::steady_clock::now();
        try {
            fn();
        } catch (const std::exception& e) {
            record(name, "failed", seconds_since(t0));
            flush(false);
            throw std::runtime_error(name + ": " + e.what());
        }
        record(name, "ok", seconds_since(t0));
        flush(false);
    }

    void finish() { flush(true); }

private:
    static double seconds_since(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    }

    void record(const std::string& name, const std::string& status, double secs) {
        rows_.emplace_back(name, status, secs);
    }

    void flush(bool complete) {
        std::ofstream out(path_);
        if (!out) return;  // manifest is best effort
        out << "stage\tstatus\twall_s\n";
        char buf[32];
        for (const auto& [name, status, secs] : rows_) {
            std::snprintf(buf, sizeof(buf), "%.3f", secs);
            out << name << '\t' << status << '\t' << buf << "\n";
        }
        out << "complete\t" << (complete ? "true" : "false") << "\t-\n";
    }

    std::string path_;
    std::vector<std::tuple<std::string, std::string, double>> rows_;
};

}  // namespace

void ExperimentConfig::validate() const {
    if (policies.empty()) throw std::invalid_argument("config: no policies");
    if (repeat_seeds.empty()) throw std::invalid_argument("config: no repeat seeds");
    if (fractions.empty()) throw std::invalid_argument("config: no fractions");
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (fractions[i] <= 0.0 || fractions[i] > 1.0) {
            throw std::invalid_argument("config: fractions must lie in (0,1]");
        }
        if (i > 0 && fractions[i] < fractions[i - 1]) {
            throw std::invalid_argument("config: fractions must be ascending");
        }
    }
    if (output_dir.empty()) throw std::invalid_argument("config: empty output dir");
}

ExperimentConfig experiment_config_from_kv(const KvConfig& kv) {
    ExperimentConfig cfg;

    std::string kind = kv.get("data.kind", "synth");
    if (kind == "idx") {
        cfg.data.kind = DataSource::Kind::Idx;
    } else if (kind == "csv") {
        cfg.data.kind = DataSource::Kind::Csv;
    } else if (kind == "synth") {
        cfg.data.kind = DataSource::Kind::Synth;
    } else {
        throw std::runtime_error("config: unknown data.kind " + kind);
    }
    cfg.data.dir = kv.get("data.dir", default_data_dir());
    cfg.data.train_images = kv.get("data.train_images", cfg.data.train_images);
    cfg.data.train_labels = kv.get("data.train_labels", cfg.data.train_labels);
    cfg.data.test_images = kv.get("data.test_images", cfg.data.test_images);
    cfg.data.test_labels = kv.get("data.test_labels", cfg.data.test_labels);
    cfg.data.train_csv = kv.get("data.train_csv", "");
    cfg.data.test_csv = kv.get("data.test_csv", "");
    cfg.data.limit_train = static_cast<std::size_t>(kv.get_int("data.limit_train", 0));
    cfg.data.limit_seed = kv.get_seed("data.limit_seed", 0);

    std::string skind = kv.get("data.synth.kind", "redundant");
    SynthSpec sp = skind == "diverse"
                       ? SynthSpec::diverse(10, 16, 10000, 0)
                       : SynthSpec::redundant(10, 16, 10000, 0);
    if (skind != "redundant" && skind != "diverse") {
        throw std::runtime_error("config: unknown data.synth.kind " + skind);
    }
    sp.class_count = static_cast<int>(kv.get_int("data.synth.classes", sp.class_count));
    sp.dim = static_cast<std::size_t>(kv.get_int("data.synth.dim", sp.dim));
    sp.n = static_cast<std::size_t>(kv.get_int("data.synth.n", sp.n));
    sp.seed = kv.get_seed("data.synth.seed", 0);
    sp.within_class_spread = kv.get_double("data.synth.spread", sp.within_class_spread);
    sp.modes_per_class =
        static_cast<std::size_t>(kv.get_int("data.synth.modes", sp.modes_per_class));
    cfg.data.synth = sp;
    cfg.data.synth_test_n =
        static_cast<std::size_t>(kv.get_int("data.synth.test_n", 0));

    std::string arch = kv.get("arch.kind", "linear");
    if (arch == "linear") {
        cfg.arch_kind = ArchKind::Linear;
    } else if (arch == "mlp") {
        cfg.arch_kind = ArchKind::MLP;
    } else if (arch == "smallcnn") {
        cfg.arch_kind = ArchKind::SmallCNN;
    } else {
        throw std::runtime_error("config: unknown arch.kind " + arch);
    }
    cfg.mlp_hidden.clear();
    for (auto h : kv.get_int_list("arch.hidden")) {
        cfg.mlp_hidden.push_back(static_cast<std::size_t>(h));
    }
    if (cfg.mlp_hidden.empty()) cfg.mlp_hidden = {64};
    cfg.cnn_conv1 = static_cast<std::size_t>(kv.get_int("arch.conv1", 8));
    cfg.cnn_conv2 = static_cast<std::size_t>(kv.get_int("arch.conv2", 16));
    cfg.cnn_fc = static_cast<std::size_t>(kv.get_int("arch.fc", 128));

    cfg.train.batch_size = static_cast<std::size_t>(kv.get_int("train.batch_size", 64));
    cfg.train.epochs = static_cast<int>(kv.get_int("train.epochs", 50));
    cfg.train.base_lr = kv.get_double("train.lr", 0.05);
    cfg.train.lr_decay_factor = kv.get_double("train.lr_decay_factor", 0.1);
    cfg.train.lr_decay_epochs.clear();
    for (auto e : kv.get_int_list("train.lr_decay_epochs")) {
        cfg.train.lr_decay_epochs.push_back(static_cast<int>(e));
    }
    if (!kv.has("train.lr_decay_epochs")) cfg.train.lr_decay_epochs = {30};
    cfg.train.weight_decay = kv.get_double("train.weight_decay", 1e-4);
    cfg.train.early_stop_patience =
        static_cast<int>(kv.get_int("train.patience", 10));
    cfg.train.seed = kv.get_seed("train.seed", 1);
    cfg.train.probe_set_size =
        static_cast<std::size_t>(kv.get_int("train.probe_size", 512));

    cfg.split_spec.val_fraction = kv.get_double("split.val_fraction", 0.1);
    cfg.split_spec.seed = kv.get_seed("split.seed", cfg.train.seed);

    cfg.norm.norm = norm_kind_from_string(kv.get("norm.kind", "l2"));
    cfg.norm.subset =
        param_subset_from_string(kv.get("norm.subset", "last_layer_weights"));

    cfg.policies.clear();
    auto policy_names = kv.get_string_list("policies");
    if (policy_names.empty()) policy_names = {"random", "max_gradient"};
    double discard = kv.get_double("policy.discard_fraction", 0.05);
    for (const auto& name : policy_names) {
        SelectionPolicy p;
        p.kind = policy_kind_from_string(name);
        p.discard_fraction = discard;
        cfg.policies.push_back(p);
    }

    cfg.fractions = kv.get_double_list("fractions");
    if (cfg.fractions.empty()) cfg.fractions = {0.05};
    cfg.repeat_seeds.clear();
    for (auto s : kv.get_int_list("seeds")) {
        cfg.repeat_seeds.push_back(static_cast<std::uint64_t>(s));
    }
    if (cfg.repeat_seeds.empty()) cfg.repeat_seeds = {1};

    cfg.output_dir = kv.get("out", "out");
    cfg.bound_batches = static_cast<std::size_t>(kv.get_int("bounds.batches", 1000));
    cfg.bound_batch_size = static_cast<std::size_t>(kv.get_int("bounds.batch_size", 0));
    cfg.entropy_ks.clear();
    for (auto k : kv.get_int_list("entropy.ks")) {
        cfg.entropy_ks.push_back(static_cast<std::size_t>(k));
    }

    cfg.validate();
    return cfg;
}

KvConfig experiment_config_to_kv(const ExperimentConfig& cfg) {
    KvConfig kv;
    auto set_num = [&kv](const std::string& key, double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        kv.set(key, buf);
    };

    switch (cfg.data.kind) {
        case DataSource::Kind::Idx: kv.set("data.kind", "idx"); break;
        case DataSource::Kind::Csv: kv.set("data.kind", "csv"); break;
        case DataSource::Kind::Synth: kv.set("data.kind", "synth"); break;
    }
    kv.set("data.dir", cfg.data.dir);
    kv.set("data.train_images", cfg.data.train_images);
    kv.set("data.train_labels", cfg.data.train_labels);
    kv.set("data.test_images", cfg.data.test_images);
    kv.set("data.test_labels", cfg.data.test_labels);
    if (!cfg.data.train_csv.empty()) kv.set("data.train_csv", cfg.data.train_csv);
    if (!cfg.data.test_csv.empty()) kv.set("data.test_csv", cfg.data.test_csv);
    if (cfg.data.limit_train > 0) {
        kv.set("data.limit_train", std::to_string(cfg.data.limit_train));
        kv.set("data.limit_seed", std::to_string(cfg.data.limit_seed));
    }
    kv.set("data.synth.kind",
           cfg.data.synth.kind == SynthKind::Redundant ? "redundant" : "diverse");
    kv.set("data.synth.classes", std::to_string(cfg.data.synth.class_count));
    kv.set("data.synth.dim", std::to_string(cfg.data.synth.dim));
    kv.set("data.synth.n", std::to_string(cfg.data.synth.n));
    kv.set("data.synth.seed", std::to_string(cfg.data.synth.seed));
    set_num("data.synth.spread", cfg.data.synth.within_class_spread);
    kv.set("data.synth.modes", std::to_string(cfg.data.synth.modes_per_class));
    if (cfg.data.synth_test_n > 0) {
        kv.set("data.synth.test_n", std::to_string(cfg.data.synth_test_n));
    }

    switch (cfg.arch_kind) {
        case ArchKind::Linear: kv.set("arch.kind", "linear"); break;
        case ArchKind::MLP: kv.set("arch.kind", "mlp"); break;
        case ArchKind::SmallCNN: kv.set("arch.kind", "smallcnn"); break;
    }
    {
        std::string hidden;
        for (std::size_t h : cfg.mlp_hidden) {
            if (!hidden.empty()) hidden += ',';
            hidden += std::to_string(h);
        }
        kv.set("arch.hidden", hidden);
    }
    kv.set("arch.conv1", std::to_string(cfg.cnn_conv1));
    kv.set("arch.conv2", std::to_string(cfg.cnn_conv2));
    kv.set("arch.fc", std::to_string(cfg.cnn_fc));

    kv.set("train.batch_size", std::to_string(cfg.train.batch_size));
    kv.set("train.epochs", std::to_string(cfg.train.epochs));
    set_num("train.lr", cfg.train.base_lr);
    set_num("train.lr_decay_factor", cfg.train.lr_decay_factor);
    {
        std::string decay;
        for (int e : cfg.train.lr_decay_epochs) {
            if (!decay.empty()) decay += ',';
            decay += std::to_string(e);
        }
        kv.set("train.lr_decay_epochs", decay);
    }
    set_num("train.weight_decay", cfg.train.weight_decay);
    kv.set("train.patience", std::to_string(cfg.train.early_stop_patience));
    kv.set("train.seed", std::to_string(cfg.train.seed));
    kv.set("train.probe_size", std::to_string(cfg.train.probe_set_size));

    set_num("split.val_fraction", cfg.split_spec.val_fraction);
    kv.set("split.seed", std::to_string(cfg.split_spec.seed));

    kv.set("norm.kind", to_string(cfg.norm.norm));
    kv.set("norm.subset", to_string(cfg.norm.subset));

    {
        std::string policies;
        for (const auto& p : cfg.policies) {
            if (!policies.empty()) policies += ',';
            policies += to_string(p.kind);
        }
        kv.set("policies", policies);
        if (!cfg.policies.empty()) {
            set_num("policy.discard_fraction", cfg.policies.front().discard_fraction);
        }
    }
    {
        std::string fr;
        for (double f : cfg.fractions) {
            if (!fr.empty()) fr += ',';
            fr += fmt_fraction(f);
        }
        kv.set("fractions", fr);
    }
    {
        std::string seeds;
        for (auto s : cfg.repeat_seeds) {
            if (!seeds.empty()) seeds += ',';
            seeds += std::to_string(s);
        }
        kv.set("seeds", seeds);
    }
    kv.set("out", cfg.output_dir);
    kv.set("bounds.batches", std::to_string(cfg.bound_batches));
    kv.set("bounds.batch_size", std::to_string(cfg.bound_batch_size));
    if (!cfg.entropy_ks.empty()) {
        std::string ks;
        for (std::size_t k : cfg.entropy_ks) {
            if (!ks.empty()) ks += ',';
            ks += std::to_string(k);
        }
        kv.set("entropy.ks", ks);
    }
    return kv;
}

std::pair<Dataset, Dataset> load_source(const DataSource& src) {
    Dataset pool, test;
    switch (src.kind) {
        case DataSource::Kind::Idx: {
            fs::path dir(src.dir);
            pool = load_idx((dir / src.train_images).string(),
                            (dir / src.train_labels).string());
            test = load_idx((dir / src.test_images).string(),
                            (dir / src.test_labels).string());
            break;
        }
        case DataSource::Kind::Csv: {
            if (src.train_csv.empty() || src.test_csv.empty()) {
                throw std::runtime_error("data: csv source needs train_csv and test_csv");
            }
            pool = load_csv(src.train_csv);
            test = load_csv(src.test_csv, pool.class_count);
            break;
        }
        case DataSource::Kind::Synth: {
            std::size_t test_n = src.synth_test_n > 0
                                     ? src.synth_test_n
                                     : std::max<std::size_t>(src.synth.n / 5, 1000);
            auto [tr, te] = synth_train_test(src.synth, test_n);
            pool = std::move(tr);
            test = std::move(te);
            break;
        }
    }
    if (src.limit_train > 0 && src.limit_train < pool.size()) {
        auto sub = select_random(pool.size(), src.limit_train,
                                 derive_seed(src.limit_seed, kLimitStream));
        pool = pool.subset(sub.indices);
    }
    pool.validate();
    test.validate();
    return {std::move(pool), std::move(test)};
}

ArchSpec build_arch(const ExperimentConfig& cfg, const Dataset& sample) {
    switch (cfg.arch_kind) {
        case ArchKind::Linear:
            return ArchSpec::linear(sample.example_dim(), sample.class_count);
        case ArchKind::MLP:
            return ArchSpec::mlp(sample.example_dim(), cfg.mlp_hidden,
                                 sample.class_count);
        case ArchKind::SmallCNN: {
            if (sample.example_shape.size() != 3) {
                throw std::invalid_argument("smallcnn needs HxWxC examples");
            }
            return ArchSpec::small_cnn(sample.example_shape[0],
                                       sample.example_shape[1],
                                       sample.example_shape[2], sample.class_count,
                                       cfg.cnn_conv1, cfg.cnn_conv2, cfg.cnn_fc);
        }
    }
    throw std::invalid_argument("unknown architecture kind");
}

std::pair<Subsample, double> run_subsample_analysis(const ScoreTable& scores,
                                                    SelectionPolicy policy,
                                                    double fraction,
                                                    std::uint64_t seed,
                                                    const RetrainContext& ctx) {
    const std::size_t n = scores.size();
    if (n != ctx.train_split.size()) {
        throw std::invalid_argument("retrain: scores not aligned with train split");
    }
    if (fraction <= 0.0 || fraction > 1.0) {
        throw std::invalid_argument("retrain: fraction outside (0,1]");
    }
    if (fraction * static_cast<double>(n) < 1.0) {
        throw std::invalid_argument("retrain: fraction selects less than one example");
    }
    std::size_t k = static_cast<std::size_t>(
        std::lround(fraction * static_cast<double>(n)));
    k = std::max<std::size_t>(k, 1);

    policy.seed = seed;
    Subsample sub = select(scores, policy, k);
    sub.validate(n);

    Dataset subset = ctx.train_split.subset(sub.indices);
    TrainConfig tc = ctx.train;
    tc.seed = seed;
    Model fresh = Model::init_random(ctx.arch, derive_seed(seed, kRetrainInitStream));
    auto [model, log] = train(fresh, subset, ctx.val_split, tc, ctx.norm);
    double acc = evaluate(model, ctx.test_set);
    return {std::move(sub), acc};
}

namespace {

std::vector<std::size_t> default_entropy_ks(std::size_t n) {
    const double fr[] = {0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
    std::vector<std::size_t> ks;
    for (double f : fr) {
        auto k = static_cast<std::size_t>(std::lround(f * static_cast<double>(n)));
        k = std::clamp<std::size_t>(k, 1, n);
        if (ks.empty() || ks.back() != k) ks.push_back(k);
    }
    return ks;
}

}  // namespace

ExperimentReport run_analysis(const ExperimentConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.output_dir);
    fs::create_directories(fs::path(cfg.output_dir) / "subsamples");
    fs::create_directories(fs::path(cfg.output_dir) / "logs");
    const fs::path out(cfg.output_dir);

    {
        std::ofstream cfg_out(out / "config.txt");
        cfg_out << experiment_config_to_kv(cfg).to_string();
    }

    Manifest manifest((out / "manifest.tsv").string());
    ExperimentReport report;

    Dataset pool, test_set;
    manifest.run_stage("load_data", [&] {
        auto [p, t] = load_source(cfg.data);
        pool = std::move(p);
        test_set = std::move(t);
    });

    Dataset train_split, val_split;
    manifest.run_stage("split", [&] {
        auto [tr, va] = split(pool, cfg.split_spec);
        train_split = std::move(tr);
        val_split = std::move(va);
        // Index audit: the split must be disjoint and exhaustive.
        std::set<std::size_t> seen(train_split.orig_indices.begin(),
                                   train_split.orig_indices.end());
        for (std::size_t i : val_split.orig_indices) {
            if (!seen.insert(i).second) {
                throw std::runtime_error("validation example also in train split");
            }
        }
        if (seen.size() != pool.size()) {
            throw std::runtime_error("split dropped examples");
        }
    });

    ArchSpec arch = build_arch(cfg, train_split);
    Model trained(arch);
    TrainLog full_log;
    manifest.run_stage("train_full", [&] {
        Model init = Model::init_random(arch, derive_seed(cfg.train.seed, kInitStream));
        auto [m, log] = train(init, train_split, val_split, cfg.train, cfg.norm);
        trained = std::move(m);
        full_log = std::move(log);
        report.model_path = (out / "model_full.bin").string();
        save_model(trained, report.model_path);
        write_train_log_csv(full_log, (out / "train_full.csv").string());
        write_probe_csv(full_log, (out / "train_full_probe.csv").string());
    });

    manifest.run_stage("test_full", [&] {
        report.full_test_acc = evaluate(trained, test_set);
    });

    ScoreTable scores;
    manifest.run_stage("score", [&] {
        scores = score_dataset(trained, train_split, cfg.norm);
        scores.model_id = arch.name() + "_seed" + std::to_string(cfg.train.seed);
        report.score_csv = (out / "scores.csv").string();
        write_score_csv(scores, report.score_csv, cfg.train.seed);
    });

    manifest.run_stage("subsample_runs", [&] {
        RetrainContext ctx{train_split, val_split, test_set, arch, cfg.train, cfg.norm};
        for (const auto& policy : cfg.policies) {
            for (double fraction : cfg.fractions) {
                for (std::uint64_t seed : cfg.repeat_seeds) {
                    auto [sub, acc] =
                        run_subsample_analysis(scores, policy, fraction, seed, ctx);
                    std::string tag = to_string(policy.kind) + "_f" +
                                      fmt_fraction(fraction) + "_s" +
                                      std::to_string(seed);
                    PolicyRunRow row;
                    row.policy = to_string(policy.kind);
                    row.fraction = fraction;
                    row.seed = seed;
                    row.test_acc = acc;
                    row.subsample_path = (out / "subsamples" / (tag + ".txt")).string();
                    write_subsample(sub, row.subsample_path);
                    report.rows.push_back(std::move(row));
                }
            }
        }
    });

    manifest.run_stage("diagnostics", [&] {
        auto ks = cfg.entropy_ks.empty() ? default_entropy_ks(scores.size())
                                         : cfg.entropy_ks;
        auto entropy = label_entropy_topk(scores, train_split.class_count, ks);
        std::string entropy_path = (out / "entropy.csv").string();
        write_entropy_csv(entropy, entropy_path);
        report.diagnostic_csvs.push_back(entropy_path);

        auto hm = heatmap_matrix(full_log);
        std::string heatmap_path = (out / "heatmap.csv").string();
        write_heatmap_csv(hm, heatmap_path);
        report.diagnostic_csvs.push_back(heatmap_path);

        std::size_t bsz = cfg.bound_batch_size > 0 ? cfg.bound_batch_size
                                                   : cfg.train.batch_size;
        bsz = std::min(bsz, train_split.size());
        auto pairs = batch_bound_pairs(trained, train_split, bsz, cfg.bound_batches,
                                       derive_seed(cfg.train.seed, 0xB0));
        std::string bounds_path = (out / "bounds.csv").string();
        write_bounds_csv(pairs, bounds_path);
        report.diagnostic_csvs.push_back(bounds_path);

        auto baseline = random_overlap_baseline(scores.size(), ks,
                                                derive_seed(cfg.train.seed, 0xB1), 100);
        std::string baseline_path = (out / "overlap_random.csv").string();
        write_overlap_csv(baseline, baseline_path);
        report.diagnostic_csvs.push_back(baseline_path);
    });

    manifest.run_stage("report", [&] {
        report.report_csv = (out / "report.csv").string();
        write_report_csv(report, report.report_csv);
        report.summary_path = (out / "summary.txt").string();
        write_summary(report, cfg, report.summary_path);
    });

    manifest.finish();
    return report;
}

void write_report_csv(const ExperimentReport& report, const std::string& path) {
    std::ofstream csv(path);
    if (!csv) throw std::runtime_error("report: cannot write " + path);
    csv << "policy,fraction,seed,test_acc\n";
    char b1[32], b2[32];
    for (const auto& row : report.rows) {
        std::snprintf(b1, sizeof(b1), "%.17g", row.fraction);
        std::snprintf(b2, sizeof(b2), "%.17g", row.test_acc);
        csv << row.policy << ',' << b1 << ',' << row.seed << ',' << b2 << "\n";
    }
}

void write_summary(const ExperimentReport& report, const ExperimentConfig& cfg,
                   const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("report: cannot write " + path);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", report.full_test_acc);
    out << "full-data test accuracy: " << buf << "\n\n";
    out << "policy, fraction -> mean test accuracy over "
        << cfg.repeat_seeds.size() << " seed(s)\n";
    for (const auto& policy : cfg.policies) {
        for (double fraction : cfg.fractions) {
            double sum = 0.0;
            std::size_t count = 0;
            for (const auto& row : report.rows) {
                if (row.policy == to_string(policy.kind) && row.fraction == fraction) {
                    sum += row.test_acc;
                    ++count;
                }
            }
            if (count == 0) continue;
            std::snprintf(buf, sizeof(buf), "%-24s f=%-8g %.4f",
                          to_string(policy.kind).c_str(), fraction,
                          sum / static_cast<double>(count));
            out << buf << "\n";
        }
    }
}

}  // namespace gradselect
