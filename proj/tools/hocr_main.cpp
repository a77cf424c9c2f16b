// hocr: command-line front end for codebook construction, head training,
// decoding, size accounting and synthetic experiments.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "hocr/bitcode.hpp"
#include "hocr/codebook.hpp"
#include "hocr/error.hpp"
#include "hocr/hamming_head.hpp"
#include "hocr/harness.hpp"
#include "hocr/sizing.hpp"

namespace {

using nlohmann::ordered_json;
using namespace hocr;

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kContract = 2,
    kFormat = 3,
    kConflict = 4,
    kDiverged = 5,
};

struct Globals {
    std::string config_file;
    std::vector<std::string> overrides;
    int workers = -1;

    ExperimentConfig resolve() const {
        ExperimentConfig c;
        if (!config_file.empty()) apply_config_file(c, config_file);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ContractViolation("--set expects key=value, got '" + kv + "'");
            apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (workers >= 0) c.workers = static_cast<unsigned>(std::max(1, workers));
        c.validate();
        return c;
    }
};

/// Writes to `path`, or stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        if (!text.empty() && text.back() != '\n') std::cout << '\n';
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractViolation("cannot write '" + path + "'");
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

void write_csv(const std::string& path, std::span<const EpochStat> history) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractViolation("cannot write '" + path + "'");
    write_loss_csv(out, history);
}

ordered_json neighbors_json(const Codebook& book, std::size_t classes, std::size_t k) {
    ordered_json rows = ordered_json::array();
    const std::size_t n = std::min(classes, book.size());
    k = std::min(k, book.size() - 1);
    for (std::size_t i = 0; i < n; ++i) {
        ordered_json list = ordered_json::array();
        for (const auto& r : top_k_neighbors(i, book, k))
            list.push_back({{"class_index", r.class_index}, {"label", book.label(r.class_index)}, {"distance", r.distance}});
        rows.push_back({{"class_index", i}, {"label", book.label(i)}, {"neighbors", list}});
    }
    return rows;
}

ordered_json conflicts_json(const Codebook& book) {
    ordered_json arr = ordered_json::array();
    for (const auto& [a, b] : detect_conflicts(book)) arr.push_back({a, b});
    return arr;
}

std::vector<std::size_t> parse_widths(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &pos);
        } catch (const std::exception&) {
            pos = std::string::npos;
        }
        if (pos != item.size() || v == 0) throw ContractViolation("bad width '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ContractViolation("no widths given");
    return out;
}

// --- subcommands ---

struct BankGen {
    std::string out;
    std::uint64_t stream = 0;
    std::size_t samples = 0;

    int run(const Globals& g) const {
        auto c = g.resolve();
        if (samples) c.bank.samples_per_class = samples;
        const auto bank = generate_bank(c.bank, stream);
        bank.save(out);
        emit("-", dump({{"bank", out},
                        {"classes", bank.num_classes()},
                        {"dim", bank.dim()},
                        {"samples", bank.total_samples()},
                        {"seed", c.bank.seed},
                        {"stream", stream}}));
        return kOk;
    }
};

struct CodebookBuild {
    std::string bank_path, out;

    int run(const Globals& g) const {
        const auto c = g.resolve();
        const auto bank = FeatureBank::load(bank_path);
        Codebook book;
        if (c.code_kind == CodeKind::random) {
            book = random_codebook(bank.num_classes(), c.code_width, c.projection_seed,
                                   {bank.labels().begin(), bank.labels().end()});
        } else if (c.redraw_on_conflict) {
            book = build_codebook_resolving(bank, c.code_width, c.projection_seed, c.max_conflict_retries,
                                            BuildOptions{c.workers});
        } else {
            book = build_codebook(bank, ProjectionMatrix::draw(bank.dim(), c.code_width, c.projection_seed),
                                  BuildOptions{c.workers});
        }
        book.save_with_labels(out);
        const auto& p = book.provenance();
        emit("-", dump({{"codebook", out},
                        {"classes", book.size()},
                        {"width", book.width()},
                        {"kind", to_string(p.kind)},
                        {"seed", p.seed},
                        {"retries", p.retries},
                        {"conflicts", detect_conflicts(book).size()}}));
        return kOk;
    }
};

struct CodebookStats {
    std::string path, out;
    std::size_t classes = 10, k = 5;

    int run(const Globals&) const {
        const auto book = Codebook::load(path);
        require(book.size() >= 2, "codebook stats: need at least two codes");
        std::vector<std::size_t> ones(book.width(), 0);
        for (const auto& code : book.codes())
            for (std::size_t b = 0; b < book.width(); ++b) ones[b] += code.get(b);
        // Mean over all pairs from per-bit counts: bit b differs in ones·(L − ones) pairs.
        const double pairs = static_cast<double>(book.size()) * static_cast<double>(book.size() - 1) / 2.0;
        double differing = 0.0, total_ones = 0.0;
        for (auto o : ones) {
            differing += static_cast<double>(o) * static_cast<double>(book.size() - o);
            total_ones += static_cast<double>(o);
        }
        std::size_t min_distance = book.width();
        for (std::size_t i = 0; i < book.size(); ++i) {
            const std::size_t excluded[] = {i};
            min_distance = std::min(min_distance, nearest_code(book.code(i), book, SearchOptions{1, excluded}).distance);
        }
        emit(out, dump({{"classes", book.size()},
                        {"width", book.width()},
                        {"conflicts", detect_conflicts(book).size()},
                        {"mean_pairwise_distance", differing / pairs},
                        {"min_pairwise_distance", min_distance},
                        {"bit_frequency", total_ones / (static_cast<double>(book.size()) * book.width())},
                        {"bytes", codebook_bytes(book.size(), book.width())},
                        {"neighbors", neighbors_json(book, classes, k)}}));
        return kOk;
    }
};

struct CodebookConflicts {
    std::string path;

    int run(const Globals&) const {
        const auto book = Codebook::load(path);
        const auto pairs = conflicts_json(book);
        emit("-", dump({{"classes", book.size()}, {"conflicts", pairs}}));
        return kOk;
    }
};

struct TrainSoftmax {
    std::string bank_path, held_path, report, loss_csv;

    int run(const Globals& g) const {
        const auto c = g.resolve();
        const auto bank = FeatureBank::load(bank_path);
        auto cfg = c.softmax;
        cfg.threads = c.workers;
        const auto r = train_softmax(bank, cfg);
        write_csv(loss_csv, r.history);
        ordered_json j = {{"stage", "softmax"},
                          {"epochs", r.history.size()},
                          {"final_loss", r.history.empty() ? 0.0 : r.history.back().mean_loss},
                          {"train_accuracy", softmax_accuracy(r.classifier, bank)}};
        if (!held_path.empty()) j["held_out_accuracy"] = softmax_accuracy(r.classifier, FeatureBank::load(held_path));
        j["head_bytes"] = softmax_head_bytes(bank.num_classes(), bank.dim(), Precision::fp32);
        emit(report, dump(j));
        return kOk;
    }
};

struct TrainHamming {
    std::string bank_path, codebook_path, out, loss_csv, report;
    bool random_init = false;
    std::optional<std::uint64_t> init_seed;

    int run(const Globals& g) const {
        const auto c = g.resolve();
        const auto bank = FeatureBank::load(bank_path);
        const auto book = Codebook::load(codebook_path);
        auto cfg = c.hamming;
        cfg.threads = c.workers;
        std::optional<Matrix> init;
        // Start from the hashing projection unless asked otherwise.
        if (!random_init) init = ProjectionMatrix::draw(bank.dim(), book.width(), init_seed.value_or(c.projection_seed)).entries();
        const auto r = train_hamming(bank, book, cfg, c.theta, init);
        r.classifier.save(out);
        write_csv(loss_csv, r.history);
        emit(report, dump({{"stage", "hamming"},
                           {"classifier", out},
                           {"epochs", r.history.size()},
                           {"final_loss", r.history.empty() ? 0.0 : r.history.back().mean_loss},
                           {"train_accuracy", decode_accuracy(r.classifier, bank)}}));
        return kOk;
    }
};

struct Decode {
    std::string classifier_path, bank_path, predictions, report;

    int run(const Globals& g) const {
        const auto c = g.resolve();
        const auto clf = HammingClassifier::load(classifier_path);
        const auto bank = FeatureBank::load(bank_path);
        std::ostringstream csv;
        csv << "class,sample,predicted,label,distance\n";
        std::size_t correct = 0, total = 0;
        for (std::size_t cls = 0; cls < bank.num_classes(); ++cls) {
            const auto& m = bank.samples(cls);
            for (std::size_t r = 0; r < m.rows(); ++r, ++total) {
                const auto res = decode(clf, m.row(r), c.workers);
                correct += res.class_index == cls;
                csv << cls << ',' << r << ',' << res.class_index << ',' << clf.codebook().label(res.class_index) << ','
                    << res.distance << '\n';
            }
        }
        if (!predictions.empty()) emit(predictions, csv.str());
        emit(report, dump({{"samples", total},
                           {"correct", correct},
                           {"accuracy", static_cast<double>(correct) / static_cast<double>(total)}}));
        return kOk;
    }
};

struct SizeReportCmd {
    std::string head = "model", format = "json", precision = "fp32", out;
    std::size_t classes = 20948, d = 512, code_width = 512, bottleneck = 64;

    int run(const Globals&) const {
        const auto p = parse_precision(precision);
        SizeReport r;
        if (head == "hamming") {
            r = hamming_head_report(classes, d, code_width, p);
        } else if (head == "softmax" || head == "embedding" || head == "factorized") {
            const std::uint64_t bytes = head == "factorized" ? factorized_bytes(classes, d, bottleneck, p)
                                        : head == "embedding"  ? embedding_bytes(classes, d, p)
                                                               : softmax_head_bytes(classes, d, p);
            const std::uint64_t count = bytes / bytes_per_value(p);
            r.title = head + " head";
            r.precision = p;
            r.items.push_back({head == "embedding" ? "learned embedding" : head + " classifier", count, bytes, false});
            r.assumptions.d = d;
            r.assumptions.classes = classes;
            r.assumptions.precision = p;
        } else if (head == "model") {
            auto c = resnet_baseline_config();
            c.backbone_params = resnet_backbone_params();
            c.classes = classes;
            c.d = d;
            c.code_width = code_width;
            c.precision = p;
            r = model_size(c);
        } else {
            throw ContractViolation("size report: --head must be model, softmax, hamming, embedding or factorized");
        }
        if (format == "text") {
            std::ostringstream s;
            print_size_report(s, r);
            emit(out, s.str());
        } else {
            emit(out, to_json(r));
        }
        return kOk;
    }
};

struct SizeLadder {
    std::string which = "all", format = "text", out;

    int run(const Globals&) const {
        std::vector<Ladder> ladders;
        if (which == "mobile" || which == "all") ladders.push_back(mobile_ladder());
        if (which == "resnet" || which == "all")
            for (auto& l : resnet_ladders()) ladders.push_back(std::move(l));
        if (ladders.empty()) throw ContractViolation("size ladder: --which must be mobile, resnet or all");
        std::ostringstream s;
        if (format == "json") s << "[\n";
        for (std::size_t i = 0; i < ladders.size(); ++i) {
            const auto& l = ladders[i];
            const auto rows = ladder_report(l.base, l.base_reference_mib, l.steps);
            if (format == "json") {
                s << ladder_to_json(l.name, rows) << (i + 1 < ladders.size() ? ",\n" : "\n");
            } else {
                print_ladder(s, l.name, rows);
                s << '\n';
            }
        }
        if (format == "json") s << "]\n";
        emit(out, s.str());
        return kOk;
    }
};

struct SweepCodelen {
    std::string widths = "64,128,256,512", out, csv;

    int run(const Globals& g) const {
        const auto c = g.resolve();
        const auto rows = sweep_code_length(c, parse_widths(widths));
        emit(out, sweep_to_json(c, rows));
        if (!csv.empty()) {
            std::ostringstream s;
            s << "code_width,decode_accuracy,head_bytes,codebook_bytes,reference_accuracy\n";
            char buf[64];
            for (const auto& r : rows) {
                std::snprintf(buf, sizeof buf, "%.17g", r.decode_accuracy);
                s << r.code_width << ',' << buf << ',' << r.head_bytes << ',' << r.codebook_bytes << ',';
                if (r.reference_accuracy) s << *r.reference_accuracy;
                s << '\n';
            }
            emit(csv, s.str());
        }
        return kOk;
    }
};

struct Experiment {
    std::string out, softmax_csv, hamming_csv;

    int run(const Globals& g) const {
        const auto c = g.resolve();
        const auto r = run_two_stage(c);
        emit(out, to_json(r));
        write_csv(softmax_csv, r.softmax_history);
        write_csv(hamming_csv, r.hamming_history);
        return kOk;
    }
};

struct BenchSearch {
    std::size_t classes = 20948, width = 512, queries = 1000;
    std::uint64_t seed = 1;

    int run(const Globals& g) const {
        const auto c = g.resolve();
        const auto book = random_codebook(classes, width, seed);
        const auto probes = random_codebook(std::max<std::size_t>(queries, 2), width, seed + 1);
        std::size_t checksum = 0;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t q = 0; q < queries; ++q) {
            const auto r = nearest_code(probes.code(q), book, SearchOptions{c.workers});
            checksum += r.class_index + r.distance;
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        emit("-", dump({{"classes", classes},
                        {"width", width},
                        {"queries", queries},
                        {"workers", c.workers},
                        {"seconds", seconds},
                        {"queries_per_second", seconds > 0 ? static_cast<double>(queries) / seconds : 0.0},
                        {"checksum", checksum}}));
        return kOk;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hamming-code output heads: codebooks, training, decoding and size accounting"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config_file, "key = value settings file")->check(CLI::ExistingFile);
    app.add_option("--set", g.overrides, "override one setting, e.g. --set bank.sigma=0.2")->allow_extra_args(false);
    app.add_option("--workers", g.workers, "worker threads (results do not depend on it)");

    std::function<int()> action;

    auto* bank = app.add_subcommand("bank", "synthetic feature banks")->require_subcommand(1);
    BankGen bank_gen;
    auto* gen = bank->add_subcommand("gen", "generate a Gaussian-cluster feature bank");
    gen->add_option("--out,-o", bank_gen.out, "output .hofb path")->required();
    gen->add_option("--stream", bank_gen.stream, "sample stream (0 train, 1 held-out, ...)");
    gen->add_option("--samples", bank_gen.samples, "samples per class (default from bank.samples)");
    gen->callback([&] { action = [&] { return bank_gen.run(g); }; });

    auto* codebook = app.add_subcommand("codebook", "codebook construction and inspection")->require_subcommand(1);
    CodebookBuild cb_build;
    auto* build = codebook->add_subcommand("build", "hash a feature bank into a codebook (or draw random codes)");
    build->add_option("--bank", cb_build.bank_path, "input .hofb")->required()->check(CLI::ExistingFile);
    build->add_option("--out,-o", cb_build.out, "output .hocb (labels go to <out>.labels)")->required();
    build->callback([&] { action = [&] { return cb_build.run(g); }; });

    CodebookStats cb_stats;
    auto* stats = codebook->add_subcommand("stats", "distance statistics and nearest neighbors");
    stats->add_option("--codebook,-c", cb_stats.path)->required()->check(CLI::ExistingFile);
    stats->add_option("--classes", cb_stats.classes, "rows of the neighbor table");
    stats->add_option("-k", cb_stats.k, "neighbors per row");
    stats->add_option("--out,-o", cb_stats.out);
    stats->callback([&] { action = [&] { return cb_stats.run(g); }; });

    CodebookConflicts cb_conf;
    auto* conf = codebook->add_subcommand("conflicts", "list class pairs with identical codes");
    conf->add_option("--codebook,-c", cb_conf.path)->required()->check(CLI::ExistingFile);
    conf->callback([&] { action = [&] { return cb_conf.run(g); }; });

    auto* train = app.add_subcommand("train", "train an output head on a feature bank")->require_subcommand(1);
    TrainSoftmax tr_soft;
    auto* soft = train->add_subcommand("softmax", "cross-entropy baseline head");
    soft->add_option("--bank", tr_soft.bank_path)->required()->check(CLI::ExistingFile);
    soft->add_option("--held-out", tr_soft.held_path)->check(CLI::ExistingFile);
    soft->add_option("--loss-csv", tr_soft.loss_csv);
    soft->add_option("--report", tr_soft.report);
    soft->callback([&] { action = [&] { return tr_soft.run(g); }; });

    TrainHamming tr_ham;
    auto* ham = train->add_subcommand("hamming", "hinge-loss Hamming head");
    ham->add_option("--bank", tr_ham.bank_path)->required()->check(CLI::ExistingFile);
    ham->add_option("--codebook,-c", tr_ham.codebook_path)->required()->check(CLI::ExistingFile);
    ham->add_option("--out,-o", tr_ham.out, "output .hocl")->required();
    ham->add_option("--loss-csv", tr_ham.loss_csv);
    ham->add_option("--report", tr_ham.report);
    ham->add_option("--init-seed", tr_ham.init_seed, "seed of the starting projection (default projection_seed)");
    ham->add_flag("--random-init", tr_ham.random_init, "start from N(0, 1/d) instead of the hashing projection");
    ham->callback([&] { action = [&] { return tr_ham.run(g); }; });

    Decode dec;
    auto* decode_cmd = app.add_subcommand("decode", "decode every sample of a bank with a trained head");
    decode_cmd->add_option("--classifier", dec.classifier_path)->required()->check(CLI::ExistingFile);
    decode_cmd->add_option("--bank", dec.bank_path)->required()->check(CLI::ExistingFile);
    decode_cmd->add_option("--predictions", dec.predictions, "per-sample CSV");
    decode_cmd->add_option("--report", dec.report);
    decode_cmd->callback([&] { action = [&] { return dec.run(g); }; });

    auto* size = app.add_subcommand("size", "storage accounting")->require_subcommand(1);
    SizeReportCmd sz;
    auto* report = size->add_subcommand("report", "itemized size of one head or a whole model");
    report->add_option("--head", sz.head, "model | softmax | hamming | embedding | factorized");
    report->add_option("--classes,-L", sz.classes);
    report->add_option("--dim,-d", sz.d);
    report->add_option("--code-width", sz.code_width);
    report->add_option("--bottleneck", sz.bottleneck);
    report->add_option("--precision", sz.precision, "fp32 | fp16");
    report->add_option("--format", sz.format, "json | text");
    report->add_option("--out,-o", sz.out);
    report->callback([&] { action = [&] { return sz.run(g); }; });

    SizeLadder ladder;
    auto* lad = size->add_subcommand("ladder", "cumulative size ladders for the reference configurations");
    lad->add_option("--which", ladder.which, "mobile | resnet | all");
    lad->add_option("--format", ladder.format, "text | json");
    lad->add_option("--out,-o", ladder.out);
    lad->callback([&] { action = [&] { return ladder.run(g); }; });

    auto* sweep = app.add_subcommand("sweep", "parameter sweeps")->require_subcommand(1);
    SweepCodelen sw;
    auto* codelen = sweep->add_subcommand("codelen", "accuracy and size across code widths");
    codelen->add_option("--widths", sw.widths, "comma-separated code widths");
    codelen->add_option("--out,-o", sw.out);
    codelen->add_option("--csv", sw.csv);
    codelen->callback([&] { action = [&] { return sw.run(g); }; });

    Experiment ex;
    auto* exp = app.add_subcommand("experiment", "full two-stage run on a synthetic bank");
    exp->add_option("--out,-o", ex.out, "report JSON");
    exp->add_option("--softmax-loss-csv", ex.softmax_csv);
    exp->add_option("--hamming-loss-csv", ex.hamming_csv);
    exp->callback([&] { action = [&] { return ex.run(g); }; });

    auto* bench = app.add_subcommand("bench", "micro benchmarks")->require_subcommand(1);
    BenchSearch bs;
    auto* search = bench->add_subcommand("search", "time exhaustive nearest-code search");
    search->add_option("--classes,-L", bs.classes);
    search->add_option("--width", bs.width);
    search->add_option("--queries", bs.queries);
    search->add_option("--seed", bs.seed);
    search->callback([&] { action = [&] { return bs.run(g); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        return action ? action() : kFailure;
    } catch (const ContractViolation& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kContract;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return kFormat;
    } catch (const CodebookConflictError& e) {
        std::cerr << "conflict: " << e.what() << '\n';
        return kConflict;
    } catch (const TrainingDiverged& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        return kDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}
