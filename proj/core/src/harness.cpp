#include "hocr/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hocr/error.hpp"
#include "hocr/rng.hpp"

namespace hocr {

using nlohmann::ordered_json;

void SyntheticBankSpec::validate() const {
    require(classes >= 2, "SyntheticBankSpec: at least two classes required");
    require(dim >= 2, "SyntheticBankSpec: dimension must be at least 2");
    require(samples_per_class >= 1, "SyntheticBankSpec: at least one sample per class");
    require(sigma > 0.0 && std::isfinite(sigma), "SyntheticBankSpec: sigma must be positive");
    require(center_scale > 0.0 && std::isfinite(center_scale), "SyntheticBankSpec: center scale must be positive");
    for (const auto& [a, b] : confusable_pairs)
        require(a < classes && b < classes && a != b, "SyntheticBankSpec: confusable pair references invalid classes");
}

std::vector<std::pair<std::size_t, std::size_t>> adjacent_pairs(std::size_t count) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < count; ++i) pairs.emplace_back(2 * i, 2 * i + 1);
    return pairs;
}

namespace {

void normalize(std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
}

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    normalize(v);
    return v;
}

}  // namespace

FeatureBank generate_bank(const SyntheticBankSpec& spec, std::uint64_t stream) {
    spec.validate();
    Rng center_rng(mix_seed(spec.seed, 0xCE7));
    std::vector<std::vector<double>> centers;
    centers.reserve(spec.classes);
    for (std::size_t i = 0; i < spec.classes; ++i) centers.push_back(random_unit(spec.dim, center_rng));

    const double angle = spec.confusable_angle_deg * std::numbers::pi / 180.0;
    for (const auto& [a, b] : spec.confusable_pairs) {
        const auto& base = centers[a];
        auto dir = random_unit(spec.dim, center_rng);
        const double along = dot(dir, base);
        for (std::size_t k = 0; k < spec.dim; ++k) dir[k] -= along * base[k];
        normalize(dir);
        for (std::size_t k = 0; k < spec.dim; ++k) centers[b][k] = std::cos(angle) * base[k] + std::sin(angle) * dir[k];
    }

    Rng sample_rng(mix_seed(spec.seed, 0x1000 + stream));
    std::vector<Matrix> classes;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < spec.classes; ++i) {
        Matrix m(spec.samples_per_class, spec.dim);
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t k = 0; k < spec.dim; ++k)
                m(r, k) = spec.center_scale * centers[i][k] + spec.sigma * sample_rng.normal();
        classes.push_back(std::move(m));
        labels.push_back("c" + std::to_string(i));
    }
    return FeatureBank(spec.dim, std::move(classes), std::move(labels));
}

const char* to_string(CodeKind k) { return k == CodeKind::lsh ? "lsh" : "random"; }

ExperimentConfig::ExperimentConfig() {
    softmax.learning_rate = 1e-2;
    softmax.epochs = 10;
    softmax.batch_size = 64;
    softmax.seed = 11;
    hamming.learning_rate = 1e-2;
    hamming.epochs = 15;
    hamming.batch_size = 64;
    hamming.seed = 13;
}

void ExperimentConfig::validate() const {
    bank.validate();
    require(held_out_per_class >= 1, "ExperimentConfig: held_out must be positive");
    require(code_width >= 1, "ExperimentConfig: code_width must be positive");
    require(theta > 0.0, "ExperimentConfig: theta must be positive");
    softmax.validate();
    hamming.validate();
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    std::from_chars_result res{};
    if constexpr (std::is_floating_point_v<T>) {
        // from_chars for double is available, but strtod accepts the same inputs on every toolchain.
        char* end = nullptr;
        out = std::strtod(value.c_str(), &end);
        if (value.empty() || end != value.c_str() + value.size())
            throw ContractViolation("setting '" + key + "': cannot parse '" + value + "' as a number");
        return out;
    } else {
        res = std::from_chars(first, last, out);
        if (res.ec != std::errc{} || res.ptr != last)
            throw ContractViolation("setting '" + key + "': cannot parse '" + value + "' as an integer");
        return out;
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ContractViolation("setting '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<std::pair<std::size_t, std::size_t>> parse_pairs(const std::string& key, const std::string& value) {
    if (value.find(':') == std::string::npos) return adjacent_pairs(parse_number<std::size_t>(key, value));
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::stringstream ss(value);
    for (std::string item; std::getline(ss, item, ',');) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ContractViolation("setting '" + key + "': expected a:b pairs");
        pairs.emplace_back(parse_number<std::size_t>(key, item.substr(0, colon)),
                           parse_number<std::size_t>(key, item.substr(colon + 1)));
    }
    return pairs;
}

bool apply_train_setting(TrainConfig& t, const std::string& field, const std::string& key, const std::string& v) {
    if (field == "learning_rate") t.learning_rate = parse_number<double>(key, v);
    else if (field == "decay_rate") t.decay_rate = parse_number<double>(key, v);
    else if (field == "batch_size") t.batch_size = parse_number<std::size_t>(key, v);
    else if (field == "epochs") t.epochs = parse_number<std::size_t>(key, v);
    else if (field == "seed") t.seed = parse_number<std::uint64_t>(key, v);
    else if (field == "plateau_tolerance") t.plateau_tolerance = parse_number<double>(key, v);
    else return false;
    return true;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
    const auto dot_pos = key.find('.');
    const std::string group = dot_pos == std::string::npos ? "" : key.substr(0, dot_pos);
    const std::string field = dot_pos == std::string::npos ? key : key.substr(dot_pos + 1);
    auto& b = c.bank;
    if (group == "bank") {
        if (field == "classes") b.classes = parse_number<std::size_t>(key, value);
        else if (field == "dim") b.dim = parse_number<std::size_t>(key, value);
        else if (field == "samples") b.samples_per_class = parse_number<std::size_t>(key, value);
        else if (field == "center_scale") b.center_scale = parse_number<double>(key, value);
        else if (field == "sigma") b.sigma = parse_number<double>(key, value);
        else if (field == "confusable_pairs") b.confusable_pairs = parse_pairs(key, value);
        else if (field == "confusable_angle") b.confusable_angle_deg = parse_number<double>(key, value);
        else if (field == "seed") b.seed = parse_number<std::uint64_t>(key, value);
        else throw ContractViolation("unknown setting '" + key + "'");
        return;
    }
    if (group == "softmax" || group == "hamming") {
        if (!apply_train_setting(group == "softmax" ? c.softmax : c.hamming, field, key, value))
            throw ContractViolation("unknown setting '" + key + "'");
        return;
    }
    if (!group.empty()) throw ContractViolation("unknown setting '" + key + "'");
    if (field == "held_out") c.held_out_per_class = parse_number<std::size_t>(key, value);
    else if (field == "code_width") c.code_width = parse_number<std::size_t>(key, value);
    else if (field == "code_kind") {
        if (value == "lsh") c.code_kind = CodeKind::lsh;
        else if (value == "random") c.code_kind = CodeKind::random;
        else throw ContractViolation("setting 'code_kind': expected lsh or random");
    } else if (field == "projection_seed") c.projection_seed = parse_number<std::uint64_t>(key, value);
    else if (field == "max_conflict_retries") c.max_conflict_retries = parse_number<std::size_t>(key, value);
    else if (field == "redraw_on_conflict") c.redraw_on_conflict = parse_bool(key, value);
    else if (field == "theta") c.theta = parse_number<double>(key, value);
    else if (field == "neighbor_classes") c.neighbor_classes = parse_number<std::size_t>(key, value);
    else if (field == "neighbor_k") c.neighbor_k = parse_number<std::size_t>(key, value);
    else if (field == "workers") c.workers = parse_number<unsigned>(key, value);
    else throw ContractViolation("unknown setting '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractViolation("config line " + std::to_string(line_no) + ": expected key = value");
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

void apply_config_file(ExperimentConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractViolation("cannot open config file '" + path + "'");
    for (const auto& [k, v] : parse_key_values(in)) apply_setting(config, k, v);
}

namespace {

double mean_intra_class_distance(const FeatureBank& bank, const ProjectionMatrix& psi) {
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t c = 0; c < bank.num_classes(); ++c) {
        const auto& m = bank.samples(c);
        std::vector<BitCode> codes;
        for (std::size_t r = 0; r < m.rows(); ++r) codes.push_back(lsh_project(m.row(r), psi));
        for (std::size_t a = 0; a < codes.size(); ++a)
            for (std::size_t b = a + 1; b < codes.size(); ++b) {
                total += static_cast<double>(hamming_distance(codes[a], codes[b]));
                ++pairs;
            }
    }
    return pairs ? total / static_cast<double>(pairs) : 0.0;
}

double mean_inter_class_distance(const Codebook& book) {
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < book.size(); ++a)
        for (std::size_t b = a + 1; b < book.size(); ++b) {
            total += static_cast<double>(hamming_distance(book.code(a), book.code(b)));
            ++pairs;
        }
    return pairs ? total / static_cast<double>(pairs) : 0.0;
}

}  // namespace

ExperimentReport run_two_stage(const ExperimentConfig& config) {
    config.validate();
    ExperimentReport report;
    report.config = config;

    const FeatureBank train = generate_bank(config.bank, 0);
    SyntheticBankSpec held_spec = config.bank;
    held_spec.samples_per_class = config.held_out_per_class;
    const FeatureBank held_out = generate_bank(held_spec, 1);

    TrainConfig softmax_cfg = config.softmax;
    softmax_cfg.threads = config.workers;
    auto stage1 = train_softmax(train, softmax_cfg);
    report.softmax_train_accuracy = softmax_accuracy(stage1.classifier, train);
    report.softmax_held_out_accuracy = softmax_accuracy(stage1.classifier, held_out);
    report.softmax_history = std::move(stage1.history);

    const BuildOptions build{config.workers};
    const std::vector<std::string> labels(train.labels().begin(), train.labels().end());
    Codebook book;
    ProjectionMatrix psi;
    if (config.code_kind == CodeKind::lsh) {
        if (config.redraw_on_conflict) {
            book = build_codebook_resolving(train, config.code_width, config.projection_seed,
                                            config.max_conflict_retries, build);
            report.projection_retries = book.provenance().retries;
        } else {
            book = build_codebook(train, ProjectionMatrix::draw(train.dim(), config.code_width, config.projection_seed),
                                  build);
        }
        psi = ProjectionMatrix::draw(train.dim(), config.code_width, config.projection_seed + report.projection_retries);
    } else {
        book = random_codebook(train.num_classes(), config.code_width, config.projection_seed, labels);
        psi = ProjectionMatrix::draw(train.dim(), config.code_width, config.projection_seed);
    }
    report.conflict_count = detect_conflicts(book).size();

    const HammingClassifier initial(psi.entries(), config.theta, book);
    report.initial_decode_accuracy = decode_accuracy(initial, held_out);

    TrainConfig hamming_cfg = config.hamming;
    hamming_cfg.threads = config.workers;
    auto stage2 = train_hamming(train, book, hamming_cfg, config.theta, psi.entries());
    report.train_decode_accuracy = decode_accuracy(stage2.classifier, train);
    report.decode_accuracy = decode_accuracy(stage2.classifier, held_out);
    report.hamming_history = std::move(stage2.history);

    report.mean_intra_class_distance = mean_intra_class_distance(train, psi);
    report.mean_inter_class_distance = mean_inter_class_distance(book);

    const std::size_t rows = std::min(config.neighbor_classes, book.size());
    const std::size_t k = std::min(config.neighbor_k, book.size() - 1);
    for (std::size_t i = 0; i < rows; ++i) report.neighbors.push_back({i, book.label(i), top_k_neighbors(i, book, k)});

    report.head_size = hamming_head_report(book.size(), train.dim(), config.code_width, Precision::fp32);
    report.softmax_head_bytes = hocr::softmax_head_bytes(book.size(), train.dim(), Precision::fp32);
    return report;
}

std::optional<double> published_code_length_accuracy(std::size_t width) {
    switch (width) {
        case 256: return 81.86;
        case 512: return 82.39;
        case 1024: return 82.26;
        case 2048: return 82.31;
        default: return std::nullopt;
    }
}

std::vector<SweepRow> sweep_code_length(const ExperimentConfig& config, const std::vector<std::size_t>& widths) {
    std::vector<std::size_t> distinct;
    for (auto w : widths)
        if (std::find(distinct.begin(), distinct.end(), w) == distinct.end()) distinct.push_back(w);

    auto run_one = [&](std::size_t width) {
        ExperimentConfig c = config;
        c.code_width = width;
        c.workers = 1;
        const auto r = run_two_stage(c);
        SweepRow row;
        row.code_width = width;
        row.decode_accuracy = r.decode_accuracy;
        row.head_bytes = r.head_size.total_bytes();
        row.codebook_bytes = r.head_size.find("codebook")->bytes;
        row.reference_accuracy = published_code_length_accuracy(width);
        return row;
    };

    std::vector<SweepRow> rows(distinct.size());
    if (config.workers <= 1) {
        for (std::size_t i = 0; i < distinct.size(); ++i) rows[i] = run_one(distinct[i]);
        return rows;
    }
    // Sweep points are independent; results land in their own slot.
    for (std::size_t start = 0; start < distinct.size(); start += config.workers) {
        std::vector<std::future<SweepRow>> batch;
        const std::size_t stop = std::min(distinct.size(), start + config.workers);
        for (std::size_t i = start; i < stop; ++i) batch.push_back(std::async(std::launch::async, run_one, distinct[i]));
        for (std::size_t i = start; i < stop; ++i) rows[i] = batch[i - start].get();
    }
    return rows;
}

// --- JSON ---

namespace {

ordered_json spec_json(const SyntheticBankSpec& s) {
    ordered_json pairs = ordered_json::array();
    for (const auto& [a, b] : s.confusable_pairs) pairs.push_back({a, b});
    return {{"classes", s.classes},
            {"dim", s.dim},
            {"samples_per_class", s.samples_per_class},
            {"center_scale", s.center_scale},
            {"sigma", s.sigma},
            {"confusable_pairs", pairs},
            {"confusable_angle_deg", s.confusable_angle_deg},
            {"seed", s.seed}};
}

ordered_json train_json(const TrainConfig& t) {
    return {{"learning_rate", t.learning_rate}, {"decay_rate", t.decay_rate},
            {"batch_size", t.batch_size},       {"epochs", t.epochs},
            {"seed", t.seed},                   {"beta1", t.beta1},
            {"beta2", t.beta2},                 {"epsilon", t.epsilon},
            {"plateau_tolerance", t.plateau_tolerance}};
}

ordered_json config_json(const ExperimentConfig& c) {
    return {{"bank", spec_json(c.bank)},
            {"held_out_per_class", c.held_out_per_class},
            {"code_width", c.code_width},
            {"code_kind", to_string(c.code_kind)},
            {"projection_seed", c.projection_seed},
            {"max_conflict_retries", c.max_conflict_retries},
            {"redraw_on_conflict", c.redraw_on_conflict},
            {"theta", c.theta},
            {"softmax", train_json(c.softmax)},
            {"hamming", train_json(c.hamming)},
            {"neighbor_classes", c.neighbor_classes},
            {"neighbor_k", c.neighbor_k}};
}

ordered_json size_json(const SizeReport& r) {
    ordered_json items = ordered_json::array();
    for (const auto& i : r.items)
        items.push_back({{"name", i.name}, {"count", i.count}, {"bytes", i.bytes}, {"bit_packed", i.bit_packed},
                         {"mib", to_mib(i.bytes)}});
    const auto& a = r.assumptions;
    ordered_json assumptions = {{"backbone", a.backbone},
                                {"backbone_params", a.backbone_params},
                                {"d", a.d},
                                {"code_width", a.code_width},
                                {"classes", a.classes},
                                {"layers", a.layers},
                                {"heads", a.heads},
                                {"ffn_inner", a.ffn_inner},
                                {"hamming_classifier", a.hamming_classifier},
                                {"hamming_embedding", a.hamming_embedding},
                                {"use_ffn", a.use_ffn},
                                {"share_layers", a.share_layers},
                                {"store_embedding_projection", a.store_embedding_projection},
                                {"unit", "MiB (2^20 bytes)"}};
    return {{"title", r.title},
            {"precision", to_string(r.precision)},
            {"items", items},
            {"total_bytes", r.total_bytes()},
            {"total_mib", r.total_mib()},
            {"assumptions", assumptions}};
}

ordered_json history_json(const std::vector<EpochStat>& h) {
    ordered_json arr = ordered_json::array();
    for (const auto& s : h) arr.push_back({{"epoch", s.epoch}, {"mean_loss", s.mean_loss}, {"lr", s.learning_rate}});
    return arr;
}

ordered_json report_json(const ExperimentReport& r) {
    ordered_json neighbors = ordered_json::array();
    for (const auto& row : r.neighbors) {
        ordered_json list = ordered_json::array();
        for (const auto& n : row.neighbors) list.push_back({{"class_index", n.class_index}, {"distance", n.distance}});
        neighbors.push_back({{"class_index", row.class_index}, {"label", row.label}, {"neighbors", list}});
    }
    return {{"schema", ExperimentReport::kSchema},
            {"config", config_json(r.config)},
            {"conflict_count", r.conflict_count},
            {"projection_retries", r.projection_retries},
            {"softmax_train_accuracy", r.softmax_train_accuracy},
            {"softmax_held_out_accuracy", r.softmax_held_out_accuracy},
            {"initial_decode_accuracy", r.initial_decode_accuracy},
            {"train_decode_accuracy", r.train_decode_accuracy},
            {"decode_accuracy", r.decode_accuracy},
            {"mean_intra_class_distance", r.mean_intra_class_distance},
            {"mean_inter_class_distance", r.mean_inter_class_distance},
            {"neighbors", neighbors},
            {"softmax_history", history_json(r.softmax_history)},
            {"hamming_history", history_json(r.hamming_history)},
            {"head_size", size_json(r.head_size)},
            {"softmax_head_bytes", r.softmax_head_bytes}};
}

/// Field access that refuses unknown and missing keys.
class StrictObject {
public:
    StrictObject(const ordered_json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw FormatError(where_ + ": expected an object");
    }
    ~StrictObject() = default;

    const ordered_json& at(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw FormatError(where_ + ": missing field '" + key + "'");
        return j_.at(key);
    }
    template <typename T>
    T get(const std::string& key) {
        try {
            return at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where_ + "." + key + ": " + e.what());
        }
    }
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw FormatError(where_ + ": unknown field '" + k + "'");
    }

private:
    const ordered_json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

SyntheticBankSpec spec_from(const ordered_json& j) {
    StrictObject o(j, "config.bank");
    SyntheticBankSpec s;
    s.classes = o.get<std::size_t>("classes");
    s.dim = o.get<std::size_t>("dim");
    s.samples_per_class = o.get<std::size_t>("samples_per_class");
    s.center_scale = o.get<double>("center_scale");
    s.sigma = o.get<double>("sigma");
    for (const auto& p : o.at("confusable_pairs")) {
        if (!p.is_array() || p.size() != 2) throw FormatError("config.bank.confusable_pairs: expected [a, b]");
        s.confusable_pairs.emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
    }
    s.confusable_angle_deg = o.get<double>("confusable_angle_deg");
    s.seed = o.get<std::uint64_t>("seed");
    o.finish();
    return s;
}

TrainConfig train_from(const ordered_json& j, const std::string& where) {
    StrictObject o(j, where);
    TrainConfig t;
    t.learning_rate = o.get<double>("learning_rate");
    t.decay_rate = o.get<double>("decay_rate");
    t.batch_size = o.get<std::size_t>("batch_size");
    t.epochs = o.get<std::size_t>("epochs");
    t.seed = o.get<std::uint64_t>("seed");
    t.beta1 = o.get<double>("beta1");
    t.beta2 = o.get<double>("beta2");
    t.epsilon = o.get<double>("epsilon");
    t.plateau_tolerance = o.get<double>("plateau_tolerance");
    o.finish();
    return t;
}

ExperimentConfig config_from(const ordered_json& j) {
    StrictObject o(j, "config");
    ExperimentConfig c;
    c.bank = spec_from(o.at("bank"));
    c.held_out_per_class = o.get<std::size_t>("held_out_per_class");
    c.code_width = o.get<std::size_t>("code_width");
    const auto kind = o.get<std::string>("code_kind");
    if (kind == "lsh") c.code_kind = CodeKind::lsh;
    else if (kind == "random") c.code_kind = CodeKind::random;
    else throw FormatError("config.code_kind: unknown value '" + kind + "'");
    c.projection_seed = o.get<std::uint64_t>("projection_seed");
    c.max_conflict_retries = o.get<std::size_t>("max_conflict_retries");
    c.redraw_on_conflict = o.get<bool>("redraw_on_conflict");
    c.theta = o.get<double>("theta");
    c.softmax = train_from(o.at("softmax"), "config.softmax");
    c.hamming = train_from(o.at("hamming"), "config.hamming");
    c.neighbor_classes = o.get<std::size_t>("neighbor_classes");
    c.neighbor_k = o.get<std::size_t>("neighbor_k");
    o.finish();
    return c;
}

std::vector<EpochStat> history_from(const ordered_json& j, const std::string& where) {
    if (!j.is_array()) throw FormatError(where + ": expected an array");
    std::vector<EpochStat> h;
    for (const auto& e : j) {
        StrictObject o(e, where + "[]");
        h.push_back({o.get<std::size_t>("epoch"), o.get<double>("mean_loss"), o.get<double>("lr")});
        o.finish();
    }
    return h;
}

SizeReport size_from(const ordered_json& j) {
    StrictObject o(j, "head_size");
    SizeReport r;
    r.title = o.get<std::string>("title");
    r.precision = parse_precision(o.get<std::string>("precision"));
    for (const auto& item : o.at("items")) {
        StrictObject io(item, "head_size.items[]");
        SizeItem s{io.get<std::string>("name"), io.get<std::uint64_t>("count"), io.get<std::uint64_t>("bytes"),
                   io.get<bool>("bit_packed")};
        io.get<double>("mib");
        io.finish();
        r.items.push_back(std::move(s));
    }
    if (o.get<std::uint64_t>("total_bytes") != r.total_bytes()) throw FormatError("head_size: total_bytes mismatch");
    o.get<double>("total_mib");
    StrictObject a(o.at("assumptions"), "head_size.assumptions");
    auto& m = r.assumptions;
    m.backbone = a.get<std::string>("backbone");
    m.backbone_params = a.get<std::uint64_t>("backbone_params");
    m.d = a.get<std::size_t>("d");
    m.code_width = a.get<std::size_t>("code_width");
    m.classes = a.get<std::size_t>("classes");
    m.layers = a.get<std::size_t>("layers");
    m.heads = a.get<std::size_t>("heads");
    m.ffn_inner = a.get<std::size_t>("ffn_inner");
    m.hamming_classifier = a.get<bool>("hamming_classifier");
    m.hamming_embedding = a.get<bool>("hamming_embedding");
    m.use_ffn = a.get<bool>("use_ffn");
    m.share_layers = a.get<bool>("share_layers");
    m.store_embedding_projection = a.get<bool>("store_embedding_projection");
    a.get<std::string>("unit");
    m.precision = r.precision;
    a.finish();
    o.finish();
    return r;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string to_json(const ExperimentConfig& config) { return dump(config_json(config)); }
std::string to_json(const SizeReport& report) { return dump(size_json(report)); }
std::string to_json(const ExperimentReport& report) { return dump(report_json(report)); }

std::string ladder_to_json(const std::string& name, std::span<const LadderRow> rows) {
    ordered_json arr = ordered_json::array();
    for (const auto& row : rows) {
        ordered_json entry = size_json(row.report);
        entry["delta_bytes"] = row.delta_bytes;
        entry["delta_mib"] = static_cast<double>(row.delta_bytes) / kBytesPerMiB;
        entry["reference_mib"] = row.reference_mib ? ordered_json(*row.reference_mib) : ordered_json(nullptr);
        arr.push_back(std::move(entry));
    }
    return dump({{"schema", "hocr.ladder/1"}, {"name", name}, {"rows", arr}});
}

std::string sweep_to_json(const ExperimentConfig& config, std::span<const SweepRow> rows) {
    ordered_json arr = ordered_json::array();
    for (const auto& r : rows)
        arr.push_back({{"code_width", r.code_width},
                       {"decode_accuracy", r.decode_accuracy},
                       {"head_bytes", r.head_bytes},
                       {"codebook_bytes", r.codebook_bytes},
                       {"reference_accuracy",
                        r.reference_accuracy ? ordered_json(*r.reference_accuracy) : ordered_json(nullptr)}});
    return dump({{"schema", "hocr.sweep/1"},
                 {"config", config_json(config)},
                 {"note", "reference_accuracy values come from a 20,948-class recognizer trained on real images; "
                          "they are context only and are not expected to match synthetic-bank accuracy"},
                 {"rows", arr}});
}

ExperimentReport experiment_report_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("experiment report: ") + e.what());
    }
    StrictObject o(j, "report");
    if (o.get<std::string>("schema") != ExperimentReport::kSchema)
        throw FormatError("experiment report: unsupported schema");
    ExperimentReport r;
    r.config = config_from(o.at("config"));
    r.conflict_count = o.get<std::size_t>("conflict_count");
    r.projection_retries = o.get<std::size_t>("projection_retries");
    r.softmax_train_accuracy = o.get<double>("softmax_train_accuracy");
    r.softmax_held_out_accuracy = o.get<double>("softmax_held_out_accuracy");
    r.initial_decode_accuracy = o.get<double>("initial_decode_accuracy");
    r.train_decode_accuracy = o.get<double>("train_decode_accuracy");
    r.decode_accuracy = o.get<double>("decode_accuracy");
    if (r.decode_accuracy < 0.0 || r.decode_accuracy > 1.0) throw FormatError("report: accuracy outside [0, 1]");
    r.mean_intra_class_distance = o.get<double>("mean_intra_class_distance");
    r.mean_inter_class_distance = o.get<double>("mean_inter_class_distance");
    for (const auto& row : o.at("neighbors")) {
        StrictObject ro(row, "report.neighbors[]");
        NeighborRow nr;
        nr.class_index = ro.get<std::size_t>("class_index");
        nr.label = ro.get<std::string>("label");
        for (const auto& n : ro.at("neighbors")) {
            StrictObject no(n, "report.neighbors[].neighbors[]");
            nr.neighbors.push_back({no.get<std::size_t>("class_index"), no.get<std::size_t>("distance")});
            no.finish();
        }
        ro.finish();
        r.neighbors.push_back(std::move(nr));
    }
    r.softmax_history = history_from(o.at("softmax_history"), "report.softmax_history");
    r.hamming_history = history_from(o.at("hamming_history"), "report.hamming_history");
    r.head_size = size_from(o.at("head_size"));
    r.softmax_head_bytes = o.get<std::uint64_t>("softmax_head_bytes");
    o.finish();
    return r;
}

void print_size_report(std::ostream& out, const SizeReport& report) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-32s %14s %14s %10s\n", report.title.c_str(), "count", "bytes", "MiB");
    out << buf;
    for (const auto& i : report.items) {
        std::snprintf(buf, sizeof buf, "  %-30s %14llu %14llu %10.3f%s\n", i.name.c_str(),
                      static_cast<unsigned long long>(i.count), static_cast<unsigned long long>(i.bytes),
                      to_mib(i.bytes), i.bit_packed ? "  (bits)" : "");
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "  %-30s %14s %14llu %10.3f  [%s]\n", "total", "",
                  static_cast<unsigned long long>(report.total_bytes()), report.total_mib(),
                  to_string(report.precision));
    out << buf;
}

void print_ladder(std::ostream& out, const std::string& name, std::span<const LadderRow> rows) {
    char buf[160];
    out << "ladder: " << name << "\n";
    std::snprintf(buf, sizeof buf, "%-24s %10s %10s %10s %10s\n", "step", "MiB", "delta", "ref MiB", "ref delta");
    out << buf;
    std::optional<double> prev_ref;
    for (const auto& r : rows) {
        const double delta = static_cast<double>(r.delta_bytes) / kBytesPerMiB;
        std::string ref = "-", ref_delta = "-";
        if (r.reference_mib) {
            std::snprintf(buf, sizeof buf, "%.1f", *r.reference_mib);
            ref = buf;
            if (prev_ref) {
                std::snprintf(buf, sizeof buf, "%.1f", *prev_ref - *r.reference_mib);
                ref_delta = buf;
            }
        }
        std::snprintf(buf, sizeof buf, "%-24s %10.2f %10.2f %10s %10s\n", r.report.title.c_str(), r.report.total_mib(),
                      delta, ref.c_str(), ref_delta.c_str());
        out << buf;
        prev_ref = r.reference_mib;
    }
}

}  // namespace hocr
