#include "bscat/workflow.hpp"

#include "bscat/error.hpp"
#include "bscat/log.hpp"
#include "bscat/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace bscat {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Re-throws a module error with the stage that raised it.
template <class Fn>
auto in_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        throw Error(e.code(), stage + ": " + e.what());
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io_error, "cannot open '" + path.string() + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Writes through a temporary so readers never see a partial file.
void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::io_error, "cannot open '" + tmp.string() + "' for writing");
        out << text;
        if (!out) fail(ErrorCode::io_error, "write error on '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    }
    j["data"] = std::move(data);
    return j;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
        fail(ErrorCode::parse_error, "matrix shape does not match its data");
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    }
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const json& j) {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorCode::parse_error, "bad digest '" + s + "'");
    return v;
}

// Shortest text that parses back to the same double.
std::string fmt_exact(double v) {
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

KernelSpec kernel_from_json(const json& j) {
    KernelSpec spec = KernelSpec::parse(j.at("name").get<std::string>());
    const Eigen::VectorXd theta = vector_from_json(j.at("params"));
    if (theta.size() < 2) fail(ErrorCode::parse_error, "kernel parameter list is too short");
    spec.log_lengthscales.resize(theta.size() - 1);
    spec.set_params(theta);
    return spec;
}

json kernel_to_json(const KernelSpec& spec) {
    json j;
    j["name"] = spec.name();
    j["params"] = vector_to_json(spec.params());
    return j;
}

struct CacheAndManifest {
    FeatureCache cache;
    Manifest manifest;
};

CacheAndManifest load_aligned(const fs::path& cache_path, const fs::path& manifest_path,
                              std::optional<std::uint64_t> digest = std::nullopt) {
    CacheAndManifest d{read_cache(cache_path, digest), read_manifest(manifest_path)};
    if (static_cast<std::size_t>(d.cache.features.rows()) != d.manifest.records.size()) {
        fail(ErrorCode::size_mismatch, "feature cache '" + cache_path.string() + "' has " +
                                           std::to_string(d.cache.features.rows()) + " rows but manifest '" +
                                           manifest_path.string() + "' lists " +
                                           std::to_string(d.manifest.records.size()) + " records");
    }
    return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Features

std::size_t default_num_scales(std::size_t image_size) {
    std::size_t log2n = 0;
    while ((std::size_t{1} << (log2n + 1)) <= image_size) ++log2n;
    return log2n > 1 ? log2n - 1 : 1;
}

Eigen::MatrixXd extract_features(const Manifest& manifest, ScatteringConfig& cfg, std::size_t threads) {
    if (manifest.records.empty()) fail(ErrorCode::invalid_argument, "manifest has no records");
    std::vector<Image> images;
    images.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
        images.push_back(load_record_image(manifest, r));
        const Image& first = images.front();
        const Image& img = images.back();
        if (img.size() != first.size() || img.channels() != first.channels()) {
            fail(ErrorCode::size_mismatch, "record '" + r.source + "' is " + std::to_string(img.channels()) +
                                               "x" + std::to_string(img.size()) + "^2, expected " +
                                               std::to_string(first.channels()) + "x" +
                                               std::to_string(first.size()) + "^2");
        }
    }
    cfg.bank.image_size = images.front().size();
    if (cfg.bank.num_scales == 0) cfg.bank.num_scales = default_num_scales(cfg.bank.image_size);
    cfg.validate();
    const FilterBank bank(cfg.bank);
    const auto feats = scatter_batch(images, bank, cfg, std::max<std::size_t>(threads, 1));
    const auto dim = static_cast<Eigen::Index>(feats.front().values.size());
    Eigen::MatrixXd x(static_cast<Eigen::Index>(feats.size()), dim);
    for (std::size_t i = 0; i < feats.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) =
            Eigen::Map<const Eigen::RowVectorXd>(feats[i].values.data(), dim);
    }
    return x;
}

ExtractSummary extract_features_file(const fs::path& manifest_path, const fs::path& cache_path,
                                     ScatteringConfig cfg, std::size_t threads) {
    const Manifest m = read_manifest(manifest_path);
    FeatureCache cache;
    cache.features = extract_features(m, cfg, threads);
    cache.digest = cfg.digest();
    write_cache(cache_path, cache);
    return {static_cast<std::size_t>(cache.features.rows()), static_cast<std::size_t>(cache.features.cols()),
            cache.digest};
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= static_cast<std::size_t>(x.rows())) fail(ErrorCode::size_mismatch, "row index out of range");
        out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

Eigen::VectorXd select_rows(const Eigen::VectorXd& y, const std::vector<std::size_t>& rows) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= static_cast<std::size_t>(y.size())) fail(ErrorCode::size_mismatch, "row index out of range");
        out(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

FeaturePreprocessor FeaturePreprocessor::fit(const Eigen::MatrixXd& train, const PreprocessOptions& opts) {
    FeaturePreprocessor p;
    p.input_dim_ = static_cast<std::size_t>(train.cols());
    Eigen::MatrixXd z = train;
    if (opts.standardize) {
        p.standardizer_ = FeatureStandardizer::fit(train);
        z = p.standardizer_->transform(train);
    }
    if (opts.pca_retain) {
        const PCAProjector pca = PCAProjector::fit(z, *opts.pca_retain);
        p.pca_center_ = pca.center();
        p.pca_basis_ = pca.basis();
        p.pca_retain_ = pca.retain();
    }
    return p;
}

Eigen::MatrixXd FeaturePreprocessor::apply(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.cols()) != input_dim_) {
        fail(ErrorCode::size_mismatch, "features have " + std::to_string(x.cols()) + " columns, model expects " +
                                           std::to_string(input_dim_));
    }
    Eigen::MatrixXd z = standardizer_ ? standardizer_->transform(x) : x;
    if (pca_basis_.size() > 0) z = (z.rowwise() - pca_center_) * pca_basis_.transpose();
    return z;
}

std::string FeaturePreprocessor::to_json() const {
    json j;
    j["input_dim"] = input_dim_;
    if (standardizer_) {
        j["standardizer"] = {{"mean", matrix_to_json(standardizer_->mean())},
                             {"scale", matrix_to_json(standardizer_->scale())}};
    } else {
        j["standardizer"] = nullptr;
    }
    if (pca_basis_.size() > 0) {
        j["pca"] = {{"retain", pca_retain_}, {"center", matrix_to_json(pca_center_)},
                    {"basis", matrix_to_json(pca_basis_)}};
    } else {
        j["pca"] = nullptr;
    }
    return j.dump();
}

FeaturePreprocessor FeaturePreprocessor::from_json(const std::string& text) {
    const json j = json::parse(text);
    FeaturePreprocessor p;
    p.input_dim_ = j.at("input_dim").get<std::size_t>();
    if (!j.at("standardizer").is_null()) {
        const auto& s = j.at("standardizer");
        p.standardizer_ = FeatureStandardizer(matrix_from_json(s.at("mean")), matrix_from_json(s.at("scale")));
    }
    if (!j.at("pca").is_null()) {
        const auto& s = j.at("pca");
        p.pca_retain_ = s.at("retain").get<double>();
        p.pca_center_ = matrix_from_json(s.at("center"));
        p.pca_basis_ = matrix_from_json(s.at("basis"));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Models

std::string to_string(ModelKind k) { return k == ModelKind::gp ? "gp" : "svgp"; }

RegressionModel RegressionModel::fit_gp(const Eigen::MatrixXd& x_raw, const Eigen::VectorXd& y_raw,
                                        const GpFitOptions& opts, std::uint64_t feature_digest) {
    if (x_raw.rows() != y_raw.size()) fail(ErrorCode::size_mismatch, "feature/target row count mismatch");
    if (x_raw.rows() < 2) fail(ErrorCode::too_few_rows, "GP fit needs n >= 2");
    RegressionModel m;
    m.kind_ = ModelKind::gp;
    m.digest_ = feature_digest;
    m.prep_ = FeaturePreprocessor::fit(x_raw, opts.preprocess);
    m.gp_ = gp_fit(m.prep_.apply(x_raw), y_raw, KernelSpec::parse(opts.kernel), opts.optimizer);
    m.y_train_raw_ = y_raw;
    return m;
}

RegressionModel RegressionModel::fit_svgp(const Eigen::MatrixXd& x_raw, const Eigen::VectorXd& y_raw,
                                          const SvgpFitOptions& opts, std::uint64_t feature_digest) {
    if (x_raw.rows() != y_raw.size()) fail(ErrorCode::size_mismatch, "feature/target row count mismatch");
    if (x_raw.rows() < 2) fail(ErrorCode::too_few_rows, "SVGP fit needs n >= 2");
    RegressionModel m;
    m.kind_ = ModelKind::svgp;
    m.digest_ = feature_digest;
    m.prep_ = FeaturePreprocessor::fit(x_raw, opts.preprocess);
    m.svgp_ = svgp_fit(m.prep_.apply(x_raw), y_raw, KernelSpec::parse(opts.kernel), opts.svgp);
    return m;
}

PredictiveDistribution RegressionModel::predict(const Eigen::MatrixXd& x_raw) const {
    const Eigen::MatrixXd z = prep_.apply(x_raw);
    return kind_ == ModelKind::gp ? gp_predict(gp_, z) : svgp_predict(svgp_, z);
}

void RegressionModel::save(const fs::path& path) const {
    json j;
    j["format"] = "bscat-model";
    j["version"] = 1;
    j["kind"] = to_string(kind_);
    j["feature_digest"] = hex64(digest_);
    j["preprocess"] = json::parse(prep_.to_json());
    if (kind_ == ModelKind::gp) {
        j["kernel"] = kernel_to_json(gp_.spec);
        j["log_noise_variance"] = gp_.log_noise_variance;
        j["x_train"] = matrix_to_json(gp_.x_train);
        j["y_train_raw"] = vector_to_json(y_train_raw_);
        j["trace"] = {{"initial_neg_lml", gp_.trace.initial_neg_lml},
                      {"final_neg_lml", gp_.trace.final_neg_lml},
                      {"iterations", gp_.trace.iterations}};
    } else {
        j["kernel"] = kernel_to_json(svgp_.spec);
        j["log_noise_variance"] = svgp_.log_noise_variance;
        j["target_stats"] = {{"mean", svgp_.target_stats.mean}, {"std", svgp_.target_stats.std}};
        j["z"] = matrix_to_json(svgp_.z);
        j["m_u"] = vector_to_json(svgp_.m_u);
        j["l_u"] = matrix_to_json(svgp_.l_u);
    }
    write_text(path, j.dump() + "\n");
}

RegressionModel RegressionModel::load(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        const json j = json::parse(text);
        if (j.at("format").get<std::string>() != "bscat-model" || j.at("version").get<int>() != 1) {
            fail(ErrorCode::parse_error, "'" + path.string() + "' is not a version-1 bscat model");
        }
        RegressionModel m;
        const std::string kind = j.at("kind").get<std::string>();
        if (kind != "gp" && kind != "svgp") fail(ErrorCode::parse_error, "unknown model kind '" + kind + "'");
        m.kind_ = kind == "gp" ? ModelKind::gp : ModelKind::svgp;
        m.digest_ = parse_hex64(j.at("feature_digest").get<std::string>());
        m.prep_ = FeaturePreprocessor::from_json(j.at("preprocess").dump());
        const KernelSpec spec = kernel_from_json(j.at("kernel"));
        const double log_noise = j.at("log_noise_variance").get<double>();
        if (m.kind_ == ModelKind::gp) {
            m.y_train_raw_ = vector_from_json(j.at("y_train_raw"));
            // Refactorizing reproduces the fitted state exactly.
            m.gp_ = gp_condition(matrix_from_json(j.at("x_train")), m.y_train_raw_, spec, log_noise);
            const auto& t = j.at("trace");
            m.gp_.trace = {t.at("initial_neg_lml").get<double>(), t.at("final_neg_lml").get<double>(),
                           t.at("iterations").get<std::size_t>()};
        } else {
            SVGPState& s = m.svgp_;
            s.spec = spec;
            s.log_noise_variance = log_noise;
            s.target_stats = {j.at("target_stats").at("mean").get<double>(),
                              j.at("target_stats").at("std").get<double>()};
            s.z = matrix_from_json(j.at("z"));
            s.m_u = vector_from_json(j.at("m_u"));
            s.l_u = matrix_from_json(j.at("l_u"));
            if (s.m_u.size() != s.z.rows() || s.l_u.rows() != s.z.rows() || s.l_u.cols() != s.z.rows()) {
                fail(ErrorCode::parse_error, "SVGP model parameters disagree in size");
            }
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse_error, "model '" + path.string() + "': " + e.what());
    }
}

FitSummary fit_model_files(ModelKind kind, const fs::path& cache_path, const fs::path& manifest_path,
                           const GpFitOptions& gp_opts, const SvgpFitOptions& svgp_opts,
                           const fs::path& model_out) {
    const CacheAndManifest d = load_aligned(cache_path, manifest_path);
    const auto rows = d.manifest.indices(Split::train);
    if (rows.size() < 2) fail(ErrorCode::too_few_rows, "manifest has fewer than 2 train records");
    const Eigen::MatrixXd x = select_rows(d.cache.features, rows);
    const Eigen::VectorXd y = d.manifest.targets(Split::train);
    const RegressionModel m = kind == ModelKind::gp ? RegressionModel::fit_gp(x, y, gp_opts, d.cache.digest)
                                                    : RegressionModel::fit_svgp(x, y, svgp_opts, d.cache.digest);
    m.save(model_out);
    FitSummary s;
    s.kind = kind;
    s.n_train = rows.size();
    s.input_dim = m.input_dim();
    if (kind == ModelKind::gp) s.final_neg_lml = m.gp().trace.final_neg_lml;
    return s;
}

MetricsReport eval_model_files(const fs::path& model_path, const fs::path& cache_path,
                               const fs::path& manifest_path, const std::optional<fs::path>& metrics_out,
                               const std::optional<fs::path>& predictions_out) {
    const RegressionModel m = RegressionModel::load(model_path);
    const CacheAndManifest d = load_aligned(cache_path, manifest_path, m.feature_digest());
    const auto rows = d.manifest.indices(Split::test);
    if (rows.empty()) fail(ErrorCode::invalid_argument, "manifest has no test records");
    const PredictiveDistribution pred = m.predict(select_rows(d.cache.features, rows));
    const MetricsReport r = compute_metrics(pred, d.manifest.targets(Split::test));
    if (metrics_out) write_text(*metrics_out, r.to_json() + "\n");
    if (predictions_out) write_predictions(*predictions_out, pred);
    return r;
}

void write_predictions(const fs::path& path, const PredictiveDistribution& pred) {
    std::string out = "# target_mean=" + fmt_exact(pred.target_stats.mean) +
                      ",target_std=" + fmt_exact(pred.target_stats.std) + "\n";
    out += "mean,variance,standardized_mean,standardized_variance\n";
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        out += fmt_exact(pred.mean(i)) + ',' + fmt_exact(pred.variance(i)) + ',' +
               fmt_exact(pred.standardized_mean(i)) + ',' + fmt_exact(pred.standardized_variance(i)) + '\n';
    }
    write_text(path, out);
}

namespace {

double parse_double(const std::string& s, const std::string& where) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(*b))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(e[-1]))) --e;
    const auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e || b == e) fail(ErrorCode::parse_error, where + "'" + s + "' is not a number");
    return v;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

}  // namespace

PredictiveDistribution read_predictions(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    std::size_t lineno = 0;
    auto where = [&] { return path.string() + ":" + std::to_string(lineno) + ": "; };
    TargetStats stats;
    bool have_stats = false;
    bool have_header = false;
    std::vector<double> mean, var, smean, svar;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.rfind("# target_mean=", 0) == 0) {
            const auto comma = line.find(",target_std=");
            if (comma == std::string::npos) fail(ErrorCode::parse_error, where() + "malformed target statistics");
            stats.mean = parse_double(line.substr(14, comma - 14), where());
            stats.std = parse_double(line.substr(comma + 12), where());
            have_stats = true;
            continue;
        }
        if (!have_header) {
            if (line != "mean,variance,standardized_mean,standardized_variance") {
                fail(ErrorCode::parse_error, where() + "expected header 'mean,variance,standardized_mean,standardized_variance'");
            }
            have_header = true;
            continue;
        }
        const auto f = split_on(line, ',');
        if (f.size() != 4) fail(ErrorCode::parse_error, where() + "expected 4 fields");
        mean.push_back(parse_double(f[0], where()));
        var.push_back(parse_double(f[1], where()));
        smean.push_back(parse_double(f[2], where()));
        svar.push_back(parse_double(f[3], where()));
    }
    if (!have_stats || !have_header) fail(ErrorCode::parse_error, path.string() + ": not a predictions file");
    auto vec = [](const std::vector<double>& v) {
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    PredictiveDistribution p;
    p.mean = vec(mean);
    p.variance = vec(var);
    p.standardized_mean = vec(smean);
    p.standardized_variance = vec(svar);
    p.target_stats = stats;
    return p;
}

Eigen::VectorXd read_truth(const fs::path& path) {
    const std::string text = read_text(path);
    if (text.rfind(kManifestMagic, 0) == 0) return read_manifest(path).targets(Split::test);
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    std::vector<double> values;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != "target") {
                fail(ErrorCode::parse_error, path.string() + ":" + std::to_string(lineno) +
                                                 ": expected a manifest or a CSV with header 'target'");
            }
            header = true;
            continue;
        }
        const double v = parse_double(line, path.string() + ":" + std::to_string(lineno) + ": ");
        if (!std::isfinite(v)) fail(ErrorCode::parse_error, path.string() + ":" + std::to_string(lineno) + ": non-finite target");
        values.push_back(v);
    }
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

MetricsReport metrics_report_files(const fs::path& predictions_path, const fs::path& truth_path) {
    return compute_metrics(read_predictions(predictions_path), read_truth(truth_path));
}

// ---------------------------------------------------------------------------
// Bayesian optimization

BOTrace bo_run_files(const fs::path& cache_path, const fs::path& manifest_path, const BOConfig& cfg,
                     bool random_baseline, const std::optional<fs::path>& trace_out) {
    const CacheAndManifest d = load_aligned(cache_path, manifest_path);
    const Eigen::VectorXd values = d.manifest.all_targets();
    const Oracle oracle = [&](std::size_t i) { return values(static_cast<Eigen::Index>(i)); };
    const BOTrace t = random_baseline ? random_search(d.cache.features, oracle, cfg)
                                      : run_bo(d.cache.features, oracle, cfg);
    if (trace_out) write_text(*trace_out, t.to_csv());
    return t;
}

// ---------------------------------------------------------------------------
// Pipeline configuration

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
        fail(ErrorCode::invalid_config, "key '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
        fail(ErrorCode::invalid_config, "key '" + key + "' expects a number, got '" + v + "'");
    }
    return out;
}

bool parse_flag(const std::string& key, const std::string& v) {
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    fail(ErrorCode::invalid_config, "key '" + key + "' expects true or false, got '" + v + "'");
}

template <class Fn>
auto as_config_error(const std::string& key, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        throw Error(ErrorCode::invalid_config, "key '" + key + "': " + e.what());
    }
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : " ") + s;
    return out;
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (key == "seed") {
        seed = parse_count(key, v);
    } else if (key == "out") {
        if (v.empty()) fail(ErrorCode::invalid_config, "key 'out' needs a directory");
        out_dir = v;
    } else if (key == "threads") {
        threads = parse_count(key, v);
    } else if (key == "task") {
        task = as_config_error(key, [&] { return parse_task(v); });
    } else if (key == "shift") {
        shift = v;
    } else if (key == "image_size") {
        image_size = parse_count(key, v);
    } else if (key == "n_train") {
        n_train = parse_count(key, v);
    } else if (key == "n_test") {
        n_test = parse_count(key, v);
    } else if (key == "splits") {
        splits = parse_count(key, v);
    } else if (key == "split_fraction") {
        split_fraction = parse_real(key, v);
    } else if (key == "j") {
        j = v == "auto" ? 0 : parse_count(key, v);
    } else if (key == "l") {
        l = parse_count(key, v);
    } else if (key == "order") {
        order = parse_count(key, v);
    } else if (key == "variants") {
        variants.clear();
        for (const auto& w : words(v)) variants.push_back(as_config_error(key, [&] { return parse_variant(w); }));
    } else if (key == "kernels") {
        kernels = words(v);
        for (const auto& k : kernels) as_config_error(key, [&] { return KernelSpec::parse(k); });
    } else if (key == "model") {
        if (v != "gp" && v != "svgp") fail(ErrorCode::invalid_config, "key 'model' expects gp or svgp");
        model = v == "gp" ? ModelKind::gp : ModelKind::svgp;
    } else if (key == "trivial") {
        trivial = parse_flag(key, v);
    } else if (key == "gp_iters") {
        gp_iters = parse_count(key, v);
    } else if (key == "gp_lr") {
        gp_lr = parse_real(key, v);
    } else if (key == "svgp_inducing") {
        svgp_inducing = parse_count(key, v);
    } else if (key == "svgp_batch") {
        svgp_batch = parse_count(key, v);
    } else if (key == "svgp_steps") {
        svgp_steps = parse_count(key, v);
    } else if (key == "svgp_lr") {
        svgp_lr = parse_real(key, v);
    } else if (key == "standardize_features") {
        preprocess.standardize = parse_flag(key, v);
    } else if (key == "pca") {
        if (v == "off" || v == "none") {
            preprocess.pca_retain.reset();
        } else {
            preprocess.pca_retain = parse_real(key, v);
        }
    } else if (key == "bo") {
        bo = parse_flag(key, v);
    } else if (key == "bo_task") {
        bo_task = as_config_error(key, [&] { return parse_task(v); });
    } else if (key == "bo_pool") {
        bo_pool = parse_count(key, v);
    } else if (key == "bo_init") {
        bo_init = parse_count(key, v);
    } else if (key == "bo_iters") {
        bo_iters = parse_count(key, v);
    } else if (key == "bo_seeds") {
        bo_seeds = parse_count(key, v);
    } else if (key == "bo_kernel") {
        as_config_error(key, [&] { return KernelSpec::parse(v); });
        bo_kernel = v;
    } else if (key == "bo_variant") {
        bo_variant = as_config_error(key, [&] { return parse_variant(v); });
    } else if (key == "bo_refit_every") {
        bo_refit_every = parse_count(key, v);
    } else if (key == "bo_gp_iters") {
        bo_gp_iters = parse_count(key, v);
    } else if (key == "bo_random_search") {
        bo_random_search = parse_flag(key, v);
    } else {
        fail(ErrorCode::invalid_config, "unknown configuration key '" + key + "'");
    }
}

PipelineConfig PipelineConfig::parse(const std::string& text, const std::string& origin) {
    PipelineConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) fail(ErrorCode::invalid_config, where + "expected 'key = value'");
        try {
            cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const Error& e) {
            throw Error(e.code(), where + e.what());
        }
    }
    return cfg;
}

PipelineConfig PipelineConfig::load(const fs::path& path) { return parse(read_text(path), path.string()); }

std::size_t PipelineConfig::resolved_j() const {
    return j != 0 ? j : default_num_scales(image_size);
}

std::string PipelineConfig::to_text() const {
    std::vector<std::string> vs;
    for (Variant v : variants) vs.push_back(to_string(v));
    std::ostringstream o;
    o << "seed = " << seed << "\n"
      << "out = " << out_dir.string() << "\n"
      << "threads = " << threads << "\n"
      << "task = " << to_string(task) << "\n"
      << "shift = " << shift << "\n"
      << "image_size = " << image_size << "\n"
      << "n_train = " << n_train << "\n"
      << "n_test = " << n_test << "\n"
      << "splits = " << splits << "\n"
      << "split_fraction = " << fmt_exact(split_fraction) << "\n"
      << "j = " << resolved_j() << "\n"
      << "l = " << l << "\n"
      << "order = " << order << "\n"
      << "variants = " << join(vs) << "\n"
      << "kernels = " << join(kernels) << "\n"
      << "model = " << to_string(model) << "\n"
      << "trivial = " << (trivial ? "true" : "false") << "\n"
      << "gp_iters = " << gp_iters << "\n"
      << "gp_lr = " << fmt_exact(gp_lr) << "\n"
      << "svgp_inducing = " << svgp_inducing << "\n"
      << "svgp_batch = " << svgp_batch << "\n"
      << "svgp_steps = " << svgp_steps << "\n"
      << "svgp_lr = " << fmt_exact(svgp_lr) << "\n"
      << "standardize_features = " << (preprocess.standardize ? "true" : "false") << "\n"
      << "pca = ";
    if (preprocess.pca_retain) {
        o << fmt_exact(*preprocess.pca_retain);
    } else {
        o << "off";
    }
    o << "\n"
      << "bo = " << (bo ? "true" : "false") << "\n"
      << "bo_task = " << to_string(bo_task) << "\n"
      << "bo_pool = " << bo_pool << "\n"
      << "bo_init = " << bo_init << "\n"
      << "bo_iters = " << bo_iters << "\n"
      << "bo_seeds = " << bo_seeds << "\n"
      << "bo_kernel = " << bo_kernel << "\n"
      << "bo_variant = " << to_string(bo_variant) << "\n"
      << "bo_refit_every = " << bo_refit_every << "\n"
      << "bo_gp_iters = " << bo_gp_iters << "\n"
      << "bo_random_search = " << (bo_random_search ? "true" : "false") << "\n";
    return o.str();
}

void PipelineConfig::validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::invalid_config, m); };
    if (splits < 1) bad("splits must be >= 1");
    if (!(split_fraction > 0.0 && split_fraction <= 1.0)) bad("split_fraction must lie in (0, 1]");
    if (!runs_regression() && !bo) bad("nothing to run: no variants, trivial = false and bo = false");
    if (runs_regression()) {
        if (n_train < 2) bad("n_train must be >= 2");
        if (n_test < 1) bad("n_test must be >= 1");
        if (static_cast<std::size_t>(std::floor(split_fraction * static_cast<double>(n_train))) < 2) {
            bad("split_fraction * n_train leaves fewer than 2 training rows");
        }
        SynthSpec::preset(task, shift, seed, image_size).validate();
    }
    if (!variants.empty() && kernels.empty()) bad("kernels must list at least one kernel");
    if (threads < 1) bad("threads must be >= 1");
    if (preprocess.pca_retain && !(*preprocess.pca_retain > 0.0 && *preprocess.pca_retain <= 1.0)) {
        bad("pca must be 'off' or a fraction in (0, 1]");
    }
    ScatteringConfig sc;
    sc.bank = {image_size, resolved_j(), l};
    sc.max_order = order;
    sc.validate();
    if (bo) {
        SynthSpec::preset(bo_task, "none", seed, image_size).validate();
        if (bo_seeds < 1) bad("bo_seeds must be >= 1");
        BOConfig b;
        b.n_init = bo_init;
        b.n_iters = bo_iters;
        b.pool_size = bo_pool;
        b.refit_every = bo_refit_every;
        b.validate(bo_pool);
    }
}

SplitIndices synchronized_split(std::uint64_t seed, std::size_t split, std::size_t n_train, std::size_t n_test,
                                double fraction) {
    auto draw = [&](const char* stream, std::size_t n) {
        const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));
        Rng rng(derive_seed(seed, stream, split));
        auto idx = sample_without_replacement(rng, n, std::min(k, n));
        std::sort(idx.begin(), idx.end());
        return idx;
    };
    return {draw("pipeline.split.train", n_train), draw("pipeline.split.test", n_test)};
}

MeanStd mean_std(const std::vector<double>& values) {
    if (values.empty()) return {};
    const double base = values.front();
    double shift = 0.0;
    for (double v : values) shift += v - base;
    shift /= static_cast<double>(values.size());
    MeanStd out{base + shift, 0.0};
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - base - shift) * (v - base - shift);
        out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline execution

namespace {

struct MethodRuns {
    std::string name;
    std::vector<MetricsReport> reports;
};

const char* const kMetricNames[] = {"rmse", "rmse_standardized", "nll", "qce", "pi_mu", "pi_sigma"};

double metric_value(const MetricsReport& r, const std::string& name) {
    if (name == "rmse") return r.rmse;
    if (name == "rmse_standardized") return r.rmse_standardized;
    if (name == "nll") return r.nll;
    if (name == "qce") return r.qce;
    if (name == "pi_mu") return r.pi_mu;
    return r.pi_sigma;
}

std::string method_name(ModelKind model, Variant v, const std::string& kernel) {
    std::string k = kernel;
    std::replace(k.begin(), k.end(), ',', '_');
    return to_string(model) + "-" + to_string(v) + "-" + k;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Mean and normal-approximation 95% interval per step across seeds.
std::string regret_curve_csv(const std::vector<BOTrace>& traces, std::size_t n_init, std::size_t n_iters) {
    std::string out = "step,mean,ci_low,ci_high,normalized_mean,normalized_ci_low,normalized_ci_high\n";
    for (std::size_t step = 0; step <= n_iters; ++step) {
        std::vector<double> raw, norm;
        for (const auto& t : traces) {
            const double r = t.records.at(n_init - 1 + step).regret;
            const double r0 = t.initial_regret();
            raw.push_back(r);
            norm.push_back(r0 > 0.0 ? r / r0 : 0.0);
        }
        const MeanStd a = mean_std(raw);
        const MeanStd b = mean_std(norm);
        const double k = kInterval95 / std::sqrt(static_cast<double>(traces.size()));
        out += std::to_string(step) + ',' + fmt_exact(a.mean) + ',' + fmt_exact(a.mean - k * a.std) + ',' +
               fmt_exact(a.mean + k * a.std) + ',' + fmt_exact(b.mean) + ',' + fmt_exact(b.mean - k * b.std) + ',' +
               fmt_exact(b.mean + k * b.std) + '\n';
    }
    return out;
}

std::string cell(const MeanStd& m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f ± %.3f", m.mean, m.std);
    return buf;
}

// Synthetic data, features per variant and every method on every split.
std::vector<MethodRuns> run_regression(const PipelineConfig& cfg, const fs::path& out) {
    // Data.
    const SynthSpec spec = SynthSpec::preset(cfg.task, cfg.shift, derive_seed(cfg.seed, "pipeline.synth"), cfg.image_size);
    const fs::path manifest_path = in_stage("synth gen", [&] {
        return write_synth_dataset(spec, cfg.n_train, cfg.n_test, out / "data");
    });
    const Manifest manifest = read_manifest(manifest_path);
    const auto train_rows = manifest.indices(Split::train);
    const auto test_rows = manifest.indices(Split::test);
    const Eigen::VectorXd y_train_all = manifest.targets(Split::train);
    const Eigen::VectorXd y_test_all = manifest.targets(Split::test);

    // Features, one cache per variant.
    struct VariantFeatures {
        Variant variant;
        Eigen::MatrixXd train;
        Eigen::MatrixXd test;
        std::uint64_t digest = 0;
    };
    std::vector<VariantFeatures> features;
    for (Variant v : cfg.variants) {
        ScatteringConfig sc;
        sc.bank.num_scales = cfg.resolved_j();
        sc.bank.num_angles = cfg.l;
        sc.max_order = cfg.order;
        sc.variant = v;
        const std::string stage = "features extract (" + to_string(v) + ")";
        log_info(stage);
        FeatureCache cache;
        cache.features = in_stage(stage, [&] { return extract_features(manifest, sc, cfg.threads); });
        cache.digest = sc.digest();
        write_cache(out / "features" / (to_string(v) + ".bscf"), cache);
        features.push_back({v, select_rows(cache.features, train_rows), select_rows(cache.features, test_rows),
                            cache.digest});
    }

    std::vector<MethodRuns> methods;
    if (cfg.trivial) methods.push_back({"trivial", {}});
    for (const auto& f : features) {
        for (const auto& k : cfg.kernels) methods.push_back({method_name(cfg.model, f.variant, k), {}});
    }

    json split_index_json = json::array();
    for (std::size_t s = 0; s < cfg.splits; ++s) {
        const SplitIndices split =
            synchronized_split(cfg.seed, s, train_rows.size(), test_rows.size(), cfg.split_fraction);
        split_index_json.push_back({{"split", s}, {"train", split.train}, {"test", split.test}});
        const Eigen::VectorXd ytr = select_rows(y_train_all, split.train);
        const Eigen::VectorXd yte = select_rows(y_test_all, split.test);
        const fs::path split_dir = out / "splits" / ("split_" + std::to_string(s));
        std::size_t mi = 0;
        if (cfg.trivial) {
            methods[mi].reports.push_back(trivial_baseline(ytr, yte));
            write_text(split_dir / "trivial.json", methods[mi].reports.back().to_json() + "\n");
            ++mi;
        }
        for (const auto& f : features) {
            const Eigen::MatrixXd xtr = select_rows(f.train, split.train);
            const Eigen::MatrixXd xte = select_rows(f.test, split.test);
            for (const auto& k : cfg.kernels) {
                MethodRuns& m = methods[mi++];
                const std::string stage = m.name + " split " + std::to_string(s);
                log_info(stage);
                const RegressionModel model = in_stage(stage, [&] {
                    if (cfg.model == ModelKind::gp) {
                        GpFitOptions o;
                        o.kernel = k;
                        o.optimizer.iterations = cfg.gp_iters;
                        o.optimizer.learning_rate = cfg.gp_lr;
                        o.optimizer.seed = derive_seed(cfg.seed, "pipeline.gp", s);
                        o.preprocess = cfg.preprocess;
                        return RegressionModel::fit_gp(xtr, ytr, o, f.digest);
                    }
                    SvgpFitOptions o;
                    o.kernel = k;
                    o.svgp.num_inducing = cfg.svgp_inducing;
                    o.svgp.batch_size = cfg.svgp_batch;
                    o.svgp.steps = cfg.svgp_steps;
                    o.svgp.learning_rate = cfg.svgp_lr;
                    o.svgp.seed = derive_seed(cfg.seed, "pipeline.svgp", s);
                    o.preprocess = cfg.preprocess;
                    return RegressionModel::fit_svgp(xtr, ytr, o, f.digest);
                });
                m.reports.push_back(in_stage(stage, [&] { return compute_metrics(model.predict(xte), yte); }));
                write_text(split_dir / (m.name + ".json"), m.reports.back().to_json() + "\n");
                if (cfg.model == ModelKind::gp) {
                    const GPState& st = model.gp();
                    json fit;
                    fit["kernel"] = st.spec.name();
                    fit["initial_neg_lml"] = st.trace.initial_neg_lml;
                    fit["final_neg_lml"] = st.trace.final_neg_lml;
                    fit["iterations"] = st.trace.iterations;
                    fit["noise_variance"] = st.noise_variance();
                    write_text(split_dir / (m.name + ".fit.json"), fit.dump(2) + "\n");
                }
            }
        }
    }
    write_text(out / "splits" / "indices.json", split_index_json.dump() + "\n");
    return methods;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    write_text(out / "config.txt", cfg.to_text());

    std::vector<MethodRuns> methods;
    if (cfg.runs_regression()) methods = run_regression(cfg, out);

    // Aggregate table.
    json summary;
    summary["seed"] = cfg.seed;
    summary["task"] = to_string(cfg.task);
    summary["shift"] = cfg.shift;
    summary["splits"] = cfg.splits;
    summary["split_fraction"] = cfg.split_fraction;
    summary["methods"] = json::array();
    std::ostringstream table;
    table << std::left;
    if (!methods.empty()) {
        table << std::setw(28) << "method";
        for (const char* name : kMetricNames) table << std::setw(22) << name;
        table << "\n";
    }
    for (const auto& m : methods) {
        json entry;
        entry["name"] = m.name;
        table << std::setw(28) << m.name;
        for (const char* name : kMetricNames) {
            std::vector<double> v;
            for (const auto& r : m.reports) v.push_back(metric_value(r, name));
            const MeanStd ms = mean_std(v);
            entry[name] = {{"mean", ms.mean}, {"std", ms.std}};
            // setw counts bytes and the plus-minus sign takes two.
            table << std::setw(23) << cell(ms);
        }
        table << "\n";
        summary["methods"].push_back(std::move(entry));
    }

    if (cfg.bo) {
        const SynthSpec pool_spec =
            SynthSpec::preset(cfg.bo_task, "none", derive_seed(cfg.seed, "pipeline.bo.synth"), cfg.image_size);
        const fs::path pool_manifest = in_stage("bo pool", [&] {
            return write_synth_dataset(pool_spec, cfg.bo_pool, 0, out / "bo_data");
        });
        const Manifest pm = read_manifest(pool_manifest);
        ScatteringConfig sc;
        sc.bank.num_scales = cfg.resolved_j();
        sc.bank.num_angles = cfg.l;
        sc.max_order = cfg.order;
        sc.variant = cfg.bo_variant;
        FeatureCache pool;
        pool.features = in_stage("bo features", [&] { return extract_features(pm, sc, cfg.threads); });
        pool.digest = sc.digest();
        write_cache(out / "features" / ("bo_" + to_string(cfg.bo_variant) + ".bscf"), pool);
        const Eigen::VectorXd values = pm.all_targets();
        const Oracle oracle = [&](std::size_t i) { return values(static_cast<Eigen::Index>(i)); };

        std::vector<BOTrace> bo_traces, rs_traces;
        for (std::size_t k = 0; k < cfg.bo_seeds; ++k) {
            BOConfig b;
            b.n_init = cfg.bo_init;
            b.n_iters = cfg.bo_iters;
            b.pool_size = cfg.bo_pool;
            b.kernel = KernelSpec::parse(cfg.bo_kernel);
            b.refit_every = cfg.bo_refit_every;
            b.gp_iterations = cfg.bo_gp_iters;
            b.seed = derive_seed(cfg.seed, "pipeline.bo", k);
            const std::string stage = "bo run seed " + std::to_string(k);
            log_info(stage);
            bo_traces.push_back(in_stage(stage, [&] { return run_bo(pool.features, oracle, b); }));
            write_text(out / "bo" / ("bo_seed" + std::to_string(k) + ".csv"), bo_traces.back().to_csv());
            if (cfg.bo_random_search) {
                rs_traces.push_back(in_stage(stage, [&] { return random_search(pool.features, oracle, b); }));
                write_text(out / "bo" / ("random_seed" + std::to_string(k) + ".csv"), rs_traces.back().to_csv());
            }
        }
        json bo_summary = json::array();
        auto describe = [&](const std::string& name, const std::vector<BOTrace>& traces) {
            if (traces.empty()) return;
            write_text(out / "bo" / ("regret_" + name + ".csv"), regret_curve_csv(traces, cfg.bo_init, cfg.bo_iters));
            std::vector<double> final_regret, normalized;
            for (const auto& t : traces) {
                final_regret.push_back(t.final_regret());
                const double r0 = t.initial_regret();
                normalized.push_back(r0 > 0.0 ? t.final_regret() / r0 : 0.0);
            }
            bo_summary.push_back({{"name", name},
                                  {"final_regret", final_regret},
                                  {"median_final_regret", median(final_regret)},
                                  {"normalized_regret", normalized},
                                  {"median_normalized_regret", median(normalized)}});
            char line[128];
            std::snprintf(line, sizeof line, "median final regret %.4g, median normalized %.4g",
                          median(final_regret), median(normalized));
            table << "\n" << std::setw(28) << ("bo:" + name) << line;
        };
        describe("bo", bo_traces);
        describe("random", rs_traces);
        table << "\n";
        summary["bo"] = std::move(bo_summary);
    }

    PipelineResult result;
    result.summary_json = out / "summary.json";
    result.summary_text = out / "summary.txt";
    result.table = table.str();
    write_text(result.summary_json, summary.dump(2) + "\n");
    write_text(result.summary_text, result.table);
    return result;
}

}  // namespace bscat
