// The C API is checked against the C++ core it wraps: identical numbers,
// status codes that match the core's error codes, and buffer contracts.

#include "bscat/bscat.h"
#include "bscat/error.hpp"
#include "bscat/scattering.hpp"
#include "bscat/workflow.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::vector<double> gaussian(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> g;
    std::vector<double> v(n);
    for (double& x : v) x = g(rng);
    return v;
}

struct Owned {
    char* s = nullptr;
    ~Owned() { bscat_free_string(s); }
};

}  // namespace

TEST(CApi, StatusValuesMatchCoreErrorCodes) {
    EXPECT_EQ(static_cast<int>(BSCAT_E_CHOLESKY_FAILURE), static_cast<int>(bscat::ErrorCode::cholesky_failure));
    EXPECT_EQ(static_cast<int>(BSCAT_E_INTERNAL), static_cast<int>(bscat::ErrorCode::internal));
    EXPECT_STREQ(bscat_status_name(BSCAT_E_CHOLESKY_FAILURE), "cholesky-failure");
    EXPECT_TRUE(bscat_status_is_numerical(BSCAT_E_CHOLESKY_FAILURE));
    EXPECT_TRUE(bscat_status_is_numerical(BSCAT_E_NON_FINITE_INPUT));
    EXPECT_FALSE(bscat_status_is_numerical(BSCAT_E_INVALID_CONFIG));
    EXPECT_FALSE(bscat_status_is_numerical(BSCAT_OK));
    EXPECT_NE(std::string(bscat_version()), "");
}

TEST(CApi, ErrorsSetLastError) {
    bscat_gp_options opts;
    bscat_gp_options_default(&opts);
    opts.kernel = "cubic";
    const double x[4] = {0.0, 1.0, 2.0, 3.0};
    const double y[2] = {1.0, 2.0};
    bscat_model* model = nullptr;
    EXPECT_NE(bscat_gp_fit(x, 2, 2, y, &opts, &model), BSCAT_OK);
    EXPECT_EQ(model, nullptr);  // untouched on failure
    EXPECT_NE(std::string(bscat_last_error()).find("cubic"), std::string::npos) << bscat_last_error();

    EXPECT_EQ(bscat_gp_fit(nullptr, 2, 2, y, &opts, &model), BSCAT_E_INVALID_ARGUMENT);
    EXPECT_EQ(bscat_set_log_level(7), BSCAT_E_INVALID_ARGUMENT);

    bscat_model* loaded = nullptr;
    EXPECT_EQ(bscat_model_load("/nonexistent/model.json", &loaded), BSCAT_E_IO);
    Owned text;
    const char* bad[] = {"no_such_key=1"};
    EXPECT_EQ(bscat_pipeline_config(nullptr, bad, 1, &text.s), BSCAT_E_INVALID_CONFIG);
    EXPECT_NE(std::string(bscat_last_error()).find("no_such_key"), std::string::npos);
}

TEST(CApi, NonFiniteInputIsNumerical) {
    bscat_gp_options opts;
    bscat_gp_options_default(&opts);
    opts.iters = 5;
    const double x[3] = {0.0, 1.0, 2.0};
    const double y[3] = {1.0, NAN, 2.0};
    bscat_model* model = nullptr;
    const bscat_status st = bscat_gp_fit(x, 3, 1, y, &opts, &model);
    EXPECT_EQ(st, BSCAT_E_NON_FINITE_INPUT);
    EXPECT_TRUE(bscat_status_is_numerical(st));
}

TEST(CApi, ScatterMatchesCore) {
    bscat_scatter_options o;
    bscat_scatter_options_default(&o);
    o.l = 4;
    size_t dim = 0;
    ASSERT_EQ(bscat_feature_count(&o, 16, 1, &dim), BSCAT_OK);

    bscat::ScatteringConfig cfg;
    cfg.bank = {16, 3, 4};
    cfg.max_order = 2;
    cfg.variant = bscat::Variant::global;
    EXPECT_EQ(dim, bscat::count_features(cfg, 16, 1));
    // n = 0 is a valid size query.
    EXPECT_EQ(bscat_scatter(nullptr, 0, 1, 16, &o, nullptr, 0), BSCAT_OK);

    std::mt19937_64 rng(4);
    const auto pixels = gaussian(rng, 2 * 16 * 16);
    std::vector<double> out(2 * dim);
    EXPECT_EQ(bscat_scatter(pixels.data(), 2, 1, 16, &o, out.data(), out.size() - 1), BSCAT_E_SIZE_MISMATCH);
    ASSERT_EQ(bscat_scatter(pixels.data(), 2, 1, 16, &o, out.data(), out.size()), BSCAT_OK);

    const bscat::FilterBank bank(cfg.bank);
    for (std::size_t i = 0; i < 2; ++i) {
        const bscat::Image img(1, 16, std::vector<double>(pixels.begin() + i * 256, pixels.begin() + (i + 1) * 256));
        const auto f = bscat::scatter(img, bank, cfg);
        ASSERT_EQ(f.values.size(), dim);
        EXPECT_EQ(0, std::memcmp(f.values.data(), out.data() + i * dim, dim * sizeof(double)));
    }
}

TEST(CApi, GpFitPredictSaveLoadMatchesCore) {
    std::mt19937_64 rng(9);
    const std::size_t n = 30, d = 2, m = 7;
    const auto x = gaussian(rng, n * d);
    const auto xs = gaussian(rng, m * d);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = 5.0 + std::sin(x[2 * i]) + 0.5 * x[2 * i + 1];

    bscat_gp_options opts;
    bscat_gp_options_default(&opts);
    opts.kernel = "rbf,ard";
    opts.iters = 30;
    bscat_model* model = nullptr;
    ASSERT_EQ(bscat_gp_fit(x.data(), n, d, y.data(), &opts, &model), BSCAT_OK) << bscat_last_error();
    bscat_model_kind kind;
    size_t in_dim = 0;
    ASSERT_EQ(bscat_model_info(model, &kind, &in_dim), BSCAT_OK);
    EXPECT_EQ(kind, BSCAT_MODEL_GP);
    EXPECT_EQ(in_dim, d);

    std::vector<double> mean(m), var(m);
    ASSERT_EQ(bscat_model_predict(model, xs.data(), m, d, mean.data(), var.data()), BSCAT_OK);
    EXPECT_EQ(bscat_model_predict(model, xs.data(), m, d + 1, mean.data(), var.data()), BSCAT_E_SIZE_MISMATCH);

    // Same fit through the core.
    Eigen::MatrixXd ex(n, d), exs(m, d);
    for (std::size_t i = 0; i < n * d; ++i) ex(static_cast<Eigen::Index>(i / d), static_cast<Eigen::Index>(i % d)) = x[i];
    for (std::size_t i = 0; i < m * d; ++i) exs(static_cast<Eigen::Index>(i / d), static_cast<Eigen::Index>(i % d)) = xs[i];
    bscat::GpFitOptions core;
    core.kernel = "rbf,ard";
    core.optimizer.iterations = 30;
    const auto ref = bscat::RegressionModel::fit_gp(ex, Eigen::Map<const Eigen::VectorXd>(y.data(), n), core);
    const auto p = ref.predict(exs);
    for (std::size_t i = 0; i < m; ++i) {
        EXPECT_EQ(mean[i], p.mean(static_cast<Eigen::Index>(i)));
        EXPECT_EQ(var[i], p.variance(static_cast<Eigen::Index>(i)));
    }

    const fs::path file = fs::temp_directory_path() / ("bscat_capi_" + std::to_string(std::random_device{}()) + ".json");
    ASSERT_EQ(bscat_model_save(model, file.c_str()), BSCAT_OK);
    bscat_model* loaded = nullptr;
    ASSERT_EQ(bscat_model_load(file.c_str(), &loaded), BSCAT_OK);
    std::vector<double> mean2(m);
    ASSERT_EQ(bscat_model_predict(loaded, xs.data(), m, d, mean2.data(), nullptr), BSCAT_OK);
    EXPECT_EQ(mean, mean2);
    bscat_model_free(loaded);
    bscat_model_free(model);
    fs::remove(file);
}

TEST(CApi, TrivialMetricsAnchor) {
    std::mt19937_64 rng(1);
    const auto train = gaussian(rng, 200);
    const auto test = gaussian(rng, 100);
    bscat_metrics r{};
    ASSERT_EQ(bscat_metrics_trivial(train.data(), train.size(), test.data(), test.size(), &r), BSCAT_OK);
    EXPECT_EQ(r.pi_mu, 3.92);
    EXPECT_EQ(r.pi_sigma, 0.0);
    EXPECT_EQ(r.n_test, 100u);
}

TEST(CApi, FilterbankCheck) {
    Owned report;
    int ok = 0;
    ASSERT_EQ(bscat_filterbank_check(32, 0, 8, 1, &report.s, &ok), BSCAT_OK);
    EXPECT_EQ(ok, 1);
    EXPECT_NE(std::string(report.s).find("\"frame_ok\": true"), std::string::npos) << report.s;
    Owned bad;
    EXPECT_EQ(bscat_filterbank_check(30, 0, 8, 0, &bad.s, &ok), BSCAT_E_INVALID_CONFIG);
    EXPECT_EQ(bad.s, nullptr);
}

TEST(CApi, BoRunProducesTrace) {
    std::mt19937_64 rng(2);
    const std::size_t n = 60, d = 2;
    const auto pool = gaussian(rng, n * d);
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = -(pool[2 * i] * pool[2 * i] + pool[2 * i + 1] * pool[2 * i + 1]);
    bscat_bo_options o;
    bscat_bo_options_default(&o);
    o.n_init = 5;
    o.n_iters = 5;
    o.pool_size = n;
    o.gp_iters = 20;
    o.maximize = 1;
    Owned trace;
    ASSERT_EQ(bscat_bo_run(pool.data(), n, d, values.data(), &o, 0, &trace.s), BSCAT_OK) << bscat_last_error();
    const std::string csv(trace.s);
    std::size_t lines = 0;
    for (char c : csv) lines += c == '\n';
    EXPECT_EQ(lines, 1u + 5u + 5u);  // header, initial design rows, one row per iteration
    o.n_init = 100;
    Owned none;
    EXPECT_NE(bscat_bo_run(pool.data(), n, d, values.data(), &o, 0, &none.s), BSCAT_OK);
}
