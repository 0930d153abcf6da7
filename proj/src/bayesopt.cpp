#include "bscat/bayesopt.hpp"

#include "bscat/error.hpp"
#include "bscat/features.hpp"
#include "bscat/rng.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace bscat {
namespace {

bool better(double a, double b, Direction d) { return d == Direction::minimize ? a < b : a > b; }

struct Campaign {
    std::vector<std::size_t> pool;  // candidate rows
    std::vector<std::size_t> init;  // positions into `pool`
    double optimum = 0.0;
};

Campaign prepare(const Eigen::MatrixXd& features, const Oracle& oracle, const BOConfig& cfg) {
    const auto rows = static_cast<std::size_t>(features.rows());
    cfg.validate(rows);
    Campaign c;
    const std::size_t p = std::min(cfg.pool_size, rows);
    if (p == rows) {
        c.pool.resize(rows);
        for (std::size_t i = 0; i < rows; ++i) c.pool[i] = i;
    } else {
        Rng rng = make_rng(cfg.seed, "bo.pool");
        c.pool = sample_without_replacement(rng, rows, p);
        std::sort(c.pool.begin(), c.pool.end());
    }
    Rng rng = make_rng(cfg.seed, "bo.init");
    c.init = sample_without_replacement(rng, p, cfg.n_init);

    c.optimum = oracle(c.pool.front());
    for (std::size_t idx : c.pool) {
        const double v = oracle(idx);
        if (!std::isfinite(v)) {
            fail(ErrorCode::non_finite_input, "oracle returned a non-finite value at pool row " +
                                                  std::to_string(idx));
        }
        if (better(v, c.optimum, cfg.direction)) c.optimum = v;
    }
    return c;
}

class TraceBuilder {
public:
    TraceBuilder(double optimum, Direction d) {
        trace_.pool_optimum = optimum;
        trace_.direction = d;
    }

    void add(std::size_t iteration, std::size_t index, double value) {
        if (trace_.records.empty() || better(value, best_, trace_.direction)) best_ = value;
        trace_.records.push_back(
            {iteration, index, value, best_, std::abs(trace_.pool_optimum - best_)});
    }

    BOTrace finish() {
        trace_.check_invariants();
        return std::move(trace_);
    }

private:
    BOTrace trace_;
    double best_ = 0.0;
};

}  // namespace

std::string to_string(Direction d) { return d == Direction::minimize ? "minimize" : "maximize"; }

Direction parse_direction(const std::string& text) {
    if (text == "minimize" || text == "min") return Direction::minimize;
    if (text == "maximize" || text == "max") return Direction::maximize;
    fail(ErrorCode::invalid_argument, "unknown direction '" + text + "'");
}

void BOConfig::validate(std::size_t pool_rows) const {
    const std::size_t p = std::min(pool_size, pool_rows);
    if (n_init < 1) fail(ErrorCode::invalid_config, "BO needs at least one initial point");
    if (refit_every < 1) fail(ErrorCode::invalid_config, "refit_every must be >= 1");
    if (pool_rows == 0) fail(ErrorCode::pool_exhausted, "candidate pool is empty");
    if (n_init + n_iters > p) {
        fail(ErrorCode::pool_exhausted, "budget " + std::to_string(n_init) + " + " +
                                            std::to_string(n_iters) + " exceeds pool size " +
                                            std::to_string(p));
    }
}

double BOTrace::final_regret() const { return records.empty() ? 0.0 : records.back().regret; }

double BOTrace::initial_regret() const {
    double r = records.empty() ? 0.0 : records.front().regret;
    for (const auto& rec : records) {
        if (rec.iteration != 0) break;
        r = rec.regret;
    }
    return r;
}

std::string BOTrace::to_csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "iteration,index,value,best,regret\n";
    for (const auto& r : records) {
        out << r.iteration << ',' << r.index << ',' << r.value << ',' << r.best << ',' << r.regret
            << '\n';
    }
    return out.str();
}

void BOTrace::check_invariants() const {
    std::unordered_set<std::size_t> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!seen.insert(r.index).second) {
            fail(ErrorCode::internal, "pool row " + std::to_string(r.index) + " queried twice");
        }
        if (r.regret < 0.0) fail(ErrorCode::internal, "negative simple regret");
        if (i > 0) {
            const auto& p = records[i - 1];
            if (better(p.best, r.best, direction) || r.regret > p.regret) {
                fail(ErrorCode::internal, "best-so-far is not monotone at record " + std::to_string(i));
            }
        }
    }
}

Eigen::VectorXd expected_improvement(const PredictiveDistribution& pred, double best,
                                     Direction direction) {
    const boost::math::normal_distribution<double> unit;
    Eigen::VectorXd ei(pred.size());
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
        const double gain = direction == Direction::minimize ? best - pred.mean(i) : pred.mean(i) - best;
        const double var = std::max(pred.variance(i), 0.0);
        const double sd = std::sqrt(var);
        if (!(sd > 0.0)) {
            ei(i) = std::max(gain, 0.0);
            continue;
        }
        const double z = gain / sd;
        ei(i) = std::max(0.0, sd * (z * boost::math::cdf(unit, z) + boost::math::pdf(unit, z)));
    }
    return ei;
}

BOTrace run_bo(const Eigen::MatrixXd& pool_features, const Oracle& oracle, const BOConfig& cfg) {
    const Campaign c = prepare(pool_features, oracle, cfg);
    const auto p = static_cast<Eigen::Index>(c.pool.size());

    Eigen::MatrixXd x(p, pool_features.cols());
    for (Eigen::Index i = 0; i < p; ++i) x.row(i) = pool_features.row(static_cast<Eigen::Index>(c.pool[i]));
    if (cfg.standardize_pool) x = FeatureStandardizer::fit(x).transform(x);

    TraceBuilder trace(c.optimum, cfg.direction);
    std::vector<bool> observed(c.pool.size(), false);
    std::vector<std::size_t> seen;
    std::vector<double> values;
    auto observe = [&](std::size_t iteration, std::size_t pos) {
        const double v = oracle(c.pool[pos]);
        observed[pos] = true;
        seen.push_back(pos);
        values.push_back(v);
        trace.add(iteration, c.pool[pos], v);
    };
    for (std::size_t pos : c.init) observe(0, pos);

    OptimizerConfig opt;
    opt.iterations = cfg.gp_iterations;
    opt.learning_rate = cfg.gp_learning_rate;
    GPState gp;
    for (std::size_t it = 1; it <= cfg.n_iters; ++it) {
        Eigen::MatrixXd xo(static_cast<Eigen::Index>(seen.size()), x.cols());
        for (std::size_t k = 0; k < seen.size(); ++k) {
            xo.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(seen[k]));
        }
        const Eigen::VectorXd yo = Eigen::Map<const Eigen::VectorXd>(
            values.data(), static_cast<Eigen::Index>(values.size()));
        if ((it - 1) % cfg.refit_every == 0 || seen.size() < 2) {
            opt.seed = derive_seed(cfg.seed, "bo.gp", it);
            if (seen.size() >= 2) {
                gp = gp_fit(xo, yo, cfg.kernel, opt);
            } else {
                // A single observation carries no lengthscale information.
                KernelSpec prior = cfg.kernel;
                prior.init_lengthscales(1.0, static_cast<std::size_t>(x.cols()));
                gp = gp_condition(xo, yo, prior, std::log(opt.initial_noise_variance));
            }
        } else {
            gp = gp_condition(xo, yo, gp.spec, gp.log_noise_variance);
        }

        const double best = *std::min_element(values.begin(), values.end(), [&](double a, double b) {
            return better(a, b, cfg.direction);
        });
        const PredictiveDistribution pred = gp_predict(gp, x);
        const Eigen::VectorXd ei = expected_improvement(pred, best, cfg.direction);
        std::size_t pick = c.pool.size();
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t pos = 0; pos < c.pool.size(); ++pos) {
            if (observed[pos]) continue;
            const double e = ei(static_cast<Eigen::Index>(pos));
            if (e > top) {  // strict: the lowest index wins ties
                top = e;
                pick = pos;
            }
        }
        if (pick == c.pool.size()) fail(ErrorCode::pool_exhausted, "no unobserved candidates left");
        observe(it, pick);
    }
    return trace.finish();
}

BOTrace random_search(const Eigen::MatrixXd& pool_features, const Oracle& oracle,
                      const BOConfig& cfg) {
    const Campaign c = prepare(pool_features, oracle, cfg);
    TraceBuilder trace(c.optimum, cfg.direction);
    std::vector<bool> observed(c.pool.size(), false);
    for (std::size_t pos : c.init) {
        observed[pos] = true;
        trace.add(0, c.pool[pos], oracle(c.pool[pos]));
    }
    std::vector<std::size_t> rest;
    for (std::size_t pos = 0; pos < c.pool.size(); ++pos) {
        if (!observed[pos]) rest.push_back(pos);
    }
    Rng rng = make_rng(cfg.seed, "bo.random-search");
    const auto order = sample_without_replacement(rng, rest.size(), cfg.n_iters);
    for (std::size_t it = 0; it < order.size(); ++it) {
        const std::size_t pos = rest[order[it]];
        trace.add(it + 1, c.pool[pos], oracle(c.pool[pos]));
    }
    return trace.finish();
}

}  // namespace bscat
