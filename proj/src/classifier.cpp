#include "calrecall/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

#include "calrecall/error.hpp"
#include "calrecall/text_io.hpp"

namespace calrecall {

namespace {

constexpr double kMarginClamp = 30.0;
constexpr std::string_view kModelHeader = "calrecall-model 1";

/// log(1 + exp(a)) without overflow.
double softplus(double a)
{
    return a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
}

std::size_t required_dim(FeatureRef x)
{
    std::size_t dim = x.sparse.empty() ? 0 : std::size_t{x.sparse.indices.back()} + 1;
    if (!x.dense.empty()) {
        dim = std::max(dim, std::size_t{x.dense_offset} + x.dense.size());
    }
    return dim;
}

}  // namespace

TrainMode parse_train_mode(std::string_view name)
{
    if (name == "scratch") {
        return TrainMode::scratch;
    }
    if (name == "incremental") {
        return TrainMode::incremental;
    }
    throw ConfigError("mode", "expected scratch or incremental, got '" + std::string(name) + "'");
}

std::string_view to_string(TrainMode m)
{
    return m == TrainMode::scratch ? "scratch" : "incremental";
}

void TrainConfig::validate() const
{
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw ConfigError("lambda", "must be > 0");
    }
    if (epochs < 1) {
        throw ConfigError("epochs", "must be >= 1");
    }
}

double Model::margin(FeatureRef x) const
{
    double sum = 0.0;
    const std::size_t n = weights_.size();
    for (std::size_t i = 0; i < x.sparse.size(); ++i) {
        const std::size_t idx = x.sparse.indices[i];
        if (idx < n) {
            sum += weights_[idx] * x.sparse.weights[i];
        }
    }
    if (!x.dense.empty() && x.dense_offset < n) {
        const std::size_t len = std::min(x.dense.size(), n - x.dense_offset);
        const double* w = weights_.data() + x.dense_offset;
        for (std::size_t j = 0; j < len; ++j) {
            sum += w[j] * static_cast<double>(x.dense[j]);
        }
    }
    return sum + bias_;
}

double Model::l2_norm() const
{
    double sum = 0.0;
    for (double w : weights_) {
        sum += w * w;
    }
    return std::sqrt(sum);
}

void Model::set_weight(std::size_t i, double w)
{
    if (i >= weights_.size()) {
        weights_.resize(i + 1, 0.0);
    }
    weights_[i] = w;
}

Model train(std::span<const LabeledExample> examples, const TrainConfig& config, const Model* prior, Rng& rng)
{
    config.validate();
    if (examples.empty()) {
        throw std::invalid_argument("train: no examples");
    }
    Model model;
    if (config.mode == TrainMode::incremental) {
        if (prior == nullptr) {
            throw std::invalid_argument("train: incremental mode requires a prior model");
        }
        model = *prior;
    }
    std::size_t dim = model.weights_.size();
    for (const auto& ex : examples) {
        dim = std::max(dim, required_dim(ex.features));
    }
    model.weights_.resize(dim, 0.0);

    // w = scale * v, so the L2 shrink of every step is one multiply
    std::vector<double>& v = model.weights_;
    double scale = 1.0;
    const double lambda = config.lambda;

    std::vector<std::uint32_t> order(examples.size());
    for (unsigned epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0U);
        rng.shuffle(std::span(order));
        for (std::uint32_t k : order) {
            const auto& ex = examples[k];
            const FeatureRef& x = ex.features;
            const double y = ex.positive ? 1.0 : -1.0;
            const double t = static_cast<double>(++model.steps_);
            const double eta = 1.0 / (lambda * t);

            double wx = 0.0;
            for (std::size_t i = 0; i < x.sparse.size(); ++i) {
                wx += v[x.sparse.indices[i]] * x.sparse.weights[i];
            }
            for (std::size_t j = 0; j < x.dense.size(); ++j) {
                wx += v[x.dense_offset + j] * static_cast<double>(x.dense[j]);
            }
            const double z = scale * wx + model.bias_;
            // -dLoss/dz
            const double g = y * sigmoid(-y * z);

            const double shrink = 1.0 - 1.0 / t;
            if (shrink <= 0.0) {
                std::fill(v.begin(), v.end(), 0.0);
                scale = 1.0;
            } else {
                scale *= shrink;
                if (scale < 1e-100) {
                    for (double& w : v) {
                        w *= scale;
                    }
                    scale = 1.0;
                }
            }
            const double coef = eta * g / scale;
            for (std::size_t i = 0; i < x.sparse.size(); ++i) {
                v[x.sparse.indices[i]] += coef * x.sparse.weights[i];
            }
            for (std::size_t j = 0; j < x.dense.size(); ++j) {
                v[x.dense_offset + j] += coef * static_cast<double>(x.dense[j]);
            }
            model.bias_ += eta * g;
        }
    }
    if (scale != 1.0) {
        for (double& w : v) {
            w *= scale;
        }
    }
    return model;
}

Model train(std::span<const LabeledExample> examples, const TrainConfig& config, const Model* prior)
{
    Rng rng(config.seed);
    return train(examples, config, prior, rng);
}

double sigmoid(double z)
{
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double score(const Model& model, FeatureRef x)
{
    return sigmoid(std::clamp(model.margin(x), -kMarginClamp, kMarginClamp));
}

FeatureRef sparse_part(FeatureRef x)
{
    return {x.sparse, {}, 0};
}

FeatureRef dense_part(FeatureRef x)
{
    return {{}, x.dense, 0};
}

double score_dual(const Model& sparse_model, const Model& dense_model, FeatureRef x)
{
    if (x.dense.empty()) {
        throw std::invalid_argument("score_dual: feature vector has no dense part");
    }
    return score(sparse_model, sparse_part(x)) + score(dense_model, dense_part(x));
}

LossGradient loss_and_gradient(const Model& model, const LabeledExample& example, double lambda)
{
    const FeatureRef& x = example.features;
    const double y = example.positive ? 1.0 : -1.0;
    const double z = model.margin(x);

    LossGradient out;
    const double reg = 0.5 * lambda * model.l2_norm() * model.l2_norm();
    out.loss = softplus(-y * z) + reg;
    // dLoss/dz
    const double dz = -y * sigmoid(-y * z);
    out.bias = dz;

    // x as a flat sorted list of (index, value)
    std::vector<std::pair<std::size_t, double>> xs;
    for (std::size_t i = 0; i < x.sparse.size(); ++i) {
        xs.emplace_back(x.sparse.indices[i], x.sparse.weights[i]);
    }
    for (std::size_t j = 0; j < x.dense.size(); ++j) {
        xs.emplace_back(std::size_t{x.dense_offset} + j, static_cast<double>(x.dense[j]));
    }
    std::sort(xs.begin(), xs.end());

    const auto w = model.weights();
    std::size_t k = 0;
    const std::size_t dim = std::max(w.size(), xs.empty() ? 0 : xs.back().first + 1);
    for (std::size_t i = 0; i < dim; ++i) {
        double grad = lambda * model.weight(i);
        if (k < xs.size() && xs[k].first == i) {
            grad += dz * xs[k].second;
            ++k;
        }
        if (grad != 0.0) {
            out.weights.push_back(static_cast<std::uint32_t>(i), grad);
        }
    }
    return out;
}

void write_model(const Model& model, std::ostream& out)
{
    out << kModelHeader << '\n';
    out << "dim " << model.dim() << '\n';
    out << "steps " << model.steps_taken() << '\n';
    out << "bias " << format_double(model.bias()) << '\n';
    const auto w = model.weights();
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] != 0.0) {
            out << i << '\t' << format_double(w[i]) << '\n';
        }
    }
}

Model read_model(std::istream& in, std::string_view source_name)
{
    const std::string source(source_name);
    std::string line;
    std::size_t number = 0;
    auto next = [&](std::string_view what) -> std::string {
        if (!std::getline(in, line)) {
            throw ParseError(source, number + 1, "missing " + std::string(what));
        }
        ++number;
        return line;
    };
    if (next("header") != kModelHeader) {
        throw ParseError(source, number, "unsupported model header '" + line + "'");
    }
    auto field = [&](std::string_view key) -> std::string_view {
        next(key);
        std::string_view view(line);
        if (view.substr(0, key.size()) != key || view.size() <= key.size() || view[key.size()] != ' ') {
            throw ParseError(source, number, "expected '" + std::string(key) + " <value>'");
        }
        return view.substr(key.size() + 1);
    };
    auto dim = parse_int(field("dim"));
    if (!dim || *dim < 0) {
        throw ParseError(source, number, "bad dim");
    }
    Model model(static_cast<std::size_t>(*dim));
    auto steps = parse_int(field("steps"));
    if (!steps || *steps < 0) {
        throw ParseError(source, number, "bad steps");
    }
    model.set_steps(static_cast<std::uint64_t>(*steps));
    auto bias = parse_double(field("bias"));
    if (!bias) {
        throw ParseError(source, number, "bad bias");
    }
    model.set_bias(*bias);
    long long last = -1;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) {
            continue;
        }
        auto parts = split(line, '\t');
        auto index = parts.size() == 2 ? parse_int(parts[0]) : std::nullopt;
        auto weight = parts.size() == 2 ? parse_double(parts[1]) : std::nullopt;
        if (!index || !weight || *index <= last || *index >= *dim || !std::isfinite(*weight)) {
            throw ParseError(source, number, "bad weight line '" + line + "'");
        }
        model.set_weight(static_cast<std::size_t>(*index), *weight);
        last = *index;
    }
    return model;
}

void save_model(const Model& model, const std::filesystem::path& path)
{
    auto out = open_for_write(path);
    write_model(model, out);
}

Model load_model(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return read_model(in, path.string());
}

}  // namespace calrecall
