#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "calrecall/embeddings.hpp"
#include "calrecall/featurize.hpp"
#include "calrecall/rng.hpp"

namespace calrecall {

enum class TrainMode { scratch, incremental };

TrainMode parse_train_mode(std::string_view name);
std::string_view to_string(TrainMode m);

struct TrainConfig {
    /// L2 strength; the step size at global step t is 1 / (lambda * t).
    double lambda = 1e-4;
    unsigned epochs = 5;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::scratch;

    void validate() const;
};

enum class Provenance : std::uint8_t { human_judgment, synthetic_seed, pseudo_negative };

struct LabeledExample {
    FeatureRef features;
    bool positive = false;
    Provenance provenance = Provenance::human_judgment;
};

/// Linear model w.x + b. Feature indices beyond dim() have weight zero.
class Model {
  public:
    Model() = default;
    explicit Model(std::size_t dim) : weights_(dim, 0.0) {}

    std::size_t dim() const { return weights_.size(); }
    std::span<const double> weights() const { return weights_; }
    double weight(std::size_t i) const { return i < weights_.size() ? weights_[i] : 0.0; }
    double bias() const { return bias_; }
    std::uint64_t steps_taken() const { return steps_; }

    /// w.x + b, summing the sparse part before the dense part.
    double margin(FeatureRef x) const;
    double l2_norm() const;

    void set_weight(std::size_t i, double w);
    void set_bias(double b) { bias_ = b; }
    void set_steps(std::uint64_t steps) { steps_ = steps; }

    friend bool operator==(const Model&, const Model&) = default;

  private:
    friend Model train(std::span<const LabeledExample>, const TrainConfig&, const Model*, Rng&);

    std::vector<double> weights_;
    double bias_ = 0.0;
    std::uint64_t steps_ = 0;
};

/// Minimizes sum log(1 + exp(-y (w.x + b))) + lambda/2 |w|^2 by SGD: each
/// epoch shuffles the examples with `rng` and takes one step per example.
/// Scratch mode starts from zero and ignores `prior`; incremental mode
/// continues from `prior`, including its step count.
Model train(std::span<const LabeledExample> examples, const TrainConfig& config, const Model* prior, Rng& rng);

/// As above with a generator seeded from config.seed.
Model train(std::span<const LabeledExample> examples, const TrainConfig& config, const Model* prior = nullptr);

double sigmoid(double z);

/// sigmoid(w.x + b) with the linear form clamped to [-30, 30].
double score(const Model& model, FeatureRef x);

/// E4: sparse model on the sparse part plus dense model on the dense part.
/// The dense model indexes the dense block from zero.
double score_dual(const Model& sparse_model, const Model& dense_model, FeatureRef x);

FeatureRef sparse_part(FeatureRef x);
FeatureRef dense_part(FeatureRef x);

struct LossGradient {
    double loss = 0.0;
    /// d loss / d w over every coordinate where it is nonzero, by index.
    SparseVector weights;
    double bias = 0.0;
};

LossGradient loss_and_gradient(const Model& model, const LabeledExample& example, double lambda);

/// Versioned text snapshot: header, dim, steps, bias, then nonzero weights
/// as `index<TAB>weight` sorted by index. Round-trips bit-exactly.
void write_model(const Model& model, std::ostream& out);
Model read_model(std::istream& in, std::string_view source = "model");
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace calrecall
