#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace school {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Error hierarchy. The CLI maps these onto exit codes.

/// Operand shapes do not conform.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Malformed or missing input file.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input parses but violates a data-model invariant.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Inconsistent or out-of-range configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operation invoked in the wrong state (e.g. backward without forward).
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Non-finite values or numerically singular quantities.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Rank-deficient input to the orthogonal layer.
struct RankError : NumericalError {
    RankError(const std::string& what, double condition)
        : NumericalError(what), condition_estimate(condition) {}
    double condition_estimate;
};

/// Small deterministic generator. Distributions are implemented here rather
/// than through <random> so that streams are identical across standard
/// libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        // splitmix64 to fill the xoshiro state
        for (auto& word : state_) {
            seed += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = seed;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            word = z ^ (z >> 31);
        }
        has_spare_ = false;
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

    double normal();

    /// Serialized state, used by checkpoints and TrainState snapshots.
    std::vector<std::uint64_t> state() const;
    void restore(const std::vector<std::uint64_t>& words);

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4]{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Number of worker threads for row-parallel kernels, read from
/// SCHOOL_THREADS (default: hardware concurrency, at least 1).
int thread_budget();

bool all_finite(const Matrix& m);

}  // namespace school
