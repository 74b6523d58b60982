#include "school/common.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <thread>

namespace school {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u = 0.0;
    do {
        u = uniform();
    } while (u <= 0.0);
    const double v = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u));
    const double angle = 2.0 * M_PI * v;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::vector<std::uint64_t> Rng::state() const {
    std::uint64_t spare_bits = 0;
    static_assert(sizeof(spare_bits) == sizeof(spare_));
    std::memcpy(&spare_bits, &spare_, sizeof(spare_));
    return {state_[0], state_[1], state_[2], state_[3], has_spare_ ? 1u : 0u, spare_bits};
}

void Rng::restore(const std::vector<std::uint64_t>& words) {
    if (words.size() != 6) throw std::invalid_argument("Rng::restore: expected 6 state words");
    for (int i = 0; i < 4; ++i) state_[i] = words[static_cast<std::size_t>(i)];
    has_spare_ = words[4] != 0;
    std::memcpy(&spare_, &words[5], sizeof(spare_));
}

int thread_budget() {
    if (const char* env = std::getenv("SCHOOL_THREADS")) {
        const int requested = std::atoi(env);
        if (requested >= 1) return requested;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace school
