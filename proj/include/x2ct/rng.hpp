#pragma once

#include <cstdint>
#include <string_view>

#include <torch/torch.h>

namespace x2ct {

// Derives independent, reproducible seeds from one experiment seed.
// Streams are addressed by name ("data", "t", "eps", "z", "init", ...) and an
// optional counter such as the training step.
class SeedSplitter {
public:
    explicit SeedSplitter(std::uint64_t root) : root_(root) {}

    std::uint64_t root() const { return root_; }
    std::uint64_t seed(std::string_view stream, std::uint64_t counter = 0) const;
    torch::Generator generator(std::string_view stream, std::uint64_t counter = 0) const;

private:
    std::uint64_t root_;
};

std::uint64_t splitmix64(std::uint64_t x);
torch::Generator make_generator(std::uint64_t seed);

}  // namespace x2ct
