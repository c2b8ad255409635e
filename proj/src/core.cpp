#include <cstdlib>
#include <string>

#include "x2ct/errors.hpp"
#include "x2ct/precision.hpp"
#include "x2ct/rng.hpp"

namespace x2ct {

namespace {

std::string join_keys(const std::vector<std::string>& keys) {
    std::string out = "invalid config keys:";
    for (const auto& k : keys) out += " " + k;
    return out;
}

Precision g_precision = Precision::working;

}  // namespace

ValidationError::ValidationError(std::vector<std::string> keys)
    : std::runtime_error(join_keys(keys)), keys_(std::move(keys)) {}

Precision precision_from_env() {
    const char* env = std::getenv("X2CT_PRECISION");
    if (env == nullptr) return Precision::working;
    const std::string v(env);
    if (v.empty() || v == "working") return Precision::working;
    if (v == "high") return Precision::high;
    throw InvalidArgument("X2CT_PRECISION must be 'working' or 'high', got '" + v + "'");
}

void set_precision(Precision p) {
    g_precision = p;
    torch::set_default_dtype(p == Precision::high ? caffe2::TypeMeta::Make<double>()
                                                  : caffe2::TypeMeta::Make<float>());
}

Precision current_precision() { return g_precision; }

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t SeedSplitter::seed(std::string_view stream, std::uint64_t counter) const {
    // FNV-1a over the stream name, mixed with root and counter.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : stream) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(root_ ^ h) + counter);
}

torch::Generator SeedSplitter::generator(std::string_view stream, std::uint64_t counter) const {
    return make_generator(seed(stream, counter));
}

torch::Generator make_generator(std::uint64_t seed) {
    return at::make_generator<at::CPUGeneratorImpl>(seed);
}

}  // namespace x2ct
