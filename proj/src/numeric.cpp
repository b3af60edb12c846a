#include "twostage/numeric.hpp"

#include "twostage/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

namespace twostage {

double pairwise_sum(std::span<const double> values) {
    constexpr std::size_t kBlock = 32;
    if (values.size() <= kBlock) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

std::int64_t ceil_count(double x) {
    const double nearest = std::round(x);
    if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, std::abs(x))) {
        return static_cast<std::int64_t>(nearest);
    }
    return static_cast<std::int64_t>(std::ceil(x));
}

double normal_critical_value(double confidence_level) {
    if (!(confidence_level > 0.0 && confidence_level < 1.0)) {
        throw InputError("confidence level must lie in (0, 1)");
    }
    const boost::math::normal standard;
    return boost::math::quantile(standard, 0.5 + confidence_level / 2.0);
}

std::string format_double(double value) {
    std::array<char, 64> buf{};
    const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) return "nan";
    return std::string(buf.data(), end);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(splitmix64(master) ^ stream) + index);
}

} // namespace twostage
