#pragma once

#include <cstdint>
#include <random>

namespace qedlab {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stream key for (master seed, replicate, lane). Distinct triples give
// unrelated engine states; the same triple always gives the same stream.
inline std::uint64_t stream_key(std::uint64_t master, std::uint64_t replicate, std::uint64_t lane = 0)
{
    std::uint64_t k = splitmix64(master);
    k = splitmix64(k ^ (replicate * 0xd1b54a32d192ed03ULL));
    k = splitmix64(k ^ (lane * 0x8cb92ba72f3d8dd7ULL));
    return k;
}

inline Engine make_engine(std::uint64_t master, std::uint64_t replicate, std::uint64_t lane = 0)
{
    std::seed_seq seq{static_cast<std::uint32_t>(stream_key(master, replicate, lane)),
                      static_cast<std::uint32_t>(stream_key(master, replicate, lane) >> 32),
                      static_cast<std::uint32_t>(lane)};
    return Engine(seq);
}

// Uniform on the open interval (0,1), 53 random bits.
inline double uniform_open(Engine& eng)
{
    return (static_cast<double>(eng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace qedlab
