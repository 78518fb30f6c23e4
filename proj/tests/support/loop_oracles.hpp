#pragma once

// Brute-force reference implementations: plain nested loops over flat
// row-major buffers in double, written from the textbook definitions and
// sharing no code with the engine.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace leafvit::oracle {

using Vec = std::vector<double>;

/// x[B,Cin,H,W], w[Cout,Cin/g,k,k] -> [B,Cout,H',W'].
Vec conv2d(const Vec& x, std::size_t b, std::size_t cin, std::size_t h, std::size_t w, const Vec& weight,
           std::size_t cout, std::size_t k, const Vec* bias, std::size_t stride, std::size_t pad, std::size_t groups,
           std::size_t& out_h, std::size_t& out_w);

/// [m,k]·[k,n].
Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n);

/// Train mode uses biased batch statistics and returns the updated running
/// stats through rm/rv (unbiased variance, momentum 0.1); eval uses rm/rv.
Vec batch_norm(const Vec& x, std::size_t b, std::size_t c, std::size_t hw, const Vec& gamma, const Vec& beta,
               Vec& rm, Vec& rv, bool train, double eps = 1e-5, double momentum = 0.1);

/// x is [B, C, S] (channels_first) or [B, S, C] (channels_last).
Vec group_norm(const Vec& x, std::size_t b, std::size_t c, std::size_t s, std::size_t groups, const Vec& gamma,
               const Vec& beta, bool channels_last, double eps = 1e-5);

/// tokens [R, k, d]; wi [d,1], bi [1], wk/wv/wo [d,d], bk/bv/bo [d].
Vec separable_attention(const Vec& x, std::size_t r, std::size_t k, std::size_t d, const Vec& wi, double bi,
                        const Vec& wk, const Vec& bk, const Vec& wv, const Vec& bv, const Vec& wo, const Vec& bo);

/// softmax(q·kᵀ/√d)·v over [n,d] inputs. `macs` receives the multiply-
/// accumulates of the two n×n products (2·n²·d).
Vec quadratic_attention(const Vec& q, const Vec& k, const Vec& v, std::size_t n, std::size_t d,
                        std::uint64_t& macs);

}  // namespace leafvit::oracle
