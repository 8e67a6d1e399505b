#pragma once

#include <string>
#include <vector>

#include "msgv/tensor.hpp"

namespace msgv {

// (3,H,W) in [-1,1] -> binary PPM (P6, 8-bit).
void write_ppm(const std::string& path, const Tensor& frame);

// Tiles rows x cols frames (all same shape, given in row-major grid order)
// into one PPM with a 1-pixel separator.
void write_ppm_grid(const std::string& path, const std::vector<Tensor>& frames,
                    std::size_t rows, std::size_t cols);

// (H,W) -> binary PGM (P5, 8-bit), min-max normalized over the image.
void write_pgm(const std::string& path, const Tensor& image);

}  // namespace msgv
